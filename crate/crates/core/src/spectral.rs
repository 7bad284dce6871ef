//! Galerkin matrices of `ℒ`, `𝒫` and `L` on weighted-orthonormal polynomial
//! bases, their eigenpairs, the Poisson solve `𝒫Y = ½ div_f h`, growth
//! profiles on level sets of `b`, and the function spectrum of cylinders.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chart_geometry::MetricFamily;
use crate::error::{Error, Result};
use crate::model_spaces::{Dir, ModelGeometry, PolyVectorBasis};
use crate::weighted_calculus::grid::GridGeometry;
use crate::weighted_calculus::{
    divf_sym2, sample, weighted_inner, weighted_norm, weighted_sobolev_norm, FieldExpr, Grid, GridField, Measure, Op,
    Quadrature, Rank, Repr, TensorField,
};

/// Eigenvalues below this are treated as kernel.
pub const KERNEL_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpTag {
    /// `ℒ`; eigenvalues are reported for `−ℒ`.
    DriftLaplacian,
    P,
    /// `L = ℒ + 2R(·)`; eigenvalues are reported for `−L`.
    L,
}

impl OpTag {
    fn op(self) -> Op {
        match self {
            OpTag::DriftLaplacian => Op::DriftLaplacian,
            OpTag::P => Op::P,
            OpTag::L => Op::L,
        }
    }

    /// Sign turning the assembled matrix into the nonnegative operator whose spectrum is reported.
    fn sign(self) -> f64 {
        match self {
            OpTag::P => 1.0,
            _ => -1.0,
        }
    }
}

impl fmt::Display for OpTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OpTag::DriftLaplacian => "drift",
            OpTag::P => "P",
            OpTag::L => "L",
        })
    }
}

impl FromStr for OpTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<OpTag> {
        match s {
            "drift" | "Lcal" | "ou" => Ok(OpTag::DriftLaplacian),
            "P" | "p" => Ok(OpTag::P),
            "L" => Ok(OpTag::L),
            _ => Err(Error::Parse(format!("unknown operator `{s}` (drift, P, L)"))),
        }
    }
}

/// Orthonormal basis together with its sampled values at the assembly nodes.
#[derive(Clone, Debug)]
pub struct SpectralSpace {
    pub basis: Arc<PolyVectorBasis>,
    base: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug)]
pub struct OperatorMatrix {
    pub op: OpTag,
    pub basis: Arc<PolyVectorBasis>,
    /// `⟨b_i, Op b_j⟩`, symmetrized.
    pub matrix: DMatrix<f64>,
    /// Largest entry of the antisymmetric part before symmetrization.
    pub symmetry_gap: f64,
    /// Largest loss `‖Op b_j‖² − Σ_i M_ij²` (zero when the span is closed under the operator).
    pub closure_defect: f64,
    pub quadrature_degree: Option<usize>,
    /// Gram matrix of `div_f b_j` for vector bases.
    pub divf_gram: Option<DMatrix<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EigenPair {
    pub value: f64,
    pub coeffs: Vec<f64>,
    pub residual: f64,
    pub divf_norm: Option<f64>,
}

impl SpectralSpace {
    pub fn new(basis: PolyVectorBasis) -> Result<SpectralSpace> {
        Self::from_arc(Arc::new(basis))
    }

    pub fn from_arc(basis: Arc<PolyVectorBasis>) -> Result<SpectralSpace> {
        let base = basis.raw_values(None)?;
        Ok(SpectralSpace { basis, base })
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    /// Gram matrix of the basis under the weighted pairing.
    pub fn gram(&self) -> DMatrix<f64> {
        self.basis.project(&self.base, &self.base)
    }

    /// `⟨b_i, A b_j⟩` and `⟨A b_i, A b_j⟩` in the orthonormal basis.
    pub fn image_matrices(&self, op: Op) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let img = self.basis.raw_values(Some(op))?;
        Ok((self.basis.project(&self.base, &img), self.basis.project(&img, &img)))
    }

    pub fn assemble(&self, op: OpTag) -> Result<OperatorMatrix> {
        let want = match op {
            OpTag::P => Rank::Vector,
            OpTag::L => Rank::Sym2,
            OpTag::DriftLaplacian => self.basis.rank,
        };
        if self.basis.rank != want {
            return Err(Error::Rank(format!("{op} acts on {want:?}, basis is {:?}", self.basis.rank)));
        }
        let (m, ii) = self.image_matrices(op.op())?;
        let mt = m.transpose();
        let symmetry_gap = (&m - &mt).amax() * 0.5;
        let matrix = (&m + &mt) * 0.5;
        let k = m.ncols();
        let closure_defect = (0..k)
            .map(|j| {
                let kept: f64 = m.column(j).iter().map(|v| v * v).sum();
                (ii[(j, j)] - kept).abs()
            })
            .fold(0.0, f64::max);
        let divf_gram = if self.basis.rank == Rank::Vector { Some(self.image_matrices(Op::Divf)?.1) } else { None };
        Ok(OperatorMatrix {
            op,
            basis: self.basis.clone(),
            matrix,
            symmetry_gap,
            closure_defect,
            quadrature_degree: self.basis.quadrature.exact_degree,
            divf_gram,
        })
    }

    /// Spectral field with the given coefficients.
    pub fn field(&self, coeffs: &[f64]) -> Result<TensorField> {
        TensorField::spectral(&self.basis, coeffs.to_vec())
    }

    /// Weighted inner products of every basis element with a field, from its values at the assembly nodes.
    pub fn project_values(&self, vals: &[Vec<f64>]) -> DVector<f64> {
        let raw = self.basis.raw_gram(&self.base, &[vals.to_vec()]);
        self.basis.transform.transpose() * raw.column(0)
    }
}

/// Galerkin matrix of a weighted operator on an orthonormal basis.
pub fn assemble(basis: &Arc<PolyVectorBasis>, op: OpTag) -> Result<OperatorMatrix> {
    SpectralSpace::from_arc(basis.clone())?.assemble(op)
}

impl OperatorMatrix {
    /// The nonnegative operator whose spectrum is reported (`−ℒ`, `𝒫` or `−L`).
    pub fn reported(&self) -> DMatrix<f64> {
        &self.matrix * self.op.sign()
    }

    /// Smallest eigenvalue of the reported operator.
    pub fn min_eigenvalue(&self) -> f64 {
        crate::linalg::symmetric_eigen(&self.reported()).eigenvalues.min()
    }

    pub fn divf_norm(&self, c: &DVector<f64>) -> Option<f64> {
        self.divf_gram.as_ref().map(|d| (c.transpose() * d * c)[(0, 0)].max(0.0).sqrt())
    }
}

fn sorted_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = crate::linalg::symmetric_eigen(a);
    let mut idx: Vec<usize> = (0..a.nrows()).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(a.nrows(), idx.len(), |r, c| eig.eigenvectors[(r, idx[c])]);
    (vals, vecs)
}

/// The `k` lowest eigenpairs of the reported operator, ascending.
pub fn eigenpairs(m: &OperatorMatrix, k: usize) -> Result<Vec<EigenPair>> {
    let a = m.reported();
    if k > a.nrows() {
        return Err(Error::Precondition(format!("asked for {k} eigenpairs of a {}-dimensional space", a.nrows())));
    }
    let (vals, vecs) = sorted_eigen(&a);
    Ok((0..k)
        .map(|i| {
            let v = vecs.column(i).into_owned();
            let residual = (&a * &v - &v * vals[i]).norm();
            EigenPair { value: vals[i], coeffs: v.as_slice().to_vec(), residual, divf_norm: m.divf_norm(&v) }
        })
        .collect())
}

pub fn kernel_dimension(pairs: &[EigenPair]) -> usize {
    pairs.iter().filter(|p| p.value.abs() < KERNEL_TOL).count()
}

/// One row per pair: `eigenvalue,residual,divf_norm`.
pub fn eigenpairs_csv(pairs: &[EigenPair]) -> String {
    let mut s = String::from("eigenvalue,residual,divf_norm\n");
    for p in pairs {
        let d = p.divf_norm.map(|d| format!("{d:.12e}")).unwrap_or_default();
        s.push_str(&format!("{:.12e},{:.3e},{}\n", p.value, p.residual, d));
    }
    s
}

/// `max |AB − BA|` for two assembled operators on the same basis.
pub fn commutator_gap(a: &OperatorMatrix, b: &OperatorMatrix) -> f64 {
    (&a.matrix * &b.matrix - &b.matrix * &a.matrix).amax()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MuLambdaPair {
    pub mu: f64,
    pub lambda: f64,
    pub divf_norm: f64,
    pub coeffs: Vec<f64>,
    /// `μ − 2λ ≤ ½ + tol`.
    pub inequality_holds: bool,
    /// `|μ − 2λ − ½| < tol`.
    pub equality: bool,
    pub divergence_free: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MuLambdaReport {
    pub pairs: Vec<MuLambdaPair>,
    pub commutator_gap: f64,
    pub max_excess: f64,
    /// Every pair has `equality ⇔ divergence_free`.
    pub equality_matches_divergence: bool,
}

/// Simultaneous eigenfields of `ℒ` and `𝒫` (`𝒫` diagonalized inside each eigenspace of `−ℒ`).
pub fn check_mu_lambda(lcal: &OperatorMatrix, p: &OperatorMatrix, tol: f64, divf_tol: f64) -> Result<MuLambdaReport> {
    if lcal.op != OpTag::DriftLaplacian || p.op != OpTag::P {
        return Err(Error::Precondition("check_mu_lambda takes the drift Laplacian and P".into()));
    }
    let gap = commutator_gap(lcal, p);
    if gap > 1e-8 {
        return Err(Error::Precondition(format!("drift Laplacian and P do not commute numerically: {gap:e}")));
    }
    let (mus, vecs) = sorted_eigen(&lcal.reported());
    let k = mus.len();
    let mut pairs = Vec::new();
    let mut start = 0;
    while start < k {
        let mut end = start + 1;
        while end < k && (mus[end] - mus[start]).abs() < 1e-6 {
            end += 1;
        }
        let q = vecs.columns(start, end - start).into_owned();
        let mu = mus[start..end].iter().sum::<f64>() / (end - start) as f64;
        let block = q.transpose() * &p.matrix * &q;
        let (lams, w) = sorted_eigen(&((&block + block.transpose()) * 0.5));
        for (i, lam) in lams.iter().enumerate() {
            let v = &q * w.column(i);
            let dn = p.divf_norm(&v).unwrap_or(0.0);
            let excess = mu - 2.0 * lam;
            pairs.push(MuLambdaPair {
                mu,
                lambda: *lam,
                divf_norm: dn,
                coeffs: v.as_slice().to_vec(),
                inequality_holds: excess <= 0.5 + tol,
                equality: (excess - 0.5).abs() < tol,
                divergence_free: dn < divf_tol,
            });
        }
        start = end;
    }
    let max_excess = pairs.iter().map(|p| p.mu - 2.0 * p.lambda).fold(f64::NEG_INFINITY, f64::max);
    let equality_matches_divergence = pairs.iter().all(|p| p.equality == p.divergence_free);
    Ok(MuLambdaReport { pairs, commutator_gap: gap, max_excess, equality_matches_divergence })
}

/// Largest `(‖∇Y‖² + ‖div_f Y‖²) / (2‖Y‖·‖(2𝒫+κ)Y‖)` over the basis elements.
pub fn interpolation_ratio(space: &SpectralSpace) -> Result<f64> {
    let b = &space.basis;
    if b.rank != Rank::Vector {
        return Err(Error::Rank("interpolation bound is for vector fields".into()));
    }
    let kappa = b.chart.kappa;
    let q = &b.quadrature;
    let mut worst: f64 = 0.0;
    for j in 0..b.len() {
        let e = b.element(j);
        let y = TensorField::closed(&b.chart, e.clone())?;
        let w1 = weighted_sobolev_norm(&y, 1, q)?;
        let y0 = weighted_norm(&y, q)?;
        let grad2 = w1 * w1 - y0 * y0;
        let div = TensorField::closed(&b.chart, FieldExpr::apply(Op::Divf, e.clone()))?;
        let d2 = weighted_inner(&div, &div, q)?;
        let tp = TensorField::closed(&b.chart, FieldExpr::apply(Op::P, e.clone()).scaled(2.0).plus(e.scaled(kappa)))?;
        let rhs = 2.0 * y0 * weighted_norm(&tp, q)?;
        worst = worst.max((grad2 + d2) / rhs);
    }
    Ok(worst)
}

/// Eigen-expansion solver for `𝒫Y = ½ div_f h` on a vector basis, with `Y ⊥ ker 𝒫`.
#[derive(Clone, Debug)]
pub struct PSolver {
    pub space: SpectralSpace,
    pub p: OperatorMatrix,
    values: Vec<f64>,
    vectors: DMatrix<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveNorms {
    pub y_w12: f64,
    pub divf_y_w12: f64,
    pub lcal_y: f64,
    pub divf_h: f64,
    /// `(‖Y‖_{W^{1,2}} + ‖div_f Y‖_{W^{1,2}} + ‖ℒY‖) / ‖div_f h‖`.
    pub constant: f64,
}

#[derive(Clone, Debug)]
pub struct SolveRecord {
    pub y: TensorField,
    pub coeffs: Vec<f64>,
    /// `‖div_f(h − 2 div_f* Y)‖`.
    pub residual: f64,
    pub relative_residual: f64,
    /// Largest `|⟨½ div_f h, K⟩|` over unit kernel fields `K`.
    pub kernel_pairing: f64,
    pub norms: Option<SolveNorms>,
}

impl PSolver {
    pub fn new(basis: PolyVectorBasis) -> Result<PSolver> {
        let space = SpectralSpace::new(basis)?;
        let p = space.assemble(OpTag::P)?;
        let (values, vectors) = sorted_eigen(&p.matrix);
        Ok(PSolver { space, p, values, vectors })
    }

    /// Orthonormal coefficient vectors spanning the discrete kernel.
    pub fn kernel(&self) -> Vec<DVector<f64>> {
        (0..self.values.len()).filter(|&i| self.values[i] < KERNEL_TOL).map(|i| self.vectors.column(i).into_owned()).collect()
    }

    /// Applies the pseudo-inverse of `𝒫` to a right-hand side `rhs_i = ⟨b_i, ½ div_f h⟩`.
    /// Returns the coefficients and the largest kernel pairing relative to `|rhs|`.
    pub fn solve_rhs(&self, rhs: &DVector<f64>) -> (DVector<f64>, f64) {
        let mut y = DVector::zeros(rhs.len());
        let mut pairing: f64 = 0.0;
        for (i, &lam) in self.values.iter().enumerate() {
            let v = self.vectors.column(i);
            let c = v.dot(rhs);
            if lam < KERNEL_TOL {
                pairing = pairing.max(c.abs());
            } else {
                y += v * (c / lam);
            }
        }
        (y, pairing)
    }

    /// `rhs_i = ½⟨b_i, div_f h⟩` for a closed or spectral `h`, by exact quadrature.
    pub fn rhs_closed(&self, h: &TensorField) -> Result<DVector<f64>> {
        let d = divf_sym2(h)?;
        let vals = sample(&d, &self.space.basis.quadrature)?;
        Ok(self.space.project_values(&vals) * 0.5)
    }

    /// `rhs_i = ½⟨div_f* b_i, h⟩` for a grid `h`, by the trapezoid rule on the grid.
    pub fn rhs_grid(&self, h: &GridField, geo: &GridGeometry) -> Result<DVector<f64>> {
        let b = &self.space.basis;
        let raw = raw_on_grid(b, &h.grid)?;
        let entries: Vec<f64> = raw
            .par_iter()
            .map(|r| Ok(0.5 * r.divf_star_with(geo)?.weighted_inner_with(h, geo, |_| true)))
            .collect::<Result<_>>()?;
        Ok(b.transform.transpose() * DVector::from_vec(entries))
    }

    /// Solves with a closed or spectral right-hand side and reports the residual and a priori norms.
    pub fn solve(&self, h: &TensorField, with_norms: bool) -> Result<SolveRecord> {
        if let Repr::Grid(_) = h.repr {
            return Err(Error::Representation("use rhs_grid for grid right-hand sides".into()));
        }
        let rhs = self.rhs_closed(h)?;
        let (c, pairing) = self.solve_rhs(&rhs);
        let scale = rhs.norm().max(f64::MIN_POSITIVE);
        if pairing > 1e-8 * scale.max(1.0) {
            return Err(Error::Solvability(format!("div_f h pairs with the kernel of P at {pairing:e}")));
        }
        let b = &self.space.basis;
        let q = &b.quadrature;
        let y_expr = b.combine(c.as_slice());
        let y = self.space.field(c.as_slice())?;
        let dh = divf_sym2(h)?;
        let resid_expr = dh.expr()?.minus(FieldExpr::apply(Op::P, y_expr.clone()).scaled(2.0));
        let resid = TensorField::closed(&b.chart, resid_expr)?;
        let residual = weighted_norm(&resid, q)?;
        let divf_h = weighted_norm(&dh, q)?;
        let relative_residual = if divf_h > 0.0 { residual / divf_h } else { residual };
        let norms = if with_norms {
            let div = TensorField::closed(&b.chart, FieldExpr::apply(Op::Divf, y_expr.clone()))?;
            let lcal = TensorField::closed(&b.chart, FieldExpr::apply(Op::DriftLaplacian, y_expr))?;
            let y_w12 = weighted_sobolev_norm(&y, 1, q)?;
            let divf_y_w12 = weighted_sobolev_norm(&div, 1, q)?;
            let lcal_y = weighted_norm(&lcal, q)?;
            let constant = if divf_h > 0.0 { (y_w12 + divf_y_w12 + lcal_y) / divf_h } else { 0.0 };
            Some(SolveNorms { y_w12, divf_y_w12, lcal_y, divf_h, constant })
        } else {
            None
        };
        Ok(SolveRecord { y, coeffs: c.as_slice().to_vec(), residual, relative_residual, kernel_pairing: pairing / scale, norms })
    }

    /// Coefficients of `Y` projected off the kernel.
    pub fn project_off_kernel(&self, c: &DVector<f64>) -> DVector<f64> {
        let mut out = c.clone();
        for k in self.kernel() {
            out -= &k * k.dot(c);
        }
        out
    }
}

/// `solve_P` on a fresh solver.
pub fn solve_p(h: &TensorField, basis: PolyVectorBasis) -> Result<SolveRecord> {
    PSolver::new(basis)?.solve(h, true)
}

/// Raw basis elements sampled on a grid (lower-index components).
pub fn raw_on_grid(b: &PolyVectorBasis, grid: &Grid) -> Result<Vec<GridField>> {
    let flat = matches!(b.chart.metric, MetricFamily::Euclidean) && b.chart.perturbation.is_none();
    let n = b.chart.dim;
    b.raw
        .par_iter()
        .map(|e| {
            if flat {
                let rank = match e.dir {
                    Dir::Scalar => Rank::Scalar,
                    Dir::Coord(_) => Rank::Vector,
                    Dir::Pair(..) => Rank::Sym2,
                };
                Ok(GridField::from_fn(grid, rank, |x| {
                    let v = e.poly.eval_f64(x);
                    match e.dir {
                        Dir::Scalar => vec![v],
                        Dir::Coord(i) => {
                            let mut c = vec![0.0; n];
                            c[i] = v;
                            c
                        }
                        Dir::Pair(i, j) => {
                            let mut c = vec![0.0; n * n];
                            let s = if i == j { v } else { v * std::f64::consts::FRAC_1_SQRT_2 };
                            c[i * n + j] = s;
                            c[j * n + i] = s;
                            c
                        }
                    }
                }))
            } else {
                GridField::sample(grid, &b.chart, &e.expr(n))
            }
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GrowthProfile {
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    pub window: (f64, f64),
    pub fitted_slope: f64,
    /// Target exponent the slope is compared against, when one applies.
    pub bound: Option<f64>,
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() < 3 {
        return Err(Error::Precondition(format!("slope fit needs at least 3 radii, got {}", x.len())));
    }
    if y.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Precondition("slope fit needs positive values".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / m, ly.iter().sum::<f64>() / m);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    Ok(sxy / sxx)
}

/// `I_Y(r) = r^{1−n} ∫_{b=r} |Y|² |∇b|` at each radius (no `e^{−f}`).
pub fn growth_values(y: &FieldExpr, model: &ModelGeometry, radii: &[f64], degree: usize) -> Result<Vec<f64>> {
    let rank = y.rank()?;
    let n = model.dim() as i32;
    radii
        .iter()
        .map(|&r| {
            let q = model.level_set_quad(r, degree)?;
            let s = level_integral(y, rank, model, &q)?;
            Ok(r.powi(1 - n) * s)
        })
        .collect()
}

fn level_integral(y: &FieldExpr, rank: Rank, model: &ModelGeometry, q: &Quadrature) -> Result<f64> {
    debug_assert!(matches!(q.measure, Measure::LevelSet { .. }));
    let terms: Vec<f64> = (0..q.len())
        .into_par_iter()
        .map(|i| {
            let c = q.chart_for(&model.chart, i);
            let x = &q.nodes[i];
            let v = y.eval(&c, x, 0)?.value();
            Ok(q.weights[i] * crate::weighted_calculus::pointwise_inner(&c, x, rank, &v, &v)?)
        })
        .collect::<Result<_>>()?;
    Ok(terms.iter().sum())
}

/// Growth profile with the slope fitted over radii inside `window`.
pub fn growth_profile(
    y: &FieldExpr,
    model: &ModelGeometry,
    radii: &[f64],
    window: (f64, f64),
    degree: usize,
    bound: Option<f64>,
) -> Result<GrowthProfile> {
    if radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition("radii must be strictly increasing".into()));
    }
    let values = growth_values(y, model, radii, degree)?;
    let (fx, fy): (Vec<f64>, Vec<f64>) =
        radii.iter().zip(&values).filter(|(r, _)| **r >= window.0 - 1e-12 && **r <= window.1 + 1e-12).map(|(r, v)| (*r, *v)).unzip();
    let fitted_slope = log_slope(&fx, &fy)?;
    Ok(GrowthProfile { radii: radii.to_vec(), values, window, fitted_slope, bound })
}

/// Evenly spaced radii covering a window.
pub fn radii_in(window: (f64, f64), count: usize) -> Vec<f64> {
    (0..count).map(|i| window.0 + (window.1 - window.0) * i as f64 / (count - 1) as f64).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ZRecord {
    pub lambda: f64,
    /// `‖𝒫Y − λY‖ / ‖Y‖`.
    pub eigen_residual: f64,
    pub divf_z: f64,
    /// `|‖Y‖² − ‖Z‖² − (λ+κ)^{−2}‖∇div_f Y‖²|`.
    pub pythagoras_gap: f64,
    /// `‖(ℒ+λ)∇div_f Y‖`.
    pub grad_div_relation: f64,
    /// `‖(ℒ+2λ+κ)Z‖`.
    pub z_relation: f64,
    pub y_norm: f64,
    pub z_norm: f64,
    pub grad_div_norm: f64,
}

/// `∇ div_f Y` and `Z = Y + (λ+κ)^{−1} ∇ div_f Y`.
pub fn z_fields(y: &FieldExpr, lambda: f64, kappa: f64) -> Result<(FieldExpr, FieldExpr)> {
    if (lambda + kappa).abs() < 1e-12 {
        return Err(Error::Precondition("lambda = -kappa".into()));
    }
    let gd = FieldExpr::apply(Op::Grad, FieldExpr::apply(Op::Divf, y.clone()));
    let z = y.clone().plus(gd.clone().scaled(1.0 / (lambda + kappa)));
    Ok((gd, z))
}

/// Splits an eigenfield of `𝒫` into `Z` and the gradient part, with all checks.
pub fn z_decompose(y: &FieldExpr, lambda: f64, basis: &PolyVectorBasis) -> Result<ZRecord> {
    let chart = &basis.chart;
    let q = &basis.quadrature;
    let kappa = chart.kappa;
    let yf = TensorField::closed(chart, y.clone())?;
    let y_norm = weighted_norm(&yf, q)?;
    let er = TensorField::closed(chart, FieldExpr::apply(Op::P, y.clone()).minus(y.clone().scaled(lambda)))?;
    let eigen_residual = weighted_norm(&er, q)? / y_norm.max(f64::MIN_POSITIVE);
    if eigen_residual > 1e-6 {
        return Err(Error::Precondition(format!("field is not an eigenfield of P (relative residual {eigen_residual:e})")));
    }
    let (gd, z) = z_fields(y, lambda, kappa)?;
    let zf = TensorField::closed(chart, z.clone())?;
    let gf = TensorField::closed(chart, gd.clone())?;
    let z_norm = weighted_norm(&zf, q)?;
    let grad_div_norm = weighted_norm(&gf, q)?;
    let dz = TensorField::closed(chart, FieldExpr::apply(Op::Divf, z.clone()))?;
    let divf_z = weighted_norm(&dz, q)?;
    let pythagoras_gap = (y_norm * y_norm - z_norm * z_norm - grad_div_norm * grad_div_norm / (lambda + kappa).powi(2)).abs();
    let r1 = TensorField::closed(chart, FieldExpr::apply(Op::DriftLaplacian, gd.clone()).plus(gd.scaled(lambda)))?;
    let r2 = TensorField::closed(chart, FieldExpr::apply(Op::DriftLaplacian, z.clone()).plus(z.scaled(2.0 * lambda + kappa)))?;
    Ok(ZRecord {
        lambda,
        eigen_residual,
        divf_z,
        pythagoras_gap,
        grad_div_relation: weighted_norm(&r1, q)?,
        z_relation: weighted_norm(&r2, q)?,
        y_norm,
        z_norm,
        grad_div_norm,
    })
}

/// Symmetric-definite generalized eigenproblem `A v = μ G v`, ascending; `v` are `G`-orthonormal.
pub fn generalized_eigen(a: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let chol = g.clone().cholesky().ok_or_else(|| Error::NotPositiveDefinite(vec![]))?;
    let l = chol.l();
    let li = l.clone().try_inverse().ok_or_else(|| Error::NotPositiveDefinite(vec![]))?;
    let c = &li * a * li.transpose();
    let (vals, w) = sorted_eigen(&((&c + c.transpose()) * 0.5));
    Ok((vals, li.transpose() * w))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FunctionMode {
    pub mu: f64,
    /// `‖∇v‖²` for the unit-norm eigenfunction.
    pub grad_sq: f64,
    /// `‖Hess v‖²`.
    pub hess_sq: f64,
    /// `|‖Hess v‖² − (μ−½)μ|`.
    pub hessian_gap: f64,
    /// `∫ (v² + |∇v|²) f e^{−f}`.
    pub concentration: f64,
    /// `4μ² + (n+2)μ + n`.
    pub concentration_bound: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GapProbe {
    pub epsilon: f64,
    pub modes: Vec<FunctionMode>,
}

/// Lowest eigenfunctions of `−ℒ` on scalars for the model or for a perturbed metric `g + ε p`.
/// Assembly uses the model's basis and nodes; under a perturbation the nodes are
/// reweighted by the volume ratio and the problem becomes a generalized one.
pub fn function_spectrum(basis: &PolyVectorBasis, count: usize, perturbation: Option<(&FieldExpr, f64)>) -> Result<GapProbe> {
    if basis.rank != Rank::Scalar {
        return Err(Error::Rank("function spectrum needs a scalar basis".into()));
    }
    let mut b = basis.clone();
    let mut epsilon = 0.0;
    if let Some((p, eps)) = perturbation {
        epsilon = eps;
        let base_chart = basis.chart.clone();
        let zero = FieldExpr::Zero(Rank::Scalar);
        let pert = Arc::new(base_chart.perturbed(p.clone(), zero, eps));
        let q = &basis.quadrature;
        let mut w = q.weights.clone();
        for (i, wi) in w.iter_mut().enumerate() {
            let c0 = q.chart_for(&base_chart, i);
            let c1 = q.chart_for(&pert, i);
            let x = &q.nodes[i];
            let d0 = c0.metric_value(x)?.determinant();
            let g1 = c1.metric_value(x)?;
            if g1.clone().cholesky().is_none() {
                return Err(Error::NotPositiveDefinite(x.clone()));
            }
            *wi *= (g1.determinant() / d0).sqrt();
        }
        b.quadrature = Quadrature { weights: w, ..q.clone() };
        b.chart = pert;
    }
    let space = SpectralSpace::new(b)?;
    let gram = space.gram();
    let (lm, _) = space.image_matrices(Op::DriftLaplacian)?;
    let a = (&lm + lm.transpose()) * -0.5;
    let (mus, vecs) = generalized_eigen(&a, &gram)?;
    let (_, hh) = space.image_matrices(Op::Hess)?;
    let (_, gg) = space.image_matrices(Op::Grad)?;
    let n = space.basis.chart.dim as f64;
    let fb = space.basis.raw_values(None)?;
    let q = &space.basis.quadrature;
    let fweights: Vec<f64> =
        (0..q.len()).map(|i| q.chart_for(&space.basis.chart, i).weight_value(&q.nodes[i])).collect::<Result<_>>()?;
    let fq = Quadrature { weights: q.weights.iter().zip(&fweights).map(|(w, f)| w * f).collect(), ..q.clone() };
    let mut fbasis = (*space.basis).clone();
    fbasis.quadrature = fq;
    let fgram = fbasis.project(&fb, &fb);
    let gimg = fbasis.raw_values(Some(Op::Grad))?;
    let fgrad = fbasis.project(&gimg, &gimg);
    let modes = (0..count.min(mus.len()))
        .map(|i| {
            let v = vecs.column(i);
            let quad = |m: &DMatrix<f64>| (v.transpose() * m * v)[(0, 0)];
            let mu = mus[i];
            let hess_sq = quad(&hh);
            FunctionMode {
                mu,
                grad_sq: quad(&gg),
                hess_sq,
                hessian_gap: (hess_sq - (mu - 0.5) * mu).abs(),
                concentration: quad(&fgram) + quad(&fgrad),
                concentration_bound: 4.0 * mu * mu + (n + 2.0) * mu + n,
            }
        })
        .collect();
    Ok(GapProbe { epsilon, modes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_spaces::{make_cylinder, make_gaussian};
    use crate::poly::Poly;

    #[test]
    fn ou_spectrum_in_one_dimension() {
        let m = make_gaussian(1).unwrap();
        let b = PolyVectorBasis::hermite(&m, Rank::Scalar, 3).unwrap();
        let a = assemble(&Arc::new(b), OpTag::DriftLaplacian).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { -(i as f64) / 2.0 } else { 0.0 };
                assert!((a.matrix[(i, j)] - want).abs() < 1e-12, "{i},{j}: {}", a.matrix[(i, j)]);
            }
        }
        assert!(a.symmetry_gap < 1e-12 && a.closure_defect < 1e-10);
    }

    #[test]
    fn p_kernel_on_linear_vectors() {
        let m = make_gaussian(2).unwrap();
        let b = PolyVectorBasis::hermite(&m, Rank::Vector, 1).unwrap();
        let p = assemble(&Arc::new(b), OpTag::P).unwrap();
        let pairs = eigenpairs(&p, 6).unwrap();
        assert_eq!(kernel_dimension(&pairs), 3);
        assert!(pairs[3].value > 0.24);
    }

    #[test]
    fn mu_lambda_examples() {
        let m = make_gaussian(2).unwrap();
        let space = SpectralSpace::new(PolyVectorBasis::hermite(&m, Rank::Vector, 2).unwrap()).unwrap();
        let l = space.assemble(OpTag::DriftLaplacian).unwrap();
        let p = space.assemble(OpTag::P).unwrap();
        let r = check_mu_lambda(&l, &p, 1e-8, 1e-6).unwrap();
        assert!(r.max_excess <= 0.5 + 1e-8);
        assert!(r.equality_matches_divergence);
        // translations: μ = 0, λ = 0, not divergence free
        assert_eq!(r.pairs.iter().filter(|p| p.mu.abs() < 1e-9).count(), 2);
        assert!(r.pairs.iter().filter(|p| p.mu.abs() < 1e-9).all(|p| p.lambda.abs() < 1e-9 && !p.divergence_free));
        // rotation: μ = ½, λ = 0 on the equality branch
        assert!(r.pairs.iter().any(|p| (p.mu - 0.5).abs() < 1e-9 && p.lambda.abs() < 1e-9 && p.equality));
    }

    #[test]
    fn growth_of_rotation_and_translation() {
        let m = make_gaussian(2).unwrap();
        let rot = m.rotation(0, 1);
        let radii = radii_in((4.0, 8.0), 9);
        let g = growth_profile(&rot, &m, &radii, (4.0, 8.0), 6, Some(2.0)).unwrap();
        assert!((g.fitted_slope - 2.0).abs() < 1e-10);
        assert!((g.values[0] - 2.0 * std::f64::consts::PI * 16.0).abs() < 1e-9);
        let t = growth_profile(&m.translation(0), &m, &radii, (4.0, 8.0), 6, None).unwrap();
        assert!(t.fitted_slope.abs() < 1e-10);
        assert!(log_slope(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn z_of_a_gradient_vanishes() {
        let m = make_gaussian(2).unwrap();
        let b = PolyVectorBasis::hermite(&m, Rank::Vector, 3).unwrap();
        let y = m.euclid_gradient(&Poly::parse("x1^2 - 2", 2).unwrap());
        let z = z_decompose(&y, 0.5, &b).unwrap();
        assert!(z.z_norm < 1e-10 && z.divf_z < 1e-10 && z.pythagoras_gap < 1e-9);
        let mixed = y.plus(m.rotation(0, 1));
        assert!(z_decompose(&mixed, 0.5, &b).is_err());
    }

    #[test]
    fn solve_recovers_gauge_generator() {
        let m = make_gaussian(2).unwrap();
        let solver = PSolver::new(PolyVectorBasis::hermite(&m, Rank::Vector, 3).unwrap()).unwrap();
        let w = m.euclid_gradient(&Poly::parse("x1^2 - 2", 2).unwrap());
        let h = TensorField::closed(&m.chart, FieldExpr::apply(Op::DivfStar, w.clone()).scaled(-2.0)).unwrap();
        let rec = solver.solve(&h, true).unwrap();
        assert!(rec.relative_residual < 1e-8);
        // Y = −W
        let gap = TensorField::closed(&m.chart, rec.y.expr().unwrap().plus(w)).unwrap();
        assert!(weighted_norm(&gap, &solver.space.basis.quadrature).unwrap() < 1e-8);
    }

    #[test]
    fn cylinder_function_spectrum() {
        let m = make_cylinder(2, 3).unwrap();
        let b = PolyVectorBasis::cylinder(&m, Rank::Scalar, 2, 2).unwrap();
        let probe = function_spectrum(&b, 6, None).unwrap();
        let mus: Vec<f64> = probe.modes.iter().map(|x| x.mu).collect();
        let want = [0.0, 0.5, 1.0, 1.0, 1.0, 1.0];
        for (a, w) in mus.iter().zip(want) {
            assert!((a - w).abs() < 1e-8, "{mus:?}");
        }
        for md in &probe.modes {
            assert!(md.hessian_gap < 1e-8);
            assert!((md.grad_sq - md.mu).abs() < 1e-8);
            assert!(md.concentration <= md.concentration_bound);
        }
    }
}
