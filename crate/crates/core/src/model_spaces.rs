//! The Gaussian soliton and the round cylinders `S^ℓ × R^{n−ℓ}`, with their
//! weighted quadratures, level-set rules for `b = 2√f`, polynomial Galerkin
//! bases and the space `𝒦` of quadratic Jacobi potentials.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chart_geometry::{Chart, MetricFamily, Patch, Topology, WeightFamily};
use crate::error::{Error, Result};
use crate::poly::Poly;
use crate::quadrature::{gauss_hermite_quarter, unit_sphere, unit_sphere_area};
use crate::weighted_calculus::{FieldExpr, Measure, Quadrature, Rank};

/// Largest `|φ|` tolerated when a model is built.
const MODEL_PHI_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Gaussian { n: usize },
    Cylinder { ell: usize, n: usize },
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Gaussian { n } => write!(f, "gaussian:{n}"),
            ModelKind::Cylinder { ell, n } => write!(f, "cylinder:{ell},{n}"),
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    /// `gaussian:2` or `cylinder:2,3`.
    fn from_str(s: &str) -> Result<ModelKind> {
        let bad = || Error::Parse(format!("model descriptor `{s}`"));
        let (name, args) = s.trim().split_once(':').ok_or_else(bad)?;
        let nums: Vec<usize> = args.split(',').map(|a| a.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?;
        match (name, nums.as_slice()) {
            ("gaussian", [n]) => Ok(ModelKind::Gaussian { n: *n }),
            ("cylinder", [ell, n]) => Ok(ModelKind::Cylinder { ell: *ell, n: *n }),
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModelGeometry {
    pub kind: ModelKind,
    /// Chart in the lower stereographic patch for cylinders.
    pub chart: Arc<Chart>,
    pub sphere_radius: Option<f64>,
}

pub fn make_gaussian(n: usize) -> Result<ModelGeometry> {
    if n == 0 {
        return Err(Error::Precondition("dimension must be at least 1".into()));
    }
    let chart = Chart::new(n, Topology::Box, vec![(-100.0, 100.0); n], MetricFamily::Euclidean, WeightFamily::Quadratic {
        skip: 0,
        offset: 0.0,
    });
    let m = ModelGeometry { kind: ModelKind::Gaussian { n }, chart: Arc::new(chart), sphere_radius: None };
    m.verify()?;
    Ok(m)
}

/// `S^ℓ` of radius `√(2(ℓ−1))` times `R^{n−ℓ}`, with `f = |x|²/4 + ℓ/2`.
pub fn make_cylinder(ell: usize, n: usize) -> Result<ModelGeometry> {
    if ell < 2 {
        return Err(Error::Precondition(format!("sphere factor S^{ell} carries no positive Einstein metric")));
    }
    if n <= ell {
        return Err(Error::Precondition(format!("cylinder needs n > ell, got n = {n}, ell = {ell}")));
    }
    let radius = (2.0 * (ell as f64 - 1.0)).sqrt();
    let mut bounds = vec![(-10.0, 10.0); ell];
    bounds.extend(vec![(-100.0, 100.0); n - ell]);
    let chart = Chart::new(
        n,
        Topology::SphereProduct,
        bounds,
        MetricFamily::SphereProduct { ell, radius, patch: Patch::Lower },
        WeightFamily::Quadratic { skip: ell, offset: ell as f64 / 2.0 },
    );
    let m = ModelGeometry { kind: ModelKind::Cylinder { ell, n }, chart: Arc::new(chart), sphere_radius: Some(radius) };
    m.verify()?;
    Ok(m)
}

pub fn make_model(kind: ModelKind) -> Result<ModelGeometry> {
    match kind {
        ModelKind::Gaussian { n } => make_gaussian(n),
        ModelKind::Cylinder { ell, n } => make_cylinder(ell, n),
    }
}

impl ModelGeometry {
    fn verify(&self) -> Result<()> {
        let n = self.dim();
        for s in 0..4 {
            let x: Vec<f64> = (0..n).map(|i| 0.7 * ((s * n + i) as f64 * 1.3).sin() * (1 + s) as f64).collect();
            let geom = self.chart.geom_at(&x, 2)?;
            let phi = geom.phi.max_abs();
            if phi > MODEL_PHI_TOL {
                return Err(Error::Precondition(format!("model {} has |phi| = {phi:e} at {x:?}", self.kind)));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.chart.dim
    }

    /// Dimension `ℓ` of the sphere factor (zero for the Gaussian).
    pub fn ell(&self) -> usize {
        self.chart.sphere_dim()
    }

    pub fn euclid_dim(&self) -> usize {
        self.dim() - self.ell()
    }

    /// Number of ambient coordinates `(z, x)` used by polynomial fields.
    pub fn ambient_dim(&self) -> usize {
        self.chart.ambient_dim()
    }

    /// Index of the Euclidean coordinate `x_i` among the ambient coordinates.
    pub fn euclid_index(&self, i: usize) -> usize {
        match self.kind {
            ModelKind::Gaussian { .. } => i,
            ModelKind::Cylinder { ell, .. } => ell + 1 + i,
        }
    }

    /// Index of `x_i` among the chart coordinates.
    pub fn euclid_chart_index(&self, i: usize) -> usize {
        self.ell() + i
    }

    /// The polynomial `x_i` in ambient variables.
    pub fn x(&self, i: usize) -> Poly {
        Poly::var(self.ambient_dim(), self.euclid_index(i))
    }

    /// Lifts a polynomial in the Euclidean variables to ambient variables.
    pub fn lift(&self, p: &Poly) -> Poly {
        let map: Vec<usize> = (0..self.euclid_dim()).map(|i| self.euclid_index(i)).collect();
        p.remap(self.ambient_dim(), &map)
    }

    pub fn chart_for(&self, patch: Patch) -> Arc<Chart> {
        match &self.chart.metric {
            MetricFamily::SphereProduct { ell, radius, patch: p } if *p != patch => {
                let mut c = (*self.chart).clone();
                c.metric = MetricFamily::SphereProduct { ell: *ell, radius: *radius, patch };
                Arc::new(c)
            }
            _ => self.chart.clone(),
        }
    }

    pub fn f_at(&self, x: &[f64]) -> Result<f64> {
        self.chart.weight_value(x)
    }

    pub fn b_at(&self, x: &[f64]) -> Result<f64> {
        Ok(2.0 * self.f_at(x)?.max(0.0).sqrt())
    }

    /// Closed form of `∫ e^{−f} dV`.
    pub fn weighted_mass(&self) -> f64 {
        let m = self.euclid_dim() as f64;
        let gauss = (4.0 * PI).powf(m / 2.0);
        match (self.kind, self.sphere_radius) {
            (ModelKind::Cylinder { ell, .. }, Some(rho)) => {
                unit_sphere_area(ell) * rho.powi(ell as i32) * (-(ell as f64) / 2.0).exp() * gauss
            }
            _ => gauss,
        }
    }

    /// Chart point and patch for an ambient point on the model.
    pub fn locate(&self, z: &[f64]) -> (Patch, Vec<f64>) {
        let ell = self.ell();
        if ell == 0 {
            return (Patch::Lower, z.to_vec());
        }
        let patch = if z[ell] <= 0.0 { Patch::Lower } else { Patch::Upper };
        (patch, self.chart_for(patch).from_ambient(z))
    }

    fn from_ambient_nodes(&self, amb: Vec<Vec<f64>>, weights: Vec<f64>, measure: Measure, degree: usize) -> Quadrature {
        let mut nodes = Vec::with_capacity(amb.len());
        let mut patches = Vec::new();
        for z in &amb {
            let (p, x) = self.locate(z);
            nodes.push(x);
            if self.ell() > 0 {
                patches.push(p);
            }
        }
        Quadrature { nodes, patches, weights, measure, exact_degree: Some(degree) }
    }

    /// Weighted rule (`e^{−f} dV` folded into the weights) exact for ambient polynomials of degree ≤ `degree`.
    pub fn quadrature(&self, degree: usize) -> Quadrature {
        let m = self.euclid_dim();
        let (t, w) = gauss_hermite_quarter(degree / 2 + 1);
        let mut amb: Vec<Vec<f64>> = vec![vec![]];
        let mut wts = vec![1.0];
        if let (ModelKind::Cylinder { ell, .. }, Some(rho)) = (self.kind, self.sphere_radius) {
            let (sn, sw) = unit_sphere(ell, degree);
            let scale = rho.powi(ell as i32) * (-(ell as f64) / 2.0).exp();
            amb = sn.iter().map(|p| p.iter().map(|v| v * rho).collect()).collect();
            wts = sw.iter().map(|w| w * scale).collect();
        }
        for _ in 0..m {
            let mut na = Vec::with_capacity(amb.len() * t.len());
            let mut nw = Vec::with_capacity(na.capacity());
            for (p, pw) in amb.iter().zip(&wts) {
                for (ti, wi) in t.iter().zip(&w) {
                    let mut q = p.clone();
                    q.push(*ti);
                    na.push(q);
                    nw.push(pw * wi);
                }
            }
            amb = na;
            wts = nw;
        }
        self.from_ambient_nodes(amb, wts, Measure::Weighted, degree)
    }

    /// Rule on `{b = r}` whose weights include `|∇b| dA` (no `e^{−f}`).
    pub fn level_set_quad(&self, r: f64, degree: usize) -> Result<Quadrature> {
        let ell = self.ell();
        let m = self.euclid_dim();
        let s2 = r * r - 2.0 * ell as f64;
        if !(r > 0.0) || (ell > 0 && !(s2 > 0.0)) {
            return Err(Error::Precondition(format!("level r = {r} lies below the minimum of b on {}", self.kind)));
        }
        let s = s2.sqrt();
        let grad_b = s / r;
        let (en, ew): (Vec<Vec<f64>>, Vec<f64>) = if m == 1 {
            (vec![vec![-s], vec![s]], vec![1.0, 1.0])
        } else {
            let (un, uw) = unit_sphere(m - 1, degree);
            (
                un.iter().map(|p| p.iter().map(|v| v * s).collect()).collect(),
                uw.iter().map(|w| w * s.powi(m as i32 - 1)).collect(),
            )
        };
        let (sn, sw): (Vec<Vec<f64>>, Vec<f64>) = match self.sphere_radius {
            Some(rho) => {
                let (un, uw) = unit_sphere(ell, degree);
                (
                    un.iter().map(|p| p.iter().map(|v| v * rho).collect()).collect(),
                    uw.iter().map(|w| w * rho.powi(ell as i32)).collect(),
                )
            }
            None => (vec![vec![]], vec![1.0]),
        };
        let mut amb = Vec::with_capacity(sn.len() * en.len());
        let mut wts = Vec::with_capacity(amb.capacity());
        for (p, pw) in sn.iter().zip(&sw) {
            for (q, qw) in en.iter().zip(&ew) {
                let mut z = p.clone();
                z.extend_from_slice(q);
                amb.push(z);
                wts.push(pw * qw * grad_b);
            }
        }
        Ok(self.from_ambient_nodes(amb, wts, Measure::LevelSet { r }, degree))
    }

    /// Translation `∂_{x_i}`.
    pub fn translation(&self, i: usize) -> FieldExpr {
        let a = self.ambient_dim();
        let mut comps = vec![Poly::zero(a); self.dim()];
        comps[self.euclid_chart_index(i)] = Poly::constant(a, 1.0);
        FieldExpr::poly_vector(comps)
    }

    /// Rotation `x_j ∂_{x_i} − x_i ∂_{x_j}` in the Euclidean factor.
    pub fn rotation(&self, i: usize, j: usize) -> FieldExpr {
        let a = self.ambient_dim();
        let mut comps = vec![Poly::zero(a); self.dim()];
        comps[self.euclid_chart_index(i)] = self.x(j);
        comps[self.euclid_chart_index(j)] = self.x(i).scale(-1.0);
        FieldExpr::poly_vector(comps)
    }

    /// Gradient of a polynomial in the Euclidean factor, as a vector field.
    pub fn euclid_gradient(&self, u: &Poly) -> FieldExpr {
        let a = self.ambient_dim();
        let mut comps = vec![Poly::zero(a); self.dim()];
        for i in 0..self.euclid_dim() {
            comps[self.euclid_chart_index(i)] = u.deriv(self.euclid_index(i));
        }
        FieldExpr::poly_vector(comps)
    }
}

/// `Δp − ½ x·∇p` on flat space with `f = |x|²/4`, on polynomials.
pub fn ou_poly(p: &Poly) -> Poly {
    let n = p.nvars();
    let mut out = Poly::zero(n);
    for v in 0..n {
        let d = p.deriv(v);
        out = &out + &d.deriv(v);
        out = &out - &(&Poly::var(n, v) * &d).scale(0.5);
    }
    out
}

/// Weighted Gaussian mean `∫ p e^{−|x|²/4} / ∫ e^{−|x|²/4}` of a polynomial, from moments.
pub fn gaussian_mean(p: &Poly) -> f64 {
    // E x^{2k} = 2^k (2k−1)!! for variance 2
    let moment = |k: u8| -> f64 {
        if k % 2 == 1 {
            return 0.0;
        }
        let half = k as i32 / 2;
        (1..=half).map(|j| 2.0 * (2 * j - 1) as f64).product()
    };
    p.terms().map(|(e, c)| c * e.iter().map(|&k| moment(k)).product::<f64>()).sum()
}

/// Basis of `𝒦 ⊂ L²(R^m, e^{−|x|²/4})`: `x_i² − 2` then `x_i x_j` (`i < j`).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KBasis {
    pub m: usize,
    pub elems: Vec<Poly>,
}

pub fn k_basis(m: usize) -> Result<KBasis> {
    if m == 0 {
        return Err(Error::Precondition("K needs at least one Euclidean direction".into()));
    }
    let mut elems = Vec::new();
    for i in 0..m {
        let x = Poly::var(m, i);
        elems.push(&(&x * &x) - &Poly::constant(m, 2.0));
    }
    for i in 0..m {
        for j in i + 1..m {
            elems.push(&Poly::var(m, i) * &Poly::var(m, j));
        }
    }
    for v in &elems {
        let r = &ou_poly(v) + v;
        if r.max_coeff() > 1e-12 {
            return Err(Error::Precondition(format!("K element {v} is not an eigenfunction")));
        }
    }
    Ok(KBasis { m, elems })
}

impl KBasis {
    pub fn len(&self) -> usize {
        self.elems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elems.is_empty()
    }

    /// `Σ c_i v_i`.
    pub fn combine(&self, c: &[f64]) -> Poly {
        self.elems.iter().zip(c).fold(Poly::zero(self.m), |acc, (v, ci)| &acc + &v.scale(*ci))
    }
}

/// Frame direction of a raw basis element.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dir {
    Scalar,
    /// Along the chart coordinate `∂_i`.
    Coord(usize),
    /// `(dx_i ⊗ dx_j + dx_j ⊗ dx_i) / √2` for `i ≠ j`, `dx_i ⊗ dx_i` for `i = j`.
    Pair(usize, usize),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RawElem {
    /// Scalar factor in ambient coordinates.
    pub poly: Poly,
    pub dir: Dir,
}

impl RawElem {
    pub fn expr(&self, n: usize) -> FieldExpr {
        combine_raw(n, std::slice::from_ref(self), &[1.0])
    }
}

fn combine_raw(n: usize, raw: &[RawElem], c: &[f64]) -> FieldExpr {
    let a = raw[0].poly.nvars();
    match raw[0].dir {
        Dir::Scalar => FieldExpr::poly(raw.iter().zip(c).fold(Poly::zero(a), |acc, (e, ci)| &acc + &e.poly.scale(*ci))),
        Dir::Coord(_) => {
            let mut comps = vec![Poly::zero(a); n];
            for (e, ci) in raw.iter().zip(c) {
                if let Dir::Coord(i) = e.dir {
                    comps[i] = &comps[i] + &e.poly.scale(*ci);
                }
            }
            FieldExpr::poly_vector(comps)
        }
        Dir::Pair(..) => {
            let mut comps = vec![Poly::zero(a); n * n];
            for (e, ci) in raw.iter().zip(c) {
                if let Dir::Pair(i, j) = e.dir {
                    if i == j {
                        comps[i * n + i] = &comps[i * n + i] + &e.poly.scale(*ci);
                    } else {
                        let p = e.poly.scale(ci * std::f64::consts::FRAC_1_SQRT_2);
                        comps[i * n + j] = &comps[i * n + j] + &p;
                        comps[j * n + i] = &comps[j * n + i] + &p;
                    }
                }
            }
            FieldExpr::poly_sym(comps)
        }
    }
}

/// A weighted-orthonormal Galerkin basis: raw polynomial elements and the
/// transform whose columns give orthonormal combinations of them.
#[derive(Clone, Debug)]
pub struct PolyVectorBasis {
    pub rank: Rank,
    pub chart: Arc<Chart>,
    pub model: ModelKind,
    pub degree: usize,
    pub raw: Vec<RawElem>,
    /// `raw.len() × len()`.
    pub transform: DMatrix<f64>,
    /// `max |Gram − I|` after orthonormalization.
    pub gram_error: f64,
    /// Rule used for assembly (exact through degree `2·degree + 2`).
    pub quadrature: Quadrature,
}

/// Hermite-orthonormal products `Π He_{α_v}(x_v/√2) / √(2√π α_v!)` of total degree ≤ `d`.
fn hermite_products(m: usize, d: usize) -> Vec<(Vec<usize>, Poly)> {
    let mut out = Vec::new();
    let mut alpha = vec![0usize; m];
    fn rec(v: usize, left: usize, alpha: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if v == alpha.len() {
            out.push(alpha.clone());
            return;
        }
        for k in 0..=left {
            alpha[v] = k;
            rec(v + 1, left - k, alpha, out);
        }
        alpha[v] = 0;
    }
    let mut all = Vec::new();
    rec(0, d, &mut alpha, &mut all);
    all.sort_by_key(|a| (a.iter().sum::<usize>(), std::cmp::Reverse(a.clone())));
    for a in all {
        let mut p = Poly::constant(m, 1.0);
        for (v, &k) in a.iter().enumerate() {
            let fact: f64 = (1..=k).map(|j| j as f64).product();
            let norm = (2.0 * PI.sqrt() * fact).sqrt();
            p = &p * &Poly::hermite(m, v, k).scale(1.0 / norm);
        }
        out.push((a, p));
    }
    out
}

/// Monomials of total degree ≤ `d` in `m` variables.
fn monomials(m: usize, d: usize) -> Vec<Poly> {
    let mut out = Vec::new();
    let mut e = vec![0u8; m];
    fn rec(v: usize, left: usize, e: &mut Vec<u8>, m: usize, out: &mut Vec<Poly>) {
        if v == m {
            out.push(Poly::monomial(m, e, 1.0));
            return;
        }
        for k in 0..=left {
            e[v] = k as u8;
            rec(v + 1, left - k, e, m, out);
        }
        e[v] = 0;
    }
    rec(0, d, &mut e, m, &mut out);
    out
}

impl PolyVectorBasis {
    /// Hermite basis on the Gaussian (or the Euclidean factor of a cylinder, constant on the sphere).
    pub fn hermite(model: &ModelGeometry, rank: Rank, d: usize) -> Result<PolyVectorBasis> {
        let m = model.euclid_dim();
        let scalars: Vec<Poly> = hermite_products(m, d).into_iter().map(|(_, p)| model.lift(&p)).collect();
        Self::build(model, rank, d, scalars, false)
    }

    /// Cylinder scalars `z^β ψ_α(x)` with `|β| ≤ sphere_degree`, `|α| ≤ d`, orthonormalized
    /// (the relation `|z|² = ρ²` makes the raw set dependent; dependent directions are dropped).
    pub fn cylinder(model: &ModelGeometry, rank: Rank, sphere_degree: usize, d: usize) -> Result<PolyVectorBasis> {
        let ell = model.ell();
        if ell == 0 {
            return Err(Error::Precondition("cylinder basis on a model without a sphere factor".into()));
        }
        let a = model.ambient_dim();
        let zmap: Vec<usize> = (0..=ell).collect();
        let zs: Vec<Poly> = monomials(ell + 1, sphere_degree).iter().map(|p| p.remap(a, &zmap)).collect();
        let hs: Vec<Poly> = hermite_products(model.euclid_dim(), d).into_iter().map(|(_, p)| model.lift(&p)).collect();
        let mut scalars = Vec::new();
        for z in &zs {
            for h in &hs {
                scalars.push(z * h);
            }
        }
        Self::build(model, rank, d + sphere_degree, scalars, true)
    }

    fn build(model: &ModelGeometry, rank: Rank, d: usize, scalars: Vec<Poly>, reduce: bool) -> Result<PolyVectorBasis> {
        let n = model.dim();
        let ell = model.ell();
        let mut raw = Vec::new();
        match rank {
            Rank::Scalar => raw.extend(scalars.iter().map(|p| RawElem { poly: p.clone(), dir: Dir::Scalar })),
            Rank::Vector => {
                for p in &scalars {
                    for i in ell..n {
                        raw.push(RawElem { poly: p.clone(), dir: Dir::Coord(i) });
                    }
                }
            }
            Rank::Sym2 => {
                for p in &scalars {
                    for i in ell..n {
                        for j in i..n {
                            raw.push(RawElem { poly: p.clone(), dir: Dir::Pair(i, j) });
                        }
                    }
                }
            }
        }
        if ell > 0 && rank != Rank::Scalar {
            // directions are Euclidean only; sphere tangent fields are not represented
        }
        let q = model.quadrature(2 * d + 2);
        let mut basis = PolyVectorBasis {
            rank,
            chart: model.chart.clone(),
            model: model.kind,
            degree: d,
            raw,
            transform: DMatrix::identity(0, 0),
            gram_error: 0.0,
            quadrature: q,
        };
        let vals = basis.raw_values(None)?;
        let gram = basis.raw_gram(&vals, &vals);
        let k = gram.nrows();
        let ident_err = (&gram - DMatrix::identity(k, k)).amax();
        basis.transform = if !reduce && ident_err < 1e-10 {
            DMatrix::identity(k, k)
        } else {
            let eig = crate::linalg::symmetric_eigen(&gram);
            let top = eig.eigenvalues.max();
            let keep: Vec<usize> = (0..k).filter(|&i| eig.eigenvalues[i] > 1e-10 * top).collect();
            let mut t = DMatrix::zeros(k, keep.len());
            for (c, &i) in keep.iter().enumerate() {
                let s = 1.0 / eig.eigenvalues[i].sqrt();
                for r in 0..k {
                    t[(r, c)] = eig.eigenvectors[(r, i)] * s;
                }
            }
            t
        };
        let g2 = basis.transform.transpose() * &gram * &basis.transform;
        basis.gram_error = (&g2 - DMatrix::identity(g2.nrows(), g2.nrows())).amax();
        if basis.gram_error > 1e-8 {
            return Err(Error::Precondition(format!("basis Gram drift {:e}", basis.gram_error)));
        }
        Ok(basis)
    }

    pub fn len(&self) -> usize {
        self.transform.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Field `Σ c_j b_j`.
    pub fn combine(&self, c: &[f64]) -> FieldExpr {
        let raw_c = &self.transform * nalgebra::DVector::from_column_slice(c);
        combine_raw(self.chart.dim, &self.raw, raw_c.as_slice())
    }

    /// The `j`-th orthonormal element.
    pub fn element(&self, j: usize) -> FieldExpr {
        let mut c = vec![0.0; self.len()];
        c[j] = 1.0;
        self.combine(&c)
    }

    /// Component values of every raw element (optionally with an operator applied) at every node:
    /// `out[elem][node]`.
    pub fn raw_values(&self, op: Option<crate::weighted_calculus::Op>) -> Result<Vec<Vec<Vec<f64>>>> {
        let q = &self.quadrature;
        let charts = crate::weighted_calculus::patch_charts(&self.chart, q);
        let n = self.chart.dim;
        let exprs: Vec<FieldExpr> = self
            .raw
            .iter()
            .map(|e| match op {
                Some(o) => FieldExpr::apply(o, e.expr(n)),
                None => e.expr(n),
            })
            .collect();
        let depth = exprs.iter().map(|e| e.depth()).max().unwrap_or(0);
        let per_node: Vec<Vec<Vec<f64>>> = (0..q.len())
            .into_par_iter()
            .map(|i| {
                let c = &charts[if q.patches.is_empty() { 0 } else { crate::weighted_calculus::patch_index(q.patches[i]) }];
                let x = &q.nodes[i];
                let geom = c.geom_at(x, depth.max(2))?;
                exprs.iter().map(|e| Ok(e.eval_with(c, Some(&geom), x, 0)?.value())).collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let k = self.raw.len();
        Ok((0..k).map(|e| per_node.iter().map(|row| row[e].clone()).collect()).collect())
    }

    /// Inverse metric at every node (identity blocks skipped for scalars).
    fn node_inverse_metrics(&self) -> Vec<DMatrix<f64>> {
        let q = &self.quadrature;
        let charts = crate::weighted_calculus::patch_charts(&self.chart, q);
        (0..q.len())
            .map(|i| {
                let c = &charts[if q.patches.is_empty() { 0 } else { crate::weighted_calculus::patch_index(q.patches[i]) }];
                c.metric_value(&q.nodes[i]).ok().and_then(|g| g.try_inverse()).unwrap_or_else(|| DMatrix::identity(c.dim, c.dim))
            })
            .collect()
    }

    /// `⟨a_i, b_j⟩` weighted, for values from [`PolyVectorBasis::raw_values`] of equal rank.
    pub fn raw_gram(&self, a: &[Vec<Vec<f64>>], b: &[Vec<Vec<f64>>]) -> DMatrix<f64> {
        let q = &self.quadrature;
        let n = self.chart.dim;
        let comps = a.first().and_then(|e| e.first()).map(|v| v.len()).unwrap_or(1);
        let gis = if comps > 1 { self.node_inverse_metrics() } else { Vec::new() };
        // weighted, metric-raised copy of a at each node
        let raised: Vec<Vec<Vec<f64>>> = a
            .par_iter()
            .map(|elem| {
                elem.iter()
                    .enumerate()
                    .map(|(node, v)| {
                        let w = q.weights[node];
                        if comps == 1 {
                            return vec![w * v[0]];
                        }
                        let gi = &gis[node];
                        if comps == n {
                            (0..n).map(|i| w * (0..n).map(|j| gi[(i, j)] * v[j]).sum::<f64>()).collect()
                        } else {
                            let mut out = vec![0.0; n * n];
                            for i in 0..n {
                                for j in 0..n {
                                    let mut s = 0.0;
                                    for k in 0..n {
                                        for l in 0..n {
                                            s += gi[(i, k)] * gi[(j, l)] * v[k * n + l];
                                        }
                                    }
                                    out[i * n + j] = w * s;
                                }
                            }
                            out
                        }
                    })
                    .collect()
            })
            .collect();
        let rows = a.len();
        let cols = b.len();
        let entries: Vec<f64> = (0..rows * cols)
            .into_par_iter()
            .map(|t| {
                let (i, j) = (t / cols, t % cols);
                raised[i].iter().zip(&b[j]).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>()).sum()
            })
            .collect();
        DMatrix::from_row_slice(rows, cols, &entries)
    }

    /// Galerkin matrix `⟨b_i, A b_j⟩` in the orthonormal basis, given raw values of `A b_j`.
    pub fn project(&self, base: &[Vec<Vec<f64>>], image: &[Vec<Vec<f64>>]) -> DMatrix<f64> {
        let m = self.raw_gram(base, image);
        self.transform.transpose() * m * &self.transform
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descriptors_parse() {
        assert_eq!("gaussian:2".parse::<ModelKind>().unwrap(), ModelKind::Gaussian { n: 2 });
        assert_eq!("cylinder:2,3".parse::<ModelKind>().unwrap(), ModelKind::Cylinder { ell: 2, n: 3 });
        assert!("cylinder:2".parse::<ModelKind>().is_err());
        assert_eq!(ModelKind::Cylinder { ell: 2, n: 3 }.to_string(), "cylinder:2,3");
    }

    #[test]
    fn gaussian_model_basics() {
        let m = make_gaussian(2).unwrap();
        assert_eq!(m.b_at(&[3.0, 4.0]).unwrap(), 5.0);
        let geom = m.chart.geom_at(&[3.0, 4.0], 2).unwrap();
        assert!(geom.phi.max_abs() < 1e-14);
        let m1 = make_gaussian(1).unwrap();
        assert!((m1.quadrature(4).total() - 2.0 * PI.sqrt()).abs() < 1e-12);
        assert!((m1.weighted_mass() - 2.0 * PI.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn cylinder_model_basics() {
        let m = make_cylinder(2, 3).unwrap();
        assert!((m.f_at(&[0.0, 0.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);
        let geom = m.chart.geom_at(&[0.3, -0.2, 1.5], 2).unwrap();
        // S restricted to the sphere block
        let gi = geom.gi.value();
        let ric = geom.ric.value();
        let s_n: f64 = (0..2).flat_map(|a| (0..2).map(move |b| (a, b))).map(|(a, b)| gi[a * 3 + b] * ric[a * 3 + b]).sum();
        assert!((s_n - 1.0).abs() < 1e-12);
        let q = m.quadrature(6);
        assert!((q.total() / m.weighted_mass() - 1.0).abs() < 1e-12);
        assert!(make_cylinder(1, 3).is_err());
    }

    #[test]
    fn level_sets() {
        let g = make_gaussian(2).unwrap();
        let q = g.level_set_quad(1.0, 8).unwrap();
        assert!((q.total() - 2.0 * PI).abs() < 1e-12);
        let c = make_cylinder(2, 3).unwrap();
        let q = c.level_set_quad(3.0, 6).unwrap();
        for (x, p) in q.nodes.iter().zip(&q.patches) {
            assert!((x[2].abs() - 5f64.sqrt()).abs() < 1e-12);
            let z = c.chart_for(*p).ambient(x);
            assert!(((z[0] * z[0] + z[1] * z[1] + z[2] * z[2]) - 2.0).abs() < 1e-12);
        }
        // |S^2_rho| * 2 points * |grad b|
        let expect = 4.0 * PI * 2.0 * 2.0 * 5f64.sqrt() / 3.0;
        assert!((q.total() - expect).abs() < 1e-10);
        assert!(c.level_set_quad(2.0, 4).is_err());
    }

    #[test]
    fn k_basis_elements() {
        let k1 = k_basis(1).unwrap();
        assert_eq!(k1.elems, vec![Poly::parse("x1^2 - 2", 1).unwrap()]);
        assert!(gaussian_mean(&k1.elems[0]).abs() < 1e-15);
        let k2 = k_basis(2).unwrap();
        assert_eq!(k2.len(), 3);
        assert_eq!(k2.elems[2], Poly::parse("x1*x2", 2).unwrap());
    }

    #[test]
    fn hermite_basis_is_orthonormal() {
        let m = make_gaussian(2).unwrap();
        for rank in [Rank::Scalar, Rank::Vector, Rank::Sym2] {
            let b = PolyVectorBasis::hermite(&m, rank, 4).unwrap();
            assert!(b.gram_error < 1e-10, "{rank:?}: {}", b.gram_error);
            assert_eq!(b.transform, DMatrix::identity(b.len(), b.len()));
        }
    }

    #[test]
    fn cylinder_basis_drops_dependent_directions() {
        let m = make_cylinder(2, 3).unwrap();
        let b = PolyVectorBasis::cylinder(&m, Rank::Scalar, 2, 1).unwrap();
        // harmonics of degree ≤ 2 on S^2: 1 + 3 + 5, times Hermite degree ≤ 1
        assert_eq!(b.len(), 9 * 2);
        assert!(b.gram_error < 1e-10);
    }
}
