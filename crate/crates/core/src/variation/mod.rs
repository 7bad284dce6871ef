//! Variations of the soliton tensor `φ = κg − Ric − Hess_f` along straight
//! paths `(g + t h, f + t k)`, the block decomposition of symmetric tensors on
//! cylinders, projection onto `𝒦`, the center of mass and the probes built on
//! them.

mod formulas;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::chart_geometry::Chart;
use crate::error::{Error, Result};
use crate::model_spaces::{gaussian_mean, k_basis, ModelGeometry, ModelKind};
use crate::poly::Poly;
use crate::weighted_calculus::{
    patch_charts, patch_index, pointwise_inner, sample, weighted_norm, weighted_sobolev_norm, Block, FieldExpr, Measure,
    Op, Quadrature, Rank, TensorField,
};

pub const DEFAULT_STEP: f64 = 1e-3;
/// Step for second differences; at `1e-3` the truncation `Δt²|∂⁴φ|/12` is about `3e-5` on cylinder Jacobi paths.
pub const SECOND_STEP: f64 = 2.5e-4;

/// A straight path `g + t h`, `f + t k` on a base chart.
#[derive(Clone, Debug)]
pub struct PerturbationPath {
    pub chart: Arc<Chart>,
    pub h: FieldExpr,
    pub k: FieldExpr,
    /// Base step of the centered `t` stencil; every check also runs at half this step.
    pub step: f64,
}

impl PerturbationPath {
    pub fn new(chart: &Arc<Chart>, h: FieldExpr, k: FieldExpr) -> Result<PerturbationPath> {
        if h.rank()? != Rank::Sym2 {
            return Err(Error::Rank("path direction h must be a symmetric 2-tensor".into()));
        }
        if k.rank()? != Rank::Scalar {
            return Err(Error::Rank("path direction k must be a scalar".into()));
        }
        Ok(PerturbationPath { chart: chart.clone(), h, k, step: DEFAULT_STEP })
    }

    pub fn with_step(mut self, step: f64) -> PerturbationPath {
        self.step = step;
        self
    }

    /// `h = v g¹`, `k = (ℓ/2) v` on a cylinder.
    pub fn jacobi(model: &ModelGeometry, v: &Poly) -> Result<PerturbationPath> {
        let ell = cylinder_ell(model)?;
        let h = FieldExpr::metric_block(Block::Sphere, FieldExpr::poly(v.clone()));
        PerturbationPath::new(&model.chart, h, FieldExpr::poly(v.scale(ell as f64 / 2.0)))
    }

    /// `h = −2 div_f* V`, `k = ⟨∇f, V⟩` for `V` with polynomial chart components.
    pub fn pure_gauge(model: &ModelGeometry, comps: Vec<Poly>) -> Result<PerturbationPath> {
        if comps.len() != model.dim() {
            return Err(Error::Rank(format!("{} components for a {}-dimensional model", comps.len(), model.dim())));
        }
        let mut k = Poly::zero(model.ambient_dim());
        for i in 0..model.euclid_dim() {
            k = &k + &(&comps[model.euclid_chart_index(i)] * &model.x(i)).scale(0.5);
        }
        let h = FieldExpr::apply(Op::DivfStar, FieldExpr::poly_vector(comps)).scaled(-2.0);
        PerturbationPath::new(&model.chart, h, FieldExpr::poly(k))
    }

    /// `h = u g`, `k = 0`.
    pub fn conformal(chart: &Arc<Chart>, u: FieldExpr) -> Result<PerturbationPath> {
        PerturbationPath::new(chart, FieldExpr::metric_block(Block::Full, u), FieldExpr::Zero(Rank::Scalar))
    }

    pub fn scaled(&self, a: f64) -> PerturbationPath {
        PerturbationPath { h: self.h.clone().scaled(a), k: self.k.clone().scaled(a), ..self.clone() }
    }

    /// Rescaled so that `|h(x)|_g = 1` (unchanged where `h(x) = 0`).
    pub fn normalized_at(&self, x: &[f64]) -> Result<PerturbationPath> {
        let geom = self.chart.geom_at(x, 2 + self.h.depth())?;
        let h = self.h.eval_with(&self.chart, Some(&geom), x, 0)?;
        let s = geom.inner(&h, &h).value().max(0.0).sqrt();
        Ok(if s > 0.0 { self.scaled(1.0 / s) } else { self.clone() })
    }

    /// The same directions read on another chart of the model.
    pub fn on_chart(&self, chart: &Arc<Chart>) -> PerturbationPath {
        PerturbationPath { chart: chart.clone(), ..self.clone() }
    }

    pub fn chart_at(&self, t: f64) -> Chart {
        self.chart.perturbed(self.h.clone(), self.k.clone(), t)
    }

    /// `w = ½ Tr_g h − k` at `x`.
    pub fn w_at(&self, x: &[f64]) -> Result<f64> {
        let geom = self.chart.geom_at(x, 2 + self.h.depth().max(self.k.depth()))?;
        let h = self.h.eval_with(&self.chart, Some(&geom), x, 0)?;
        let k = self.k.eval_with(&self.chart, Some(&geom), x, 0)?;
        Ok(0.5 * geom.trace(&h, 0, 1).value()[0] - k.value()[0])
    }

    /// Components of `φ` for `(g + t h, f + t k)` at `x`.
    pub fn phi_at(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        phi_of_t(self, t, x)
    }
}

fn cylinder_ell(model: &ModelGeometry) -> Result<usize> {
    match model.kind {
        ModelKind::Cylinder { ell, .. } => Ok(ell),
        ModelKind::Gaussian { .. } => Err(Error::Precondition(format!("{} has no sphere factor", model.kind))),
    }
}

pub fn phi_of_t(path: &PerturbationPath, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    Ok(path.chart_at(t).geom_at(x, 2)?.phi.value())
}

/// Centered FD derivative of `φ` in `t` compared with a closed formula, at two steps.
#[derive(Clone, Debug, Serialize)]
pub struct VariationGap {
    pub step: f64,
    pub formula: Vec<f64>,
    pub fd: Vec<f64>,
    pub fd_half: Vec<f64>,
    /// `max |fd − formula|` at `step` and at `step / 2`.
    pub gap: f64,
    pub gap_half: f64,
    /// `log₂` of the gap ratio on the component best resolved above roundoff.
    pub order: Option<f64>,
    /// Roundoff level of the difference quotient per component, at the half step.
    pub floor: Vec<f64>,
    /// Disagreement between independent routes to the formula (first variation only).
    pub route_gap: Option<f64>,
}

impl VariationGap {
    fn build(step: f64, formula: Vec<f64>, fd: Vec<f64>, fd_half: Vec<f64>, floor: Vec<f64>) -> VariationGap {
        let gaps: Vec<f64> = fd.iter().zip(&formula).map(|(a, b)| (a - b).abs()).collect();
        let halves: Vec<f64> = fd_half.iter().zip(&formula).map(|(a, b)| (a - b).abs()).collect();
        let best = (0..gaps.len())
            .filter(|&c| gaps[c] > floor[c] && halves[c] > 0.0)
            .max_by(|&a, &b| (gaps[a] / floor[a]).total_cmp(&(gaps[b] / floor[b])));
        let order = best.map(|c| (gaps[c] / halves[c]).log2());
        VariationGap {
            step,
            gap: gaps.iter().fold(0.0, |m, v| m.max(*v)),
            gap_half: halves.iter().fold(0.0, |m, v| m.max(*v)),
            formula,
            fd,
            fd_half,
            order,
            floor,
            route_gap: None,
        }
    }

    /// Every component's gap is within roundoff.
    pub fn at_floor(&self) -> bool {
        self.order.is_none()
    }

    /// Second order in the step, or already at roundoff.
    pub fn order_confirmed(&self) -> bool {
        self.at_floor() || self.order.is_some_and(|p| (p - 2.0).abs() < 0.3)
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Roundoff of a `derivs`-th difference quotient of `φ`, per component, from the size
/// of the metric slots that `φ` is assembled from.
fn roundoff(chart: &Chart, x: &[f64], step: f64, derivs: i32) -> Result<Vec<f64>> {
    let g = chart.metric_value(x)?;
    let n = chart.dim;
    Ok((0..n * n)
        .map(|t| {
            let s = (g[(t / n, t / n)] * g[(t % n, t % n)]).abs().sqrt() + 1.0;
            4.0 * f64::EPSILON * s / step.powi(derivs)
        })
        .collect())
}

/// `φ′(0)` by centered differences against `½ Lh + Hess_w + div_f* div_f h`.
///
/// The formula is also assembled from the general variation lemmas
/// (`κh − Ric′ − Hess_f′` and the chart-free `φ′`), reported as `route_gap`.
pub fn first_variation_gap(path: &PerturbationPath, x: &[f64]) -> Result<VariationGap> {
    let formula = formulas::phi_prime_soliton(&path.chart, &path.h, &path.k, x)?;
    let loc = formulas::Local::new(&path.chart, &path.h, &path.k, x)?;
    let pieces: Vec<f64> =
        loc.ricci().iter().zip(loc.hess_f()).zip(&loc.h).map(|((r, hf), h)| loc.kappa * h - r - hf).collect();
    let route_gap = max_diff(&formula, &loc.phi_general()).max(max_diff(&formula, &pieces));
    let d = |s: f64| -> Result<Vec<f64>> {
        let (p, m) = (phi_of_t(path, s, x)?, phi_of_t(path, -s, x)?);
        Ok(p.iter().zip(&m).map(|(a, b)| (a - b) / (2.0 * s)).collect())
    };
    let fd = d(path.step)?;
    let fd_half = d(path.step / 2.0)?;
    let floor = roundoff(&path.chart, x, path.step / 2.0, 1)?;
    let mut r = VariationGap::build(path.step, formula, fd, fd_half, floor);
    r.route_gap = Some(route_gap);
    Ok(r)
}

/// `φ″(0)` along `h = u g¹`, `k = (ℓ/2) u`:
/// `−|∇u|² g¹ − ℓ u Hess_u − (ℓ/2) ∇u ⊗ ∇u`.
pub fn second_variation_formula(chart: &Chart, ell: usize, u: &Poly, x: &[f64]) -> Result<Vec<f64>> {
    let geom = chart.geom_at(x, 2)?;
    let uj = FieldExpr::poly(u.clone()).eval_with(chart, Some(&geom), x, 2)?;
    let du = geom.grad(&uj);
    let grad_sq = geom.inner(&du, &du).value();
    let hess = geom.hess(&uj).value();
    let du = du.value();
    let g = geom.g.value();
    let u0 = uj.value()[0];
    let n = chart.dim;
    let l = ell as f64;
    Ok((0..n * n)
        .map(|t| {
            let (i, j) = (t / n, t % n);
            let g1 = if i < ell && j < ell { g[t] } else { 0.0 };
            -grad_sq * g1 - l * u0 * hess[t] - 0.5 * l * du[i] * du[j]
        })
        .collect())
}

fn euclid_only(model: &ModelGeometry, u: &Poly) -> Result<()> {
    if u.nvars() != model.ambient_dim() {
        return Err(Error::Precondition(format!("u has {} variables, the model {}", u.nvars(), model.ambient_dim())));
    }
    let euclid: Vec<usize> = (0..model.euclid_dim()).map(|i| model.euclid_index(i)).collect();
    for (e, c) in u.terms() {
        if c != 0.0 && e.iter().enumerate().any(|(v, &p)| p > 0 && !euclid.contains(&v)) {
            return Err(Error::Precondition("u must depend on the Euclidean factor only".into()));
        }
    }
    Ok(())
}

/// Second centered difference of `φ` along the Jacobi path of `u` against Prop.-style `φ″`.
pub fn second_variation_gap(model: &ModelGeometry, u: &Poly, x: &[f64], step: f64) -> Result<VariationGap> {
    let ell = cylinder_ell(model)?;
    euclid_only(model, u)?;
    let path = PerturbationPath::jacobi(model, u)?.with_step(step);
    let formula = second_variation_formula(&model.chart, ell, u, x)?;
    let p0 = phi_of_t(&path, 0.0, x)?;
    let d = |s: f64| -> Result<Vec<f64>> {
        let (p, m) = (phi_of_t(&path, s, x)?, phi_of_t(&path, -s, x)?);
        Ok((0..p.len()).map(|c| (p[c] - 2.0 * p0[c] + m[c]) / (s * s)).collect())
    };
    let fd = d(step)?;
    let fd_half = d(step / 2.0)?;
    let floor = roundoff(&model.chart, x, step / 2.0, 2)?;
    Ok(VariationGap::build(step, formula, fd, fd_half, floor))
}

/// `h = u g¹ + h₀ + h₂` with `ψ = k − (ℓ/2) u`.
#[derive(Clone, Debug)]
pub struct JacobiDecomposition {
    /// `Tr_{g¹} h_{NN} / ℓ`
    pub u: FieldExpr,
    /// Trace-free part of the `(N, N)` block.
    pub h0: FieldExpr,
    /// Mixed and Euclidean blocks.
    pub h2: FieldExpr,
    pub psi: FieldExpr,
    /// Max over the probe nodes of `|h − u g¹ − h₀ − h₂|`.
    pub reconstruction_error: f64,
    /// Max of the pairwise pointwise inner products of the three pieces and of `|Tr_{g¹} h₀|`.
    pub orthogonality_error: f64,
}

pub fn jacobi_decompose(model: &ModelGeometry, h: &FieldExpr, k: &FieldExpr) -> Result<JacobiDecomposition> {
    let ell = cylinder_ell(model)?;
    if h.rank()? != Rank::Sym2 || k.rank()? != Rank::Scalar {
        return Err(Error::Rank("jacobi_decompose expects a symmetric 2-tensor and a scalar".into()));
    }
    let u = FieldExpr::apply(Op::SphereTrace, h.clone());
    let h0 = FieldExpr::apply(Op::SphereTraceFree, h.clone());
    let h2 = FieldExpr::apply(Op::Restrict(Block::NonSphere), h.clone());
    let psi = k.clone().minus(u.clone().scaled(ell as f64 / 2.0));
    let ug1 = FieldExpr::metric_block(Block::Sphere, u.clone());
    let q = model.quadrature(4);
    let charts = patch_charts(&model.chart, &q);
    let mut rec = 0.0f64;
    let mut orth = 0.0f64;
    for (i, x) in q.nodes.iter().enumerate() {
        let c = &charts[if q.patches.is_empty() { 0 } else { patch_index(q.patches[i]) }];
        let v = |e: &FieldExpr| e.eval(c, x, 0).map(|t| t.value());
        let (hv, a, b, d) = (v(h)?, v(&ug1)?, v(&h0)?, v(&h2)?);
        for t in 0..hv.len() {
            rec = rec.max((hv[t] - a[t] - b[t] - d[t]).abs());
        }
        for (p, r) in [(&a, &b), (&a, &d), (&b, &d)] {
            orth = orth.max(pointwise_inner(c, x, Rank::Sym2, p, r)?.abs());
        }
        orth = orth.max(v(&FieldExpr::apply(Op::SphereTrace, h0.clone()))?[0].abs());
    }
    Ok(JacobiDecomposition { u, h0, h2, psi, reconstruction_error: rec, orthogonality_error: orth })
}

/// Weighted-orthogonal projection of a scalar onto `span 𝒦`.
#[derive(Clone, Debug, Serialize)]
pub struct KProjection {
    /// Coefficients on the `KBasis` elements.
    pub coeffs: Vec<f64>,
    /// The projection, in ambient variables.
    pub v: Poly,
    pub norm: f64,
    pub remainder: f64,
}

pub fn project_k(model: &ModelGeometry, u: &FieldExpr, q: &Quadrature) -> Result<KProjection> {
    let kb = k_basis(model.euclid_dim())?;
    let elems: Vec<Poly> = kb.elems.iter().map(|p| model.lift(p)).collect();
    let field = |e: FieldExpr| TensorField::closed(&model.chart, e);
    let uf = field(u.clone())?;
    if uf.rank != Rank::Scalar {
        return Err(Error::Rank("project_k expects a scalar".into()));
    }
    let uv: Vec<f64> = sample(&uf, q)?.into_iter().map(|v| v[0]).collect();
    let ev: Vec<Vec<f64>> = elems
        .iter()
        .map(|p| Ok(sample(&field(FieldExpr::poly(p.clone()))?, q)?.into_iter().map(|v| v[0]).collect()))
        .collect::<Result<_>>()?;
    let w = scalar_weights(model, q)?;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).zip(&w).map(|((x, y), wi)| x * y * wi).sum::<f64>();
    let m = elems.len();
    let gram = DMatrix::from_fn(m, m, |i, j| dot(&ev[i], &ev[j]));
    let rhs = DVector::from_fn(m, |i, _| dot(&ev[i], &uv));
    let c = gram.cholesky().ok_or_else(|| Error::Precondition("K Gram matrix is singular on this rule".into()))?.solve(&rhs);
    let coeffs: Vec<f64> = c.iter().copied().collect();
    let proj: Vec<f64> = (0..uv.len()).map(|t| (0..m).map(|i| coeffs[i] * ev[i][t]).sum()).collect();
    let resid: Vec<f64> = uv.iter().zip(&proj).map(|(a, b)| a - b).collect();
    let v = elems.iter().zip(&coeffs).fold(Poly::zero(model.ambient_dim()), |acc, (p, ci)| &acc + &p.scale(*ci));
    Ok(KProjection { coeffs, v, norm: dot(&proj, &proj).max(0.0).sqrt(), remainder: dot(&resid, &resid).max(0.0).sqrt() })
}

/// Per-node weights carrying `e^{−f}` whatever the rule's measure.
fn scalar_weights(model: &ModelGeometry, q: &Quadrature) -> Result<Vec<f64>> {
    let charts = patch_charts(&model.chart, q);
    (0..q.len())
        .map(|i| {
            let c = &charts[if q.patches.is_empty() { 0 } else { patch_index(q.patches[i]) }];
            Ok(match q.measure {
                Measure::Weighted => q.weights[i],
                _ => q.weights[i] * (-c.weight_value(&q.nodes[i])?).exp(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CenterOfMass {
    pub b: Vec<f64>,
}

impl CenterOfMass {
    pub fn norm(&self) -> f64 {
        self.b.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `𝓑_i = ∫ x_i (k − ½ Tr h) e^{−f}`.
pub fn center_of_mass(model: &ModelGeometry, h: &FieldExpr, k: &FieldExpr, q: &Quadrature) -> Result<CenterOfMass> {
    let charts = patch_charts(&model.chart, q);
    let w = scalar_weights(model, q)?;
    let m = model.euclid_dim();
    let mut b = vec![0.0; m];
    let depth = h.depth().max(k.depth());
    for (i, x) in q.nodes.iter().enumerate() {
        let c = &charts[if q.patches.is_empty() { 0 } else { patch_index(q.patches[i]) }];
        let geom = c.geom_at(x, 2 + depth)?;
        let hv = h.eval_with(c, Some(&geom), x, 0)?;
        let kv = k.eval_with(c, Some(&geom), x, 0)?.value()[0];
        let tr = geom.trace(&hv, 0, 1).value()[0];
        let s = kv - 0.5 * tr;
        for (j, bj) in b.iter_mut().enumerate() {
            *bj += w[i] * x[model.euclid_chart_index(j)] * s;
        }
    }
    Ok(CenterOfMass { b })
}

/// Both sides of `‖h − v g¹‖_{W^{2,2}} ≤ C (‖Lh‖ + ‖div_f h‖)` with `v g¹` the projection onto `𝒦 g¹`.
#[derive(Clone, Debug, Serialize)]
pub struct ApproxProbe {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: Option<f64>,
    pub k_coeffs: Vec<f64>,
}

pub fn jacobi_approx_probe(model: &ModelGeometry, h: &FieldExpr, q: &Quadrature) -> Result<ApproxProbe> {
    cylinder_ell(model)?;
    let u = FieldExpr::apply(Op::SphereTrace, h.clone());
    let proj = project_k(model, &u, q)?;
    let rest = h.clone().minus(FieldExpr::metric_block(Block::Sphere, FieldExpr::poly(proj.v.clone())));
    let field = |e: FieldExpr| TensorField::closed(&model.chart, e);
    let lhs = weighted_sobolev_norm(&field(rest)?, 2, q)?;
    let lh = weighted_norm(&field(FieldExpr::apply(Op::L, h.clone()))?, q)?;
    let dh = weighted_norm(&field(FieldExpr::apply(Op::Divf, h.clone()))?, q)?;
    let rhs = lh + dh;
    let ratio = (rhs > 0.0).then(|| lhs / rhs);
    Ok(ApproxProbe { lhs, rhs, ratio, k_coeffs: proj.coeffs })
}

/// Integrals for `v ∈ 𝒦` on `R^m` with the Gaussian weight, from exact moments.
#[derive(Clone, Debug, Serialize)]
pub struct KFieldReport {
    pub v_sq: f64,
    pub grad_sq: f64,
    pub hess_sq: f64,
    /// `u = |∇v|² − Δ|∇v|²`
    pub u: Poly,
    /// Norm of `u` minus its projection onto `𝒦`.
    pub u_remainder: f64,
    /// `∫ u |∇v|² e^{−f}`
    pub u_grad_pairing: f64,
    pub u_sq: f64,
}

impl KFieldReport {
    /// `‖u‖² / ‖v‖⁴`
    pub fn constant(&self) -> f64 {
        self.u_sq / (self.v_sq * self.v_sq)
    }
}

fn gaussian_integral(p: &Poly) -> f64 {
    gaussian_mean(p) * (4.0 * std::f64::consts::PI).powf(p.nvars() as f64 / 2.0)
}

fn grad_sq_poly(v: &Poly) -> Poly {
    (0..v.nvars()).fold(Poly::zero(v.nvars()), |acc, i| {
        let d = v.deriv(i);
        &acc + &(&d * &d)
    })
}

fn laplacian_poly(p: &Poly) -> Poly {
    (0..p.nvars()).fold(Poly::zero(p.nvars()), |acc, i| &acc + &p.deriv(i).deriv(i))
}

/// `v` is a polynomial on `R^m` (Euclidean variables only).
pub fn kfield_identities(v: &Poly) -> Result<KFieldReport> {
    let m = v.nvars();
    let kb = k_basis(m)?;
    let gv = grad_sq_poly(v);
    let mut hess = Poly::zero(m);
    for i in 0..m {
        for j in 0..m {
            let d = v.deriv(i).deriv(j);
            hess = &hess + &(&d * &d);
        }
    }
    let u = &gv - &laplacian_poly(&gv);
    let gram = DMatrix::from_fn(kb.len(), kb.len(), |i, j| gaussian_integral(&(&kb.elems[i] * &kb.elems[j])));
    let rhs = DVector::from_fn(kb.len(), |i, _| gaussian_integral(&(&kb.elems[i] * &u)));
    let c = gram.cholesky().ok_or_else(|| Error::Precondition("K Gram matrix is singular".into()))?.solve(&rhs);
    let coeffs: Vec<f64> = c.iter().copied().collect();
    let r = &u - &kb.combine(&coeffs);
    Ok(KFieldReport {
        v_sq: gaussian_integral(&(v * v)),
        grad_sq: gaussian_integral(&gv),
        hess_sq: gaussian_integral(&hess),
        u_remainder: gaussian_integral(&(&r * &r)).max(0.0).sqrt(),
        u_grad_pairing: gaussian_integral(&(&u * &gv)),
        u_sq: gaussian_integral(&(&u * &u)),
        u,
    })
}

/// Smallest `‖u‖²/‖v‖⁴` over seeded random directions in `𝒦 ⊂ R^m`.
pub fn k_constant_sample(m: usize, samples: usize, seed: u64) -> Result<f64> {
    let kb = k_basis(m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::INFINITY;
    for _ in 0..samples {
        let c: Vec<f64> = (0..kb.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = kfield_identities(&kb.combine(&c))?;
        if r.v_sq > 0.0 {
            best = best.min(r.constant());
        }
    }
    Ok(best)
}

/// `∫ ⟨φ″, u g¹⟩ e^{−f}` along the Jacobi path of `v`, with `u = |∇v|² − Δ|∇v|²`.
#[derive(Clone, Debug, Serialize)]
pub struct PairingReport {
    pub pairing: f64,
    /// `−ℓ ∫ u |∇v|² e^{−f}`
    pub expected: f64,
}

/// `v` is a polynomial in the Euclidean variables of the cylinder.
pub fn nonintegrability_pairing(model: &ModelGeometry, v: &Poly, degree: usize) -> Result<PairingReport> {
    let ell = cylinder_ell(model)?;
    if v.nvars() != model.euclid_dim() {
        return Err(Error::Precondition("v must be a polynomial on the Euclidean factor".into()));
    }
    let gv = grad_sq_poly(v);
    let u = &gv - &laplacian_poly(&gv);
    let (va, ua) = (model.lift(v), model.lift(&u));
    let q = model.quadrature(degree);
    let charts = patch_charts(&model.chart, &q);
    let w = scalar_weights(model, &q)?;
    let mut pairing = 0.0;
    for (i, x) in q.nodes.iter().enumerate() {
        let c = &charts[if q.patches.is_empty() { 0 } else { patch_index(q.patches[i]) }];
        let pp = second_variation_formula(c, ell, &va, x)?;
        let g1 = FieldExpr::metric_block(Block::Sphere, FieldExpr::poly(ua.clone())).eval(c, x, 0)?.value();
        pairing += w[i] * pointwise_inner(c, x, Rank::Sym2, &pp, &g1)?;
    }
    let sphere_mass = model.weighted_mass() / (4.0 * std::f64::consts::PI).powf(model.euclid_dim() as f64 / 2.0);
    let expected = -(ell as f64) * sphere_mass * gaussian_integral(&(&u * &gv));
    Ok(PairingReport { pairing, expected })
}

/// Every term of both stability inequalities at `(h, k)`; constants are recorded, not asserted.
#[derive(Clone, Debug, Serialize)]
pub struct StabilityReport {
    /// `‖h‖_{C²} + ‖∇k‖_{C¹}` sampled on the rule's nodes.
    pub smallness: f64,
    pub u_l2: f64,
    pub h_hat_w22: f64,
    pub grad_psi_w12: f64,
    pub phi_l2: f64,
    /// `‖φ (1 + |x|²)‖_{L¹}`
    pub phi_moment_l1: f64,
    pub divf_h_w12: f64,
    pub center_of_mass: f64,
    /// `(‖ĥ‖² + ‖∇ψ‖²) / (‖φ‖² + ‖div_f h‖² + |𝓑|² + ‖u‖⁴)`
    pub first_constant: Option<f64>,
    /// `‖u‖² / (‖u‖³ + ‖φ(1+|x|²)‖_{L¹} + ‖φ‖² + |𝓑|² + ‖div_f h‖²)`
    pub second_constant: Option<f64>,
}

pub fn stability_probe(model: &ModelGeometry, h: &FieldExpr, k: &FieldExpr, delta: f64, q: &Quadrature) -> Result<StabilityReport> {
    let ell = cylinder_ell(model)?;
    let charts = patch_charts(&model.chart, q);
    let w = scalar_weights(model, q)?;
    let depth = h.depth().max(k.depth());
    let mut smallness = 0.0f64;
    let mut phi_sq = 0.0;
    let mut phi_l1 = 0.0;
    let path = PerturbationPath::new(&model.chart, h.clone(), k.clone())?;
    for (i, x) in q.nodes.iter().enumerate() {
        let c = &charts[if q.patches.is_empty() { 0 } else { patch_index(q.patches[i]) }];
        let geom = c.geom_at(x, 4 + depth)?;
        let mut hj = h.eval_with(c, Some(&geom), x, 2)?;
        let mut ch = 0.0;
        for _ in 0..3 {
            ch += geom.inner(&hj, &hj).value().max(0.0).sqrt();
            if hj.order() > 0 {
                hj = geom.cov(&hj);
            }
        }
        let kj = k.eval_with(c, Some(&geom), x, 2)?;
        let dk = geom.grad(&kj);
        let hk = geom.hess(&kj);
        ch += geom.inner(&dk, &dk).value().max(0.0).sqrt() + geom.inner(&hk, &hk).value().max(0.0).sqrt();
        smallness = smallness.max(ch);
    }
    if smallness > delta {
        return Err(Error::Precondition(format!("‖h‖_C² + ‖∇k‖_C¹ = {smallness:.3e} exceeds δ = {delta:.3e}")));
    }
    for (i, x) in q.nodes.iter().enumerate() {
        let c = &charts[if q.patches.is_empty() { 0 } else { patch_index(q.patches[i]) }];
        let phi = phi_of_t(&path.on_chart(c), 1.0, x)?;
        let pn = pointwise_inner(c, x, Rank::Sym2, &phi, &phi)?.max(0.0);
        let r2: f64 = (0..model.euclid_dim()).map(|j| x[model.euclid_chart_index(j)].powi(2)).sum();
        phi_sq += w[i] * pn;
        phi_l1 += w[i] * pn.sqrt() * (1.0 + r2);
    }
    let proj = project_k(model, &FieldExpr::apply(Op::SphereTrace, h.clone()), q)?;
    let u_l2 = proj.norm;
    let field = |e: FieldExpr| TensorField::closed(&model.chart, e);
    let h_hat = h.clone().minus(FieldExpr::metric_block(Block::Sphere, FieldExpr::poly(proj.v.clone())));
    let psi = k.clone().minus(FieldExpr::poly(proj.v.scale(ell as f64 / 2.0)));
    let h_hat_w22 = weighted_sobolev_norm(&field(h_hat)?, 2, q)?;
    let grad_psi_w12 = weighted_sobolev_norm(&field(FieldExpr::apply(Op::Grad, psi))?, 1, q)?;
    let divf_h_w12 = weighted_sobolev_norm(&field(FieldExpr::apply(Op::Divf, h.clone()))?, 1, q)?;
    let com = center_of_mass(model, h, k, q)?.norm();
    let phi_l2 = phi_sq.max(0.0_f64).sqrt();
    let d1 = phi_sq + divf_h_w12.powi(2) + com * com + u_l2.powi(4);
    let n1 = h_hat_w22.powi(2) + grad_psi_w12.powi(2);
    let d2 = u_l2.powi(3) + phi_l1 + phi_sq + com * com + divf_h_w12.powi(2);
    Ok(StabilityReport {
        smallness,
        u_l2,
        h_hat_w22,
        grad_psi_w12,
        phi_l2,
        phi_moment_l1: phi_l1,
        divf_h_w12,
        center_of_mass: com,
        first_constant: (d1 > 0.0).then(|| n1 / d1),
        second_constant: (d2 > 0.0).then(|| u_l2 * u_l2 / d2),
    })
}

#[cfg(test)]
mod tests;
