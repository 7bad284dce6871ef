//! Coordinate charts carrying a metric `g` and a weight `f`, their jets at a
//! point, and the curvature quantities built from them.

mod identities;

pub use identities::{all_residuals, identity_residual, IdentityId, IdentityResidual, TestFields};

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::{Jet, Layout, Scalar, MAX_ORDER};
use crate::tensor::{Geom, TJet};
use crate::weighted_calculus::FieldExpr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Topology {
    PeriodicBox,
    Box,
    SphereProduct,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum JetMode {
    Analytic,
    FiniteDifference { step: f64 },
}

/// Which stereographic patch of the sphere factor a chart uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Patch {
    /// `y = 0` is the pole with last ambient coordinate `−ρ`.
    Lower,
    /// `y = 0` is the pole with last ambient coordinate `+ρ`.
    Upper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigMode {
    pub k: Vec<i32>,
    pub amp: f64,
    pub phase: f64,
}

/// `Σ amp · cos(k·x + phase)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrigSeries {
    pub modes: Vec<TrigMode>,
}

impl TrigSeries {
    pub fn eval<S: Scalar>(&self, x: &[S]) -> S {
        let mut acc = x[0].cst(0.0);
        for m in &self.modes {
            let mut arg = x[0].cst(m.phase);
            for (xi, &ki) in x.iter().zip(&m.k) {
                if ki != 0 {
                    arg = arg + xi.clone() * ki as f64;
                }
            }
            acc = acc + arg.cos() * m.amp;
        }
        acc
    }

    /// Integer wave vectors with entries in `-kmax..=kmax`, amplitudes summing to at most `amp`.
    pub fn random<R: Rng>(rng: &mut R, n: usize, nmodes: usize, amp: f64, kmax: i32) -> TrigSeries {
        let modes = (0..nmodes)
            .map(|_| TrigMode {
                k: (0..n).map(|_| rng.gen_range(-kmax..=kmax)).collect(),
                amp: amp / nmodes as f64 * rng.gen_range(-1.0..1.0),
                phase: rng.gen_range(0.0..std::f64::consts::TAU),
            })
            .collect();
        TrigSeries { modes }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum MetricFamily {
    Euclidean,
    /// Identity except `g_aa = 1 + amp·sin(x_a)`.
    TorusWave { axis: usize, amp: f64 },
    /// `g_ij = δ_ij + s_ij(x)`, entries of the upper triangle stored row by row.
    Trig { entries: Vec<TrigSeries> },
    /// Round `S^ell` of the given radius in stereographic coordinates, times flat space.
    SphereProduct { ell: usize, radius: f64, patch: Patch },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum WeightFamily {
    Zero,
    /// `|x_{skip..}|² / 4 + offset`.
    Quadratic { skip: usize, offset: f64 },
    Trig(TrigSeries),
}

/// `g + t h`, `f + t k` with `h`, `k` evaluated on the base chart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub base: Chart,
    pub h: FieldExpr,
    pub k: FieldExpr,
    pub t: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chart {
    pub dim: usize,
    pub topology: Topology,
    pub bounds: Vec<(f64, f64)>,
    pub metric: MetricFamily,
    pub weight: WeightFamily,
    pub jet_mode: JetMode,
    pub kappa: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<Box<Perturbation>>,
}

impl Chart {
    pub fn new(dim: usize, topology: Topology, bounds: Vec<(f64, f64)>, metric: MetricFamily, weight: WeightFamily) -> Chart {
        assert_eq!(bounds.len(), dim);
        Chart { dim, topology, bounds, metric, weight, jet_mode: JetMode::Analytic, kappa: 0.5, perturbation: None }
    }

    pub fn with_mode(mut self, mode: JetMode) -> Chart {
        self.jet_mode = mode;
        self
    }

    pub fn with_kappa(mut self, kappa: f64) -> Chart {
        self.kappa = kappa;
        self
    }

    /// The chart of `(g + t h, f + t k)`.
    pub fn perturbed(&self, h: FieldExpr, k: FieldExpr, t: f64) -> Chart {
        let mut c = self.clone();
        c.perturbation = Some(Box::new(Perturbation { base: self.clone(), h, k, t }));
        c
    }

    /// Random trigonometric metric and weight on the torus `[0, 2π)^n`.
    pub fn random_torus<R: Rng>(rng: &mut R, n: usize, amp: f64) -> Chart {
        let entries = (0..n * (n + 1) / 2).map(|_| TrigSeries::random(rng, n, 3, amp, 1)).collect();
        let weight = TrigSeries::random(rng, n, 4, 4.0 * amp, 1);
        Chart::new(
            n,
            Topology::PeriodicBox,
            vec![(0.0, std::f64::consts::TAU); n],
            MetricFamily::Trig { entries },
            WeightFamily::Trig(weight),
        )
    }

    /// Number of sphere coordinates leading the chart (zero off sphere products).
    pub fn sphere_dim(&self) -> usize {
        match self.metric {
            MetricFamily::SphereProduct { ell, .. } => ell,
            _ => 0,
        }
    }

    pub fn ambient_dim(&self) -> usize {
        match self.metric {
            MetricFamily::SphereProduct { .. } => self.dim + 1,
            _ => self.dim,
        }
    }

    /// Ambient coordinates of a chart point: `(z, x)` on sphere products, identity otherwise.
    pub fn ambient<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        match self.metric {
            MetricFamily::SphereProduct { ell, radius, patch } => {
                let mut r2 = x[0].cst(0.0);
                for y in &x[..ell] {
                    r2 = r2 + y.square();
                }
                let inv = (r2.clone() + 1.0).recip() * radius;
                let mut out: Vec<S> = x[..ell].iter().map(|y| y.clone() * inv.clone() * 2.0).collect();
                let last = match patch {
                    Patch::Lower => (r2 - 1.0) * inv,
                    Patch::Upper => (-r2 + 1.0) * inv,
                };
                out.push(last);
                out.extend(x[ell..].iter().cloned());
                out
            }
            _ => x.to_vec(),
        }
    }

    /// Inverse of [`Chart::ambient`] for points on the embedded model.
    pub fn from_ambient(&self, z: &[f64]) -> Vec<f64> {
        match self.metric {
            MetricFamily::SphereProduct { ell, radius, patch } => {
                let denom = match patch {
                    Patch::Lower => radius - z[ell],
                    Patch::Upper => radius + z[ell],
                };
                let mut out: Vec<f64> = z[..ell].iter().map(|v| v / denom).collect();
                out.extend_from_slice(&z[ell + 1..]);
                out
            }
            _ => z.to_vec(),
        }
    }

    pub fn check_bounds(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Precondition(format!("point has {} coordinates, chart has {}", x.len(), self.dim)));
        }
        if self.topology == Topology::PeriodicBox {
            return Ok(());
        }
        for (xi, (lo, hi)) in x.iter().zip(&self.bounds) {
            if !(xi.is_finite() && *xi >= *lo && *xi <= *hi) {
                return Err(Error::OutOfBounds(x.to_vec()));
            }
        }
        Ok(())
    }

    fn base_metric<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let n = self.dim;
        let one = x[0].cst(1.0);
        let zero = x[0].cst(0.0);
        let mut g: Vec<S> = (0..n * n).map(|t| if t / n == t % n { one.clone() } else { zero.clone() }).collect();
        match &self.metric {
            MetricFamily::Euclidean => {}
            MetricFamily::TorusWave { axis, amp } => {
                g[axis * n + axis] = x[*axis].sin() * *amp + 1.0;
            }
            MetricFamily::Trig { entries } => {
                let mut e = 0;
                for i in 0..n {
                    for j in i..n {
                        let v = entries[e].eval(x);
                        e += 1;
                        g[i * n + j] = g[i * n + j].clone() + v.clone();
                        if i != j {
                            g[j * n + i] = g[j * n + i].clone() + v;
                        }
                    }
                }
            }
            MetricFamily::SphereProduct { ell, radius, .. } => {
                let mut r2 = x[0].cst(1.0);
                for y in &x[..*ell] {
                    r2 = r2 + y.square();
                }
                let conf = r2.square().recip() * (4.0 * radius * radius);
                for a in 0..*ell {
                    g[a * n + a] = conf.clone();
                }
            }
        }
        g
    }

    fn base_weight<S: Scalar>(&self, x: &[S]) -> S {
        match &self.weight {
            WeightFamily::Zero => x[0].cst(0.0),
            WeightFamily::Quadratic { skip, offset } => {
                let mut acc = x[0].cst(*offset);
                for xi in &x[*skip..] {
                    acc = acc + xi.square() * 0.25;
                }
                acc
            }
            WeightFamily::Trig(s) => s.eval(x),
        }
    }

    /// Metric components as jets about `x`.
    pub fn metric_jets(&self, x: &[f64], order: usize) -> Result<TJet> {
        let n = self.dim;
        match &self.perturbation {
            None => {
                let v = Jet::variables(x, order);
                let g = self.base_metric(&v);
                Ok(TJet { n, rank: 2, c: g })
            }
            Some(p) => {
                let g = p.base.metric_jets(x, order)?;
                let h = p.h.eval(&p.base, x, order)?;
                Ok(g.add(&h.scale(p.t)))
            }
        }
    }

    pub fn weight_jet(&self, x: &[f64], order: usize) -> Result<Jet> {
        match &self.perturbation {
            None => Ok(self.base_weight(&Jet::variables(x, order))),
            Some(p) => {
                let f = p.base.weight_jet(x, order)?;
                let k = p.k.eval(&p.base, x, order)?;
                Ok(f + k.c[0].scale(p.t))
            }
        }
    }

    pub fn metric_value(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.dim;
        let g = match &self.perturbation {
            None => DMatrix::from_row_slice(n, n, &self.base_metric(x)),
            Some(_) => {
                let j = self.metric_jets(x, 0)?;
                DMatrix::from_row_slice(n, n, &j.value())
            }
        };
        Ok(g)
    }

    pub fn weight_value(&self, x: &[f64]) -> Result<f64> {
        match &self.perturbation {
            None => Ok(self.base_weight(x)),
            Some(_) => Ok(self.weight_jet(x, 0)?.value()),
        }
    }

    fn spd_check(&self, g: &DMatrix<f64>, x: &[f64]) -> Result<()> {
        let sym = (g - g.transpose()).amax() <= 1e-12 * (1.0 + g.amax());
        if !sym || g.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite(x.to_vec()));
        }
        Ok(())
    }

    /// Jets of `g` and `f` at `x` (order at most 4), honouring the chart's jet mode.
    pub fn jet_at(&self, x: &[f64], order: usize) -> Result<PointJet> {
        if order > 4 {
            return Err(Error::Precondition(format!("jet order {order} exceeds 4")));
        }
        self.point_jet(x, order)
    }

    /// Like [`Chart::jet_at`] without the order cap in analytic mode.
    pub fn point_jet(&self, x: &[f64], order: usize) -> Result<PointJet> {
        self.check_bounds(x)?;
        if order > MAX_ORDER {
            return Err(Error::InsufficientOrder { have: MAX_ORDER, need: order });
        }
        match self.jet_mode {
            JetMode::Analytic => {
                let g = self.metric_jets(x, order)?;
                let f = self.weight_jet(x, order)?;
                let g0 = DMatrix::from_row_slice(self.dim, self.dim, &g.value());
                self.spd_check(&g0, x)?;
                Ok(PointJet { point: x.to_vec(), order, g, f })
            }
            JetMode::FiniteDifference { step } => self.fd_jet(x, order, step),
        }
    }

    fn fd_jet(&self, x: &[f64], order: usize, h: f64) -> Result<PointJet> {
        let n = self.dim;
        let mut jets = fd_jets(n, x, order, h, |p| {
            let g = self.metric_value(p)?;
            self.spd_check(&g, p)?;
            let mut v: Vec<f64> = g.transpose().iter().copied().collect();
            v.push(self.weight_value(p)?);
            Ok(v)
        })?;
        let f = jets.pop().expect("weight jet");
        Ok(PointJet { point: x.to_vec(), order, g: TJet { n, rank: 2, c: jets }, f })
    }

    /// Full geometric context at `x` with metric and weight jets of the given order.
    pub fn geom_at(&self, x: &[f64], order: usize) -> Result<Geom> {
        let pj = self.point_jet(x, order.max(2))?;
        Geom::new(pj.g, pj.f, self.kappa)
    }

    /// Finite-difference point jet with an explicit step, whatever the chart's mode.
    pub fn fd_point_jet(&self, x: &[f64], order: usize, step: f64) -> Result<PointJet> {
        self.check_bounds(x)?;
        self.fd_jet(x, order, step)
    }
}

/// Jets of order ≤ 4 at `x` of every component of a vector-valued map, from
/// tensor-product centered stencils of step `h` (width 3 up to order 2, else 5).
pub(crate) fn fd_jets(
    n: usize,
    x: &[f64],
    order: usize,
    h: f64,
    mut eval: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<Vec<Jet>> {
    const NARROW: [[f64; 5]; 3] = [[0.0, 0.0, 1.0, 0.0, 0.0], [0.0, -0.5, 0.0, 0.5, 0.0], [0.0, 1.0, -2.0, 1.0, 0.0]];
    // first and second derivatives at fourth order on the wide stencil
    const WIDE: [[f64; 5]; 5] = [
        [0.0, 0.0, 1.0, 0.0, 0.0],
        [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0],
        [-1.0 / 12.0, 4.0 / 3.0, -2.5, 4.0 / 3.0, -1.0 / 12.0],
        [-0.5, 1.0, 0.0, -1.0, 0.5],
        [1.0, -4.0, 6.0, -4.0, 1.0],
    ];
    if order > 4 {
        return Err(Error::InsufficientOrder { have: 4, need: order });
    }
    let reach: i32 = if order <= 2 { 1 } else { 2 };
    let side = (2 * reach + 1) as usize;
    let total = side.pow(n as u32);
    let mut vals = Vec::with_capacity(total);
    let mut offs = Vec::with_capacity(total);
    for flat in 0..total {
        let mut o = vec![0i32; n];
        let mut t = flat;
        for v in (0..n).rev() {
            o[v] = (t % side) as i32 - reach;
            t /= side;
        }
        let p: Vec<f64> = x.iter().zip(&o).map(|(xi, &oi)| xi + h * oi as f64).collect();
        vals.push(eval(&p)?);
        offs.push(o);
    }
    let m = vals[0].len();
    let layout = Layout::get(n);
    let len = layout.len(order);
    let mut coeffs = vec![vec![0.0; len]; m];
    for idx in 0..len {
        let e = layout.exponents(idx).to_vec();
        let deg: i32 = e.iter().map(|&k| k as i32).sum();
        let fact: f64 = e.iter().map(|&k| (1..=k as u64).product::<u64>() as f64).product();
        let scale = 1.0 / (h.powi(deg) * fact);
        for (s, o) in offs.iter().enumerate() {
            let mut w = scale;
            for v in 0..n {
                let row = if reach == 1 { &NARROW[e[v] as usize] } else { &WIDE[e[v] as usize] };
                w *= row[(o[v] + 2) as usize];
                if w == 0.0 {
                    break;
                }
            }
            if w == 0.0 {
                continue;
            }
            for (c, val) in coeffs.iter_mut().zip(&vals[s]) {
                c[idx] += w * val;
            }
        }
    }
    Ok(coeffs.into_iter().map(|c| Jet::from_coeffs(&layout, order, c)).collect())
}

/// Jets of `g` and `f` at one point.
#[derive(Clone, Debug)]
pub struct PointJet {
    pub point: Vec<f64>,
    pub order: usize,
    pub g: TJet,
    pub f: Jet,
}

impl PointJet {
    pub fn dim(&self) -> usize {
        self.point.len()
    }

    /// Metric value as a matrix.
    pub fn metric(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_row_slice(n, n, &self.g.value())
    }

    /// `∂_{d_1} ... ∂_{d_k} g_{ij}`.
    pub fn metric_partial(&self, i: usize, j: usize, d: &[usize]) -> f64 {
        self.g.at(&[i, j]).partial_idx(d)
    }

    pub fn weight_partial(&self, d: &[usize]) -> f64 {
        self.f.partial_idx(d)
    }

    /// All `k`-th partials of `g` flattened as `[i][j][d_1]..[d_k]`.
    pub fn metric_block(&self, k: usize) -> Vec<f64> {
        let n = self.dim();
        let mut out = Vec::with_capacity(n.pow(k as u32 + 2));
        let mut d = vec![0; k];
        for comp in 0..n * n {
            for flat in 0..n.pow(k as u32) {
                let mut t = flat;
                for s in (0..k).rev() {
                    d[s] = t % n;
                    t /= n;
                }
                out.push(self.metric_partial(comp / n, comp % n, &d));
            }
        }
        out
    }

    /// All `k`-th partials of `f` flattened as `[d_1]..[d_k]`.
    pub fn weight_block(&self, k: usize) -> Vec<f64> {
        let n = self.dim();
        let mut d = vec![0; k];
        (0..n.pow(k as u32))
            .map(|flat| {
                let mut t = flat;
                for s in (0..k).rev() {
                    d[s] = t % n;
                    t /= n;
                }
                self.weight_partial(&d)
            })
            .collect()
    }
}

/// Values (not jets) of the curvature quantities at a point.
#[derive(Clone, Debug, Serialize)]
pub struct CurvaturePack {
    pub n: usize,
    /// `gamma[(k*n + i)*n + j] = Γ^k_{ij}`.
    pub gamma: Vec<f64>,
    /// `R_{ijkl}` in the sign convention `Ric_{ij} = g^{ab} R_{aibj}`.
    pub riem: Vec<f64>,
    pub ric: Vec<f64>,
    pub scal: f64,
    pub hess_f: Vec<f64>,
    pub d_hess_f: Option<Vec<f64>>,
    pub phi: Vec<f64>,
    pub d_ric: Option<Vec<f64>>,
    pub dphi: Option<Vec<f64>>,
    pub d2phi: Option<Vec<f64>>,
}

impl CurvaturePack {
    pub fn riem_at(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let n = self.n;
        self.riem[((i * n + j) * n + k) * n + l]
    }

    pub fn max_abs_phi(&self) -> f64 {
        self.phi.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Curvature from a point jet: needs order ≥ 2, and ≥ 3 / ≥ 4 for first / second derivatives of φ.
pub fn curvature_at(jet: &PointJet, kappa: f64) -> Result<CurvaturePack> {
    if jet.order < 2 {
        return Err(Error::InsufficientOrder { have: jet.order, need: 2 });
    }
    let geom = Geom::new(jet.g.clone(), jet.f.clone(), kappa)?;
    let first = (jet.order >= 3).then(|| (geom.cov(&geom.phi), geom.cov(&geom.ric), geom.cov(&geom.hess_f)));
    let d2phi = (jet.order >= 4).then(|| geom.cov(&geom.cov(&geom.phi)).value());
    Ok(CurvaturePack {
        n: geom.n,
        gamma: geom.gamma.iter().map(|j| j.value()).collect(),
        riem: geom.riem.value(),
        ric: geom.ric.value(),
        scal: geom.scal.value(),
        hess_f: geom.hess_f.value(),
        d_hess_f: first.as_ref().map(|t| t.2.value()),
        phi: geom.phi.value(),
        d_ric: first.as_ref().map(|t| t.1.value()),
        dphi: first.as_ref().map(|t| t.0.value()),
        d2phi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gaussian(n: usize) -> Chart {
        Chart::new(n, Topology::Box, vec![(-50.0, 50.0); n], MetricFamily::Euclidean, WeightFamily::Quadratic { skip: 0, offset: 0.0 })
    }

    #[test]
    fn flat_jets_are_constant() {
        let c = Chart::new(2, Topology::Box, vec![(-5.0, 5.0); 2], MetricFamily::Euclidean, WeightFamily::Zero);
        let j = c.jet_at(&[0.3, -1.0], 4).unwrap();
        assert_eq!(j.metric(), DMatrix::identity(2, 2));
        for k in 1..=4 {
            assert!(j.metric_block(k).iter().all(|v| *v == 0.0));
            assert!(j.weight_block(k).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn gaussian_weight_jet() {
        let j = gaussian(2).jet_at(&[1.0, 0.0], 4).unwrap();
        assert!((j.f.value() - 0.25).abs() < 1e-15);
        assert_eq!(j.weight_block(1), vec![0.5, 0.0]);
        assert_eq!(j.weight_block(2), vec![0.5, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn torus_wave_fd_agrees_with_analytic() {
        let c = Chart::new(
            2,
            Topology::PeriodicBox,
            vec![(0.0, std::f64::consts::TAU); 2],
            MetricFamily::TorusWave { axis: 0, amp: 0.1 },
            WeightFamily::Zero,
        );
        let x = [0.7, 1.1];
        let a = c.jet_at(&x, 2).unwrap();
        let fd = c.clone().with_mode(JetMode::FiniteDifference { step: 1e-3 }).jet_at(&x, 2).unwrap();
        for k in 0..=2 {
            for (u, v) in a.metric_block(k).iter().zip(fd.metric_block(k)) {
                assert!((u - v).abs() < 1e-5, "order {k}: {u} vs {v}");
            }
        }
        // fourth derivatives need a coarser step in double precision
        let a4 = c.jet_at(&x, 4).unwrap();
        let fd4 = c.with_mode(JetMode::FiniteDifference { step: 2e-2 }).jet_at(&x, 4).unwrap();
        for k in 3..=4 {
            for (u, v) in a4.metric_block(k).iter().zip(fd4.metric_block(k)) {
                assert!((u - v).abs() < 1e-4, "order {k}: {u} vs {v}");
            }
        }
    }

    #[test]
    fn curvature_symmetries_on_random_torus() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c = Chart::random_torus(&mut rng, 3, 0.1);
        let j = c.jet_at(&[0.4, 2.0, 5.1], 2).unwrap();
        let p = curvature_at(&j, 0.5).unwrap();
        let n = 3;
        for i in 0..n {
            for jj in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let r = p.riem_at(i, jj, k, l);
                        assert!((r + p.riem_at(jj, i, k, l)).abs() < 1e-13);
                        assert!((r + p.riem_at(i, jj, l, k)).abs() < 1e-13);
                        assert!((r - p.riem_at(k, l, i, jj)).abs() < 1e-13);
                        let b = r + p.riem_at(jj, k, i, l) + p.riem_at(k, i, jj, l);
                        assert!(b.abs() < 1e-13);
                    }
                }
            }
        }
        let g = j.metric().try_inverse().unwrap();
        let tr: f64 = (0..n).flat_map(|a| (0..n).map(move |b| (a, b))).map(|(a, b)| g[(a, b)] * p.ric[a * n + b]).sum();
        assert!((tr - p.scal).abs() < 1e-13);
    }

    #[test]
    fn unit_sphere_has_positive_sectional_curvature() {
        let c = Chart::new(
            2,
            Topology::SphereProduct,
            vec![(-3.0, 3.0); 2],
            MetricFamily::SphereProduct { ell: 2, radius: 1.0, patch: Patch::Lower },
            WeightFamily::Zero,
        );
        let j = c.jet_at(&[0.2, -0.3], 2).unwrap();
        let p = curvature_at(&j, 0.5).unwrap();
        let g = j.metric();
        // R_{0101} = K (g00 g11 - g01^2) with K = 1
        let expect = g[(0, 0)] * g[(1, 1)] - g[(0, 1)] * g[(0, 1)];
        assert!((p.riem_at(0, 1, 0, 1) - expect).abs() < 1e-12);
        assert!((p.scal - 2.0).abs() < 1e-12);
    }
}
