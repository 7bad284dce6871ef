//! Pointwise first-variation formulas along `g + t h`, `f + t k` at `t = 0`,
//! evaluated from jets of the base geometry. Used as internal evaluators by
//! the public variation checks and tested against finite differences in `t`.

use crate::chart_geometry::Chart;
use crate::error::Result;
use crate::tensor::{Geom, TJet};
use crate::weighted_calculus::FieldExpr;

/// Numeric arrays at one point: metric, curvature and the jets of `h`, `k`.
pub(crate) struct Local {
    pub n: usize,
    pub kappa: f64,
    pub gi: Vec<f64>,
    pub riem: Vec<f64>,
    pub ric: Vec<f64>,
    pub df: Vec<f64>,
    pub h: Vec<f64>,
    /// `h_{ij,k}`
    pub dh: Vec<f64>,
    /// `h_{ij,kl}`, derivative `k` taken first.
    pub ddh: Vec<f64>,
    pub hess_k: Vec<f64>,
    pub hess_tr: Vec<f64>,
}

impl Local {
    pub fn new(chart: &Chart, h: &FieldExpr, k: &FieldExpr, x: &[f64]) -> Result<Local> {
        let depth = h.depth().max(k.depth());
        let geom = chart.geom_at(x, 4 + depth)?;
        Local::with_geom(chart, &geom, h, k, x)
    }

    pub fn with_geom(chart: &Chart, geom: &Geom, h: &FieldExpr, k: &FieldExpr, x: &[f64]) -> Result<Local> {
        let hj = h.eval_with(chart, Some(geom), x, 2)?;
        let kj = k.eval_with(chart, Some(geom), x, 2)?;
        let dh = geom.cov(&hj);
        let ddh = geom.cov(&dh);
        let tr = geom.trace(&hj, 0, 1);
        let val = |t: &TJet| t.value();
        Ok(Local {
            n: geom.n,
            kappa: geom.kappa,
            gi: val(&geom.gi),
            riem: val(&geom.riem),
            ric: val(&geom.ric),
            df: val(&geom.df),
            h: val(&hj),
            dh: val(&dh),
            ddh: val(&ddh),
            hess_k: val(&geom.hess(&kj)),
            hess_tr: val(&geom.hess(&tr)),
        })
    }

    fn gi(&self, a: usize, b: usize) -> f64 {
        self.gi[a * self.n + b]
    }

    fn h(&self, i: usize, j: usize) -> f64 {
        self.h[i * self.n + j]
    }

    fn dh(&self, i: usize, j: usize, k: usize) -> f64 {
        let n = self.n;
        self.dh[(i * n + j) * n + k]
    }

    fn ddh(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let n = self.n;
        self.ddh[((i * n + j) * n + k) * n + l]
    }

    fn riem(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let n = self.n;
        self.riem[((i * n + j) * n + k) * n + l]
    }

    fn ric(&self, i: usize, j: usize) -> f64 {
        self.ric[i * self.n + j]
    }

    fn sym(&self, mut f: impl FnMut(usize, usize) -> f64) -> Vec<f64> {
        let n = self.n;
        (0..n * n).map(|t| f(t / n, t % n)).collect()
    }

    /// `f^m = g^{ma} f_a`
    fn grad_f(&self, m: usize) -> f64 {
        (0..self.n).map(|a| self.gi(m, a) * self.df[a]).sum()
    }

    /// `Γ'^k_{ij} = ½ g^{km}(h_{mj,i} + h_{mi,j} − h_{ij,m})`, flattened as `[k][i][j]`.
    pub fn christoffel(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n * n];
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut s = 0.0;
                    for m in 0..n {
                        s += self.gi(k, m) * (self.dh(m, j, i) + self.dh(m, i, j) - self.dh(i, j, m));
                    }
                    out[(k * n + i) * n + j] = 0.5 * s;
                }
            }
        }
        out
    }

    /// `g^{ab} h_{ij,ab}`
    fn lap_h(&self, i: usize, j: usize) -> f64 {
        let n = self.n;
        let mut s = 0.0;
        for a in 0..n {
            for b in 0..n {
                s += self.gi(a, b) * self.ddh(i, j, a, b);
            }
        }
        s
    }

    /// `R(h)_{ij} = R_{likj} h^{lk}`
    fn curv(&self, i: usize, j: usize) -> f64 {
        let n = self.n;
        let mut s = 0.0;
        for l in 0..n {
            for k in 0..n {
                let mut hu = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        hu += self.gi(l, a) * self.gi(k, b) * self.h(a, b);
                    }
                }
                s += self.riem(l, i, k, j) * hu;
            }
        }
        s
    }

    /// `Ric_i^k h_{kj} = Ric_{ia} g^{ak} h_{kj}`
    fn ric_h(&self, i: usize, j: usize) -> f64 {
        let n = self.n;
        let mut s = 0.0;
        for a in 0..n {
            for k in 0..n {
                s += self.ric(i, a) * self.gi(a, k) * self.h(k, j);
            }
        }
        s
    }

    /// `g^{ab} h_{ia,bj}`: the derivative of `(div h)_i` in direction `j`.
    fn d_div_h(&self, i: usize, j: usize) -> f64 {
        let n = self.n;
        let mut s = 0.0;
        for a in 0..n {
            for b in 0..n {
                s += self.gi(a, b) * self.ddh(i, a, b, j);
            }
        }
        s
    }

    /// `S' = −⟨h, Ric⟩ + div² h − Δ Tr h`
    #[cfg(test)]
    pub fn scalar_curvature(&self) -> f64 {
        let n = self.n;
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                let mut hr = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        hr += self.gi(i, a) * self.gi(j, b) * self.ric(a, b);
                    }
                }
                s += -self.h(i, j) * hr + self.gi(i, j) * (self.d_div_h(i, j) - self.hess_tr[i * n + j]);
            }
        }
        s
    }

    /// `Ric'`, from `2 Ric' = −Δh + h∘Ric + Ric∘h − 2R(h) − Hess_{Tr h} + ∇div h + (∇div h)^T`.
    pub fn ricci(&self) -> Vec<f64> {
        let n = self.n;
        self.sym(|i, j| {
            0.5 * (-self.lap_h(i, j) + self.ric_h(j, i) + self.ric_h(i, j) - 2.0 * self.curv(i, j) - self.hess_tr[i * n + j]
                + self.d_div_h(i, j)
                + self.d_div_h(j, i))
        })
    }

    /// `(Hess_f)' = Hess_k − Γ'^m_{ij} f_m`
    pub fn hess_f(&self) -> Vec<f64> {
        let n = self.n;
        let c = self.christoffel();
        self.sym(|i, j| self.hess_k[i * n + j] - (0..n).map(|m| c[(m * n + i) * n + j] * self.df[m]).sum::<f64>())
    }

    /// `(Lh)_{ij} = Δh_{ij} − f^m h_{ij,m} + 2R(h)_{ij}`
    fn l_h(&self, i: usize, j: usize) -> f64 {
        let drift: f64 = (0..self.n).map(|m| self.grad_f(m) * self.dh(i, j, m)).sum();
        self.lap_h(i, j) - drift + 2.0 * self.curv(i, j)
    }

    /// `φ'` on an arbitrary chart:
    /// `κh + ½Lh + Hess_w − ½(h_{jk,ki} + h_{ik,kj} + Ric_i^k h_{jk} + Ric_j^k h_{ik}) + ½(h_{jn,i} + h_{in,j}) f^n`
    /// with `w = ½ Tr h − k`.
    pub fn phi_general(&self) -> Vec<f64> {
        let n = self.n;
        self.sym(|i, j| {
            let mut div_part = 0.0;
            for k in 0..n {
                for m in 0..n {
                    div_part += self.gi(k, m) * (self.ddh(j, k, m, i) + self.ddh(i, k, m, j));
                }
            }
            let mut drift = 0.0;
            for m in 0..n {
                drift += (self.dh(j, m, i) + self.dh(i, m, j)) * self.grad_f(m);
            }
            let w = 0.5 * self.hess_tr[i * n + j] - self.hess_k[i * n + j];
            self.kappa * self.h(i, j) + 0.5 * self.l_h(i, j) + w - 0.5 * (div_part + self.ric_h(j, i) + self.ric_h(i, j))
                + 0.5 * drift
        })
    }

    #[cfg(test)]
    /// `div_f* div_f h` in the form valid on shrinkers:
    /// `κh_{ij} − ½ g^{kn}(h_{jk,ni} − f_n h_{kj,i} + h_{ik,nj} − f_n h_{ik,j} + Ric_{ni} h_{kj} + Ric_{nj} h_{ik})`.
    pub fn divf_star_divf_soliton(&self) -> Vec<f64> {
        let n = self.n;
        self.sym(|i, j| {
            let mut s = 0.0;
            for k in 0..n {
                for m in 0..n {
                    let fm = self.df[m];
                    s += self.gi(k, m)
                        * (self.ddh(j, k, m, i) - fm * self.dh(k, j, i) + self.ddh(i, k, m, j) - fm * self.dh(i, k, j)
                            + self.ric(m, i) * self.h(k, j)
                            + self.ric(m, j) * self.h(i, k));
                }
            }
            self.kappa * self.h(i, j) - 0.5 * s
        })
    }
}

/// `½ Lh + Hess_w + div_f* div_f h` with `w = ½ Tr h − k`, from operator jets.
pub(crate) fn phi_prime_soliton(chart: &Chart, h: &FieldExpr, k: &FieldExpr, x: &[f64]) -> Result<Vec<f64>> {
    let depth = h.depth().max(k.depth());
    let geom = chart.geom_at(x, 4 + depth)?;
    let hj = h.eval_with(chart, Some(&geom), x, 2)?;
    let kj = k.eval_with(chart, Some(&geom), x, 2)?;
    let w = geom.trace(&hj, 0, 1).scale(0.5).sub(&kj);
    let out = geom
        .l_op(&hj)
        .scale(0.5)
        .add(&geom.hess(&w))
        .add(&geom.divf_star(&geom.divf_sym(&hj)).truncate(0));
    Ok(out.truncate(0).value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart_geometry::TrigSeries;
    use crate::model_spaces::{make_cylinder, make_gaussian};
    use crate::poly::Poly;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const DT: f64 = 1e-3;

    fn random_data(seed: u64) -> (Chart, FieldExpr, FieldExpr, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chart = Chart::random_torus(&mut rng, 3, 0.1);
        let n = 3;
        let mut comps = vec![FieldExpr::Zero(crate::weighted_calculus::Rank::Scalar); n * n];
        for i in 0..n {
            for j in i..n {
                let s = FieldExpr::Trig(TrigSeries::random(&mut rng, n, 3, 0.3, 2));
                comps[i * n + j] = s.clone();
                comps[j * n + i] = s;
            }
        }
        let k = FieldExpr::Trig(TrigSeries::random(&mut rng, n, 3, 0.3, 2));
        (chart, FieldExpr::Sym(comps), k, vec![0.4, 1.9, 3.3])
    }

    fn fd<F: Fn(&Geom) -> Vec<f64>>(chart: &Chart, h: &FieldExpr, k: &FieldExpr, x: &[f64], dt: f64, q: F) -> Vec<f64> {
        let at = |t: f64| q(&chart.perturbed(h.clone(), k.clone(), t).geom_at(x, 2).unwrap());
        at(dt).iter().zip(at(-dt)).map(|(a, b)| (a - b) / (2.0 * dt)).collect()
    }

    fn gap(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    /// FD gap at `DT` and `DT/2`; the second must be about a quarter of the first.
    fn check<F: Fn(&Geom) -> Vec<f64> + Copy>(name: &str, formula: &[f64], chart: &Chart, h: &FieldExpr, k: &FieldExpr, x: &[f64], q: F) {
        let g1 = gap(&fd(chart, h, k, x, DT, q), formula);
        let g2 = gap(&fd(chart, h, k, x, DT / 2.0, q), formula);
        assert!(g1 < 1e-5, "{name}: gap {g1:e}");
        assert!(g1 < 1e-11 || (g1 / g2).log2() > 1.7, "{name}: gaps {g1:e} {g2:e}");
    }

    #[test]
    fn christoffel_scalar_and_ricci_variations() {
        for seed in [3, 11] {
            let (chart, h, k, x) = random_data(seed);
            let loc = Local::new(&chart, &h, &k, &x).unwrap();
            check("christoffel", &loc.christoffel(), &chart, &h, &k, &x, |g| g.gamma.iter().map(|j| j.value()).collect());
            check("scalar", &[loc.scalar_curvature()], &chart, &h, &k, &x, |g| vec![g.scal.value()]);
            check("ricci", &loc.ricci(), &chart, &h, &k, &x, |g| g.ric.value());
        }
    }

    #[test]
    fn hessian_and_phi_variations_off_soliton() {
        for seed in [5, 8] {
            let (chart, h, k, x) = random_data(seed);
            let loc = Local::new(&chart, &h, &k, &x).unwrap();
            check("hess_f", &loc.hess_f(), &chart, &h, &k, &x, |g| g.hess_f.value());
            check("phi", &loc.phi_general(), &chart, &h, &k, &x, |g| g.phi.value());
        }
    }

    #[test]
    fn soliton_forms_agree_with_operators() {
        let cyl = make_cylinder(2, 3).unwrap();
        let gau = make_gaussian(2).unwrap();
        let cases = [
            (cyl.chart.clone(), vec![0.3, -0.2, 0.7]),
            (gau.chart.clone(), vec![0.5, -1.1]),
        ];
        for (chart, x) in cases {
            let n = chart.dim;
            let a = chart.ambient_dim();
            let p = |s: &str| FieldExpr::poly(Poly::parse(s, a).unwrap());
            let comps: Vec<FieldExpr> =
                (0..n * n).map(|t| if t / n <= t % n { p(&format!("x{}^2 + 0.5*x{}", t / n + 1, t % n + 1)) } else { p(&format!("x{}^2 + 0.5*x{}", t % n + 1, t / n + 1)) }).collect();
            let h = FieldExpr::Sym(comps);
            let k = p("x1*x2 + 1");
            let loc = Local::new(&chart, &h, &k, &x).unwrap();
            let geom = chart.geom_at(&x, 6).unwrap();
            let hj = h.eval_with(&chart, Some(&geom), &x, 2).unwrap();
            let direct = geom.divf_star(&geom.divf_sym(&hj)).truncate(0).value();
            assert!(gap(&direct, &loc.divf_star_divf_soliton()) < 1e-10);
            let soliton = phi_prime_soliton(&chart, &h, &k, &x).unwrap();
            assert!(gap(&soliton, &loc.phi_general()) < 1e-10);
        }
    }
}
