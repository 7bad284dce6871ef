//! Pointwise residuals of the weighted curvature identities.
//!
//! In analytic mode every quantity comes from exact jets of `(g, f)`, so a
//! residual is pure roundoff. In finite-difference mode the metric jet at the
//! point comes from a 5-point stencil, while `φ`, `Ric`, `R`, `S` and `Hess_f`
//! are first computed at the nodes of a 3-point stencil (each from its own
//! 3-point metric jet) and then differentiated again. The two routes carry
//! different truncation errors, so the residual of an identity measures the
//! discretization error and shrinks like `step²`.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fd_jets, Chart, JetMode, TrigSeries};
use crate::error::{Error, Result};
use crate::jet::Jet;
use crate::tensor::{Geom, TJet};

/// Largest `|φ|` accepted for the identities that assume a soliton.
pub const SOLITON_GATE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentityId {
    SimonsRic,
    SimonsS,
    BochnerGrad,
    BochnerDivf,
    GradS,
    HessS,
    GradSNorm,
    DeltaHess,
    CommuteLdivfstar,
    CommuteDivfL,
    HessCommute,
    DivfRiemann,
    VecFourth,
    DbochnerVec,
    Dvast,
    DvastGeneral,
    AdjointFormula,
}

impl IdentityId {
    pub const ALL: [IdentityId; 17] = [
        IdentityId::SimonsRic,
        IdentityId::SimonsS,
        IdentityId::BochnerGrad,
        IdentityId::BochnerDivf,
        IdentityId::GradS,
        IdentityId::HessS,
        IdentityId::GradSNorm,
        IdentityId::DeltaHess,
        IdentityId::CommuteLdivfstar,
        IdentityId::CommuteDivfL,
        IdentityId::HessCommute,
        IdentityId::DivfRiemann,
        IdentityId::VecFourth,
        IdentityId::DbochnerVec,
        IdentityId::Dvast,
        IdentityId::DvastGeneral,
        IdentityId::AdjointFormula,
    ];

    pub fn name(self) -> &'static str {
        match self {
            IdentityId::SimonsRic => "simons_ric",
            IdentityId::SimonsS => "simons_S",
            IdentityId::BochnerGrad => "bochner_grad",
            IdentityId::BochnerDivf => "bochner_divf",
            IdentityId::GradS => "gradS",
            IdentityId::HessS => "hessS",
            IdentityId::GradSNorm => "gradS_norm",
            IdentityId::DeltaHess => "delta_hess",
            IdentityId::CommuteLdivfstar => "commute_Ldivfstar",
            IdentityId::CommuteDivfL => "commute_divfL",
            IdentityId::HessCommute => "hess_commute",
            IdentityId::DivfRiemann => "divf_riemann",
            IdentityId::VecFourth => "vec_fourth",
            IdentityId::DbochnerVec => "dbochner_vec",
            IdentityId::Dvast => "dvast",
            IdentityId::DvastGeneral => "dvast_general",
            IdentityId::AdjointFormula => "adjoint_formula",
        }
    }

    /// Identities that hold only where `φ = 0`.
    pub fn soliton_only(self) -> bool {
        matches!(self, IdentityId::HessCommute | IdentityId::Dvast | IdentityId::AdjointFormula)
    }

    /// The anchor text of the claim in the source literature.
    pub fn anchor(self) -> &'static str {
        match self {
            IdentityId::SimonsRic | IdentityId::SimonsS => "Simons-type differential equations for the Ricci",
            IdentityId::BochnerGrad | IdentityId::BochnerDivf => "we get the drift Bochner formulas",
            IdentityId::GradS | IdentityId::HessS => "The gradient and Hessian of $S$ are given by",
            IdentityId::GradSNorm => "Substituting the definition of $\\phi$",
            IdentityId::DeltaHess => "We have the following formula",
            IdentityId::CommuteLdivfstar | IdentityId::CommuteDivfL => {
                "If $V$ is a vector field and $h$ is a symmetric two-tensor"
            }
            IdentityId::HessCommute => "is a gradient Ricci soliton, then",
            IdentityId::DivfRiemann | IdentityId::VecFourth => "Moreover, if $V$ is vector field",
            IdentityId::DbochnerVec => "If $V$ is a vector field, then",
            IdentityId::Dvast | IdentityId::DvastGeneral => "Thus, for a Ricci soliton",
            IdentityId::AdjointFormula => "is a gradient shrinking soliton",
        }
    }
}

impl fmt::Display for IdentityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IdentityId {
    type Err = Error;

    fn from_str(s: &str) -> Result<IdentityId> {
        IdentityId::ALL.into_iter().find(|id| id.name() == s).ok_or_else(|| Error::UnknownIdentity(s.to_string()))
    }
}

/// Test fields for the identities: a covector `V`, a symmetric `h` and a
/// function `u`, each a trigonometric series in chart coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFields {
    pub seed: u64,
    /// Lower components `V_i`.
    pub v: Vec<TrigSeries>,
    /// Upper triangle of `h_ij`, row by row.
    pub h: Vec<TrigSeries>,
    pub u: TrigSeries,
}

impl TestFields {
    /// Seeded fields with total amplitude at most `0.1` per component.
    pub fn random(n: usize, seed: u64) -> TestFields {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amp = 0.1;
        let v = (0..n).map(|_| TrigSeries::random(&mut rng, n, 3, amp, 1)).collect();
        let h = (0..n * (n + 1) / 2).map(|_| TrigSeries::random(&mut rng, n, 3, amp, 1)).collect();
        let u = TrigSeries::random(&mut rng, n, 3, amp, 1);
        TestFields { seed, v, h, u }
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    fn jets(&self, x: &[f64], order: usize) -> (TJet, TJet, TJet) {
        let n = self.dim();
        let vars = Jet::variables(x, order);
        let v = TJet { n, rank: 1, c: self.v.iter().map(|s| s.eval(&vars)).collect() };
        let mut hc = vec![vars[0].scale(0.0); n * n];
        let mut e = 0;
        for i in 0..n {
            for j in i..n {
                let val = self.h[e].eval(&vars);
                e += 1;
                hc[j * n + i] = val.clone();
                hc[i * n + j] = val;
            }
        }
        let h = TJet { n, rank: 2, c: hc };
        let u = TJet { n, rank: 0, c: vec![self.u.eval(&vars)] };
        (v, h, u)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityResidual {
    pub id: IdentityId,
    /// Max-norm of LHS − RHS at the given step (or exactly, in analytic mode).
    pub residual: f64,
    /// Residual at half the step (finite-difference mode).
    pub residual_half: Option<f64>,
    /// `log₂(residual / residual_half)` (finite-difference mode).
    pub order_estimate: Option<f64>,
}

/// Evaluates one identity at `x`. The `step` is used only when the chart is in
/// finite-difference mode; the residual is then also computed at `step / 2`.
pub fn identity_residual(chart: &Chart, x: &[f64], id: IdentityId, step: f64, fields: &TestFields) -> Result<IdentityResidual> {
    if fields.dim() != chart.dim {
        return Err(Error::Precondition(format!("test fields of dimension {} on a {}-chart", fields.dim(), chart.dim)));
    }
    match chart.jet_mode {
        JetMode::Analytic => {
            let ctx = Ctx::analytic(chart, x, fields)?;
            ctx.gate(id)?;
            Ok(IdentityResidual { id, residual: ctx.residual(id), residual_half: None, order_estimate: None })
        }
        JetMode::FiniteDifference { .. } => {
            if !(step > 0.0) {
                return Err(Error::Precondition("finite-difference step must be positive".into()));
            }
            let a = Ctx::finite_difference(chart, x, step, fields)?;
            a.gate(id)?;
            let b = Ctx::finite_difference(chart, x, step / 2.0, fields)?;
            let (r1, r2) = (a.residual(id), b.residual(id));
            Ok(IdentityResidual { id, residual: r1, residual_half: Some(r2), order_estimate: Some((r1 / r2).log2()) })
        }
    }
}

/// Residuals of every identity that applies at `x` (soliton-only ones are skipped off solitons).
pub fn all_residuals(chart: &Chart, x: &[f64], step: f64, fields: &TestFields) -> Result<Vec<IdentityResidual>> {
    let mut out = Vec::new();
    for id in IdentityId::ALL {
        match identity_residual(chart, x, id, step, fields) {
            Ok(r) => out.push(r),
            Err(Error::NotSoliton { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

struct Ctx {
    geom: Geom,
    phi: TJet,
    ric: TJet,
    riem: TJet,
    scal: TJet,
    hess_f: TJet,
    v: TJet,
    h: TJet,
    u: TJet,
}

impl Ctx {
    fn analytic(chart: &Chart, x: &[f64], fields: &TestFields) -> Result<Ctx> {
        let pj = chart.point_jet(x, 4)?;
        let geom = Geom::new(pj.g, pj.f, chart.kappa)?;
        let (v, h, u) = fields.jets(x, 4);
        Ok(Ctx {
            phi: geom.phi.clone(),
            ric: geom.ric.clone(),
            riem: geom.riem.clone(),
            scal: geom.scalar(geom.scal.clone()),
            hess_f: geom.hess_f.clone(),
            geom,
            v,
            h,
            u,
        })
    }

    fn finite_difference(chart: &Chart, x: &[f64], step: f64, fields: &TestFields) -> Result<Ctx> {
        let n = chart.dim;
        let pj = chart.fd_point_jet(x, 4, step)?;
        let geom = Geom::new(pj.g, pj.f, chart.kappa)?;
        let (n2, n4) = (n * n, n.pow(4));
        // node values: phi | ric | riem | scal | hess_f
        let mut jets = fd_jets(n, x, 2, step, |p| {
            let q = chart.fd_point_jet(p, 2, step)?;
            let gm = Geom::new(q.g, q.f, chart.kappa)?;
            let mut out = Vec::with_capacity(3 * n2 + n4 + 1);
            out.extend(gm.phi.value());
            out.extend(gm.ric.value());
            out.extend(gm.riem.value());
            out.push(gm.scal.value());
            out.extend(gm.hess_f.value());
            Ok(out)
        })?;
        let hess_f = jets.split_off(2 * n2 + n4 + 1);
        let scal = jets.split_off(2 * n2 + n4);
        let riem = jets.split_off(2 * n2);
        let ric = jets.split_off(n2);
        let (v, h, u) = fields.jets(x, 4);
        Ok(Ctx {
            phi: TJet { n, rank: 2, c: jets },
            ric: TJet { n, rank: 2, c: ric },
            riem: TJet { n, rank: 4, c: riem },
            scal: TJet { n, rank: 0, c: scal },
            hess_f: TJet { n, rank: 2, c: hess_f },
            geom,
            v,
            h,
            u,
        })
    }

    fn gate(&self, id: IdentityId) -> Result<()> {
        let phi = self.geom.phi.max_abs();
        if id.soliton_only() && phi > SOLITON_GATE {
            return Err(Error::NotSoliton { id: id.name().to_string(), phi });
        }
        Ok(())
    }

    fn residual(&self, id: IdentityId) -> f64 {
        let g = &self.geom;
        let n = g.n;
        let k = g.kappa;
        let gi = g.gi.value();
        let gi_at = |a: usize, b: usize| gi[a * n + b];
        let at2 = |t: &[f64], a: usize, b: usize| t[a * n + b];
        let at3 = |t: &[f64], a: usize, b: usize, c: usize| t[(a * n + b) * n + c];
        let at4 = |t: &[f64], a: usize, b: usize, c: usize, d: usize| t[((a * n + b) * n + c) * n + d];
        let up2 = |t: &TJet| g.raise(&g.raise(t, 0), 1).value();
        let up1 = |t: &TJet| g.raise(t, 0).value();
        let build2 = |f: &dyn Fn(usize, usize) -> f64| -> Vec<f64> { (0..n * n).map(|t| f(t / n, t % n)).collect() };

        let phi = &self.phi;
        let dphi = g.cov(phi);
        let dphi_v = dphi.value();
        let trphi = g.trace(phi, 0, 1);
        let df_up = up1(&g.df);
        // (φ_{jk,ki})_{[j][i]} = T[j][i] with T = Σ g^{kk'} φ_{jk,k'i}
        let d2trace = || g.trace(&g.cov(&dphi), 1, 2).value();
        let riem_v = self.riem.value();
        // Σ R_{kjin} B^{nk}, indexed [i][j]
        let r_kjin = |b_up: &[f64]| {
            build2(&|i, j| {
                let mut s = 0.0;
                for kk in 0..n {
                    for nn in 0..n {
                        s += at4(&riem_v, kk, j, i, nn) * at2(b_up, nn, kk);
                    }
                }
                s
            })
        };

        match id {
            IdentityId::SimonsRic => {
                let lhs = g.l_op(&self.ric).value();
                let ric = self.ric.value();
                let rphi = r_kjin(&up2(phi));
                let lap = g.laplacian(phi).value();
                let htr = g.cov(&g.cov(&trphi)).value();
                let t = d2trace();
                let rhs = build2(&|i, j| {
                    2.0 * k * at2(&ric, i, j) + 2.0 * at2(&rphi, i, j) - at2(&lap, i, j) - at2(&htr, j, i)
                        + at2(&t, j, i)
                        + at2(&t, i, j)
                });
                gap(&lhs, &rhs)
            }
            IdentityId::SimonsS => {
                let lhs = g.drift_laplacian(&self.scal).value()[0];
                let s = self.scal.c[0].value();
                let ric2 = g.inner(&self.ric, &self.ric).value();
                let ricphi = g.inner(&self.ric, phi).value();
                let lap_tr = g.laplacian(&trphi).value()[0];
                let t = d2trace();
                let tt: f64 = (0..n).flat_map(|a| (0..n).map(move |b| (a, b))).map(|(a, b)| gi_at(a, b) * at2(&t, a, b)).sum();
                let rhs = 2.0 * k * s - 2.0 * ric2 - 2.0 * ricphi - 2.0 * lap_tr + 2.0 * tt;
                (lhs - rhs).abs()
            }
            IdentityId::BochnerGrad => {
                let du = g.grad(&self.u);
                let lhs = g.drift_laplacian(&du);
                let rhs = g.grad(&g.drift_laplacian(&self.u)).add(&du.scale(k)).sub(&g.contract(phi, 1, &du, 0));
                gap(&lhs.value(), &rhs.value())
            }
            IdentityId::BochnerDivf => {
                let v = &self.v;
                let dv = g.divf_vec(v);
                let lhs = g.drift_laplacian(&dv);
                let rhs = g
                    .divf_vec(&g.drift_laplacian(v))
                    .sub(&dv.scale(k))
                    .add(&g.divf_vec(&g.contract(phi, 1, v, 0)));
                gap(&lhs.value(), &rhs.value())
            }
            IdentityId::GradS => {
                let a = g.grad(&self.scal).scale(0.5).value();
                let b = g.trace(&g.cov(&self.ric), 1, 2).value();
                let c = g.contract(&self.ric, 1, &g.df, 0).sub(&g.grad(&trphi)).add(&g.trace(&dphi, 1, 2)).value();
                gap(&a, &b).max(gap(&a, &c))
            }
            IdentityId::HessS => {
                let a = g.cov(&g.cov(&self.scal)).scale(0.5).value();
                let t = d2trace();
                let fk = g.trace(&g.cov(&g.cov(&self.hess_f)), 0, 2).value();
                let b = build2(&|i, j| -at2(&t, i, j) - at2(&fk, i, j));
                let dric_f = g.contract(&g.cov(&self.ric), 1, &g.df, 0).value();
                let ric_hf = g.contract(&self.ric, 1, &self.hess_f, 0).value();
                let htr = g.cov(&g.cov(&trphi)).value();
                let c = build2(&|i, j| at2(&dric_f, i, j) + at2(&ric_hf, i, j) - at2(&htr, i, j) + at2(&t, i, j));
                gap(&a, &b).max(gap(&a, &c))
            }
            IdentityId::GradSNorm => {
                let f = g.scalar(g.f.clone());
                let df2 = g.inner(&g.df, &g.df);
                let q = TJet { n, rank: 0, c: vec![&(&self.scal.c[0] + &df2) - &g.f.scale(2.0 * k)] };
                let lhs1 = g.grad(&q).scale(0.5).value();
                let phif = g.contract(phi, 1, &g.df, 0).value();
                let dtr = g.grad(&trphi).value();
                let divphi = g.trace(&dphi, 1, 2).value();
                let rhs1: Vec<f64> = (0..n).map(|i| -phif[i] - dtr[i] + divphi[i]).collect();
                let lf = g.drift_laplacian(&f).add(&f.scale(2.0 * k));
                let lhs2 = g.grad(&lf).scale(0.5).value();
                let rhs2: Vec<f64> = (0..n).map(|i| phif[i] + 0.5 * dtr[i] - divphi[i]).collect();
                gap(&lhs1, &rhs1).max(gap(&lhs2, &rhs2))
            }
            IdentityId::DeltaHess => {
                let lhs = g.laplacian(&self.hess_f).value();
                let dric_f = g.contract(&g.cov(&self.ric), 2, &g.df, 0).value();
                let rf = r_kjin(&up2(&self.hess_f));
                let htr = g.cov(&g.cov(&trphi)).value();
                let t = d2trace();
                let rhs = build2(&|i, j| {
                    -at2(&dric_f, j, i) + 2.0 * at2(&rf, i, j) + at2(&htr, j, i) - at2(&t, j, i) - at2(&t, i, j)
                });
                gap(&lhs, &rhs)
            }
            IdentityId::CommuteLdivfstar => {
                let v = &self.v;
                let lhs = g.l_op(&g.divf_star(v)).value();
                let base = g.divf_star(&g.drift_laplacian(v).add(&v.scale(k))).value();
                let phim = g.raise(phi, 1).value();
                let dv = g.cov(v).value();
                let vup = up1(v);
                let rhs = build2(&|i, j| {
                    let mut s = at2(&base, i, j);
                    for m in 0..n {
                        s += 0.5 * (at2(&phim, j, m) * at2(&dv, i, m) + at2(&phim, i, m) * at2(&dv, j, m));
                        s -= 0.5
                            * vup[m]
                            * (2.0 * at3(&dphi_v, j, i, m) - at3(&dphi_v, j, m, i) - at3(&dphi_v, i, m, j));
                    }
                    s
                });
                gap(&lhs, &rhs)
            }
            IdentityId::CommuteDivfL => {
                let h = &self.h;
                let lhs = g.divf_sym(&g.l_op(h)).value();
                let dh = g.divf_sym(h);
                let base = g.drift_laplacian(&dh).add(&dh.scale(k)).value();
                let hm = g.raise(h, 1).value();
                let divphi = g.divf_sym(phi).value();
                let dhv = g.cov(h).value();
                let phi_up = up2(phi);
                let h_up = up2(h);
                let rhs: Vec<f64> = (0..n)
                    .map(|nn| {
                        let mut s = base[nn];
                        for j in 0..n {
                            s -= at2(&hm, nn, j) * divphi[j];
                        }
                        for a in 0..n {
                            for b in 0..n {
                                s -= at3(&dhv, nn, a, b) * at2(&phi_up, a, b);
                                s -= 0.5
                                    * at2(&h_up, a, b)
                                    * (2.0 * at3(&dphi_v, b, a, nn) - at3(&dphi_v, b, nn, a) - at3(&dphi_v, a, nn, b));
                            }
                        }
                        s
                    })
                    .collect();
                gap(&lhs, &rhs)
            }
            IdentityId::HessCommute => {
                let u = &self.u;
                let lhs = g.l_op(&g.hess(u)).value();
                let rhs = g.hess(&u.scale(2.0 * k).add(&g.drift_laplacian(u))).value();
                gap(&lhs, &rhs)
            }
            IdentityId::DivfRiemann => {
                let dr = g.trace(&g.cov(&self.riem), 0, 4).value();
                let mut worst: f64 = 0.0;
                for j in 0..n {
                    for i in 0..n {
                        for nn in 0..n {
                            let mut lhs = at3(&dr, j, i, nn);
                            for kk in 0..n {
                                lhs -= at4(&riem_v, nn, i, j, kk) * df_up[kk];
                            }
                            let rhs = at3(&dphi_v, j, i, nn) - at3(&dphi_v, j, nn, i);
                            worst = worst.max((lhs - rhs).abs());
                        }
                    }
                }
                worst
            }
            IdentityId::VecFourth => {
                let v = &self.v;
                let dv = g.cov(v);
                let lhs = g.trace(&g.cov(&g.cov(&dv)), 2, 3).value();
                let base = g.cov(&g.laplacian(v)).value();
                let ricm = g.raise(&self.ric, 1).value();
                let dvv = dv.value();
                let dv_up = up2(&dv);
                let vup = up1(v);
                let rdv = r_kjin(&dv_up);
                let rhs = build2(&|i, j| {
                    let mut s = at2(&base, i, j) + 2.0 * at2(&rdv, i, j);
                    for m in 0..n {
                        s += at2(&ricm, j, m) * at2(&dvv, i, m);
                        s += vup[m] * (at3(&dphi_v, j, i, m) - at3(&dphi_v, j, m, i));
                        for kk in 0..n {
                            s += at4(&riem_v, m, i, j, kk) * df_up[kk] * vup[m];
                        }
                    }
                    s
                });
                gap(&lhs, &rhs)
            }
            IdentityId::DbochnerVec => {
                let v = &self.v;
                let dv = g.cov(v);
                let lhs = g.drift_laplacian(&dv).value();
                let base = g.cov(&g.drift_laplacian(v)).value();
                let dvv = dv.value();
                let rdv = r_kjin(&up2(&dv));
                let phim = g.raise(phi, 1).value();
                let vup = up1(v);
                let rhs = build2(&|i, j| {
                    let mut s = at2(&base, i, j) + k * at2(&dvv, i, j) + 2.0 * at2(&rdv, i, j);
                    for m in 0..n {
                        s -= at2(&phim, j, m) * at2(&dvv, i, m);
                        s += vup[m] * (at3(&dphi_v, j, i, m) - at3(&dphi_v, j, m, i));
                    }
                    s
                });
                gap(&lhs, &rhs)
            }
            IdentityId::Dvast | IdentityId::DvastGeneral => {
                let v = &self.v;
                let lhs = g.p_op(v).scale(-2.0).value();
                let mut rhs = g.grad(&g.divf_vec(v)).add(&g.drift_laplacian(v));
                rhs = if id == IdentityId::Dvast {
                    rhs.add(&v.scale(k))
                } else {
                    rhs.add(&g.contract(&self.hess_f, 1, v, 0)).add(&g.contract(&self.ric, 1, v, 0))
                };
                gap(&lhs, &rhs.value())
            }
            IdentityId::AdjointFormula => {
                let h = &self.h;
                let lhs = g.divf_star(&g.divf_sym(h)).value();
                let dh = g.cov(h);
                let dhv = dh.value();
                let x = g.trace(&g.cov(&dh), 1, 2).value();
                let ricm = g.raise(&self.ric, 0).value();
                let hm = g.raise(h, 1).value();
                let hv = h.value();
                let rhs = build2(&|i, j| {
                    let mut s = at2(&x, j, i) + at2(&x, i, j);
                    for m in 0..n {
                        s -= df_up[m] * (at3(&dhv, m, j, i) + at3(&dhv, i, m, j));
                        // Ric^m_i h_mj + h_i^m Ric_mj
                        s += at2(&ricm, m, i) * at2(&hv, m, j) + at2(&hm, i, m) * at2(&self.ric.value(), m, j);
                    }
                    k * at2(&hv, i, j) - 0.5 * s
                });
                gap(&lhs, &rhs)
            }
        }
    }
}

fn gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart_geometry::{MetricFamily, Topology, WeightFamily};

    fn torus(seed: u64) -> Chart {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Chart::random_torus(&mut rng, 3, 0.1)
    }

    #[test]
    fn names_round_trip() {
        for id in IdentityId::ALL {
            assert_eq!(id.name().parse::<IdentityId>().unwrap(), id);
        }
        assert!(matches!("nope".parse::<IdentityId>(), Err(Error::UnknownIdentity(_))));
    }

    #[test]
    fn ricci_identity_for_covectors() {
        let chart = torus(3);
        let x = [0.3, 1.7, 4.0];
        let geom = chart.geom_at(&x, 4).unwrap();
        let (v, _, _) = TestFields::random(3, 11).jets(&x, 4);
        let d2 = geom.cov(&geom.cov(&v)).value();
        let vup = geom.raise(&v, 0).value();
        let r = geom.riem.value();
        let n = 3;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let lhs = d2[(i * n + j) * n + k] - d2[(i * n + k) * n + j];
                    let rhs: f64 = (0..n).map(|m| r[((k * n + j) * n + i) * n + m] * vup[m]).sum();
                    assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
                }
            }
        }
    }

    #[test]
    fn analytic_residuals_vanish_on_random_torus() {
        let chart = torus(5);
        let fields = TestFields::random(3, 9);
        for r in all_residuals(&chart, &[1.1, 0.4, 2.9], 0.0, &fields).unwrap() {
            assert!(r.residual < 1e-10, "{}: {}", r.id, r.residual);
        }
    }

    #[test]
    fn soliton_identities_are_gated() {
        let chart = torus(5);
        let fields = TestFields::random(3, 9);
        let e = identity_residual(&chart, &[1.0, 1.0, 1.0], IdentityId::Dvast, 0.0, &fields);
        assert!(matches!(e, Err(Error::NotSoliton { .. })));
    }

    #[test]
    fn flat_space_residuals_are_roundoff() {
        let chart = Chart::new(3, Topology::Box, vec![(-5.0, 5.0); 3], MetricFamily::Euclidean, WeightFamily::Zero);
        let fields = TestFields::random(3, 2);
        for r in all_residuals(&chart, &[0.2, -0.1, 0.4], 0.0, &fields).unwrap() {
            assert!(r.residual < 1e-12, "{}: {}", r.id, r.residual);
        }
    }

    #[test]
    fn finite_difference_residuals_converge_at_second_order() {
        let chart = torus(8).with_mode(JetMode::FiniteDifference { step: 0.04 });
        let fields = TestFields::random(3, 4);
        for r in all_residuals(&chart, &[2.0, 0.7, 5.5], 0.04, &fields).unwrap() {
            let order = r.order_estimate.unwrap();
            assert!(order > 1.9, "{}: order {order} ({} / {:?})", r.id, r.residual, r.residual_half);
        }
    }
}
