//! Covariant tensors whose components are jets, and the geometric context
//! (metric, Christoffel symbols, curvature, weight) needed to differentiate them.
//!
//! All tensors carry lower indices. A covariant derivative appends its index
//! last, so `(∇T)_{i..., k} = ∂_k T_{i...} − Σ Γ^m_{k i_s} T_{...m...}`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::jet::{Jet, Layout};

#[derive(Clone, Debug)]
pub struct TJet {
    pub n: usize,
    pub rank: usize,
    pub c: Vec<Jet>,
}

fn digits(mut flat: usize, n: usize, rank: usize, out: &mut [usize]) {
    for s in (0..rank).rev() {
        out[s] = flat % n;
        flat /= n;
    }
}

fn flat_of(ix: &[usize], n: usize) -> usize {
    ix.iter().fold(0, |acc, &i| acc * n + i)
}

impl TJet {
    pub fn from_fn(n: usize, rank: usize, mut f: impl FnMut(&[usize]) -> Jet) -> TJet {
        let total = n.pow(rank as u32);
        let mut ix = vec![0; rank];
        let c = (0..total)
            .map(|flat| {
                digits(flat, n, rank, &mut ix);
                f(&ix)
            })
            .collect();
        TJet { n, rank, c }
    }

    pub fn scalar(j: Jet) -> TJet {
        TJet { n: 0, rank: 0, c: vec![j] }
    }

    pub fn zeros_like(proto: &Jet, n: usize, rank: usize) -> TJet {
        let z = Jet::constant(proto.layout(), proto.order(), 0.0);
        TJet { n, rank, c: vec![z; n.pow(rank as u32)] }
    }

    pub fn at(&self, ix: &[usize]) -> &Jet {
        &self.c[flat_of(ix, self.n)]
    }

    pub fn order(&self) -> usize {
        self.c.iter().map(|j| j.order()).min().unwrap_or(0)
    }

    pub fn value(&self) -> Vec<f64> {
        self.c.iter().map(|j| j.value()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.c.iter().fold(0.0, |m, j| m.max(j.value().abs()))
    }

    pub fn add(&self, o: &TJet) -> TJet {
        assert_eq!(self.rank, o.rank);
        TJet { n: self.n, rank: self.rank, c: self.c.iter().zip(&o.c).map(|(a, b)| a + b).collect() }
    }

    pub fn sub(&self, o: &TJet) -> TJet {
        assert_eq!(self.rank, o.rank);
        TJet { n: self.n, rank: self.rank, c: self.c.iter().zip(&o.c).map(|(a, b)| a - b).collect() }
    }

    pub fn scale(&self, s: f64) -> TJet {
        TJet { n: self.n, rank: self.rank, c: self.c.iter().map(|a| a.scale(s)).collect() }
    }

    /// Multiplies every component by a scalar jet.
    pub fn times(&self, s: &Jet) -> TJet {
        TJet { n: self.n, rank: self.rank, c: self.c.iter().map(|a| a * s).collect() }
    }

    pub fn truncate(&self, order: usize) -> TJet {
        TJet { n: self.n, rank: self.rank, c: self.c.iter().map(|a| a.truncate(order)).collect() }
    }

    /// `out[i_0..] = self[i_{perm[0]}, i_{perm[1]}, ...]`.
    pub fn permute(&self, perm: &[usize]) -> TJet {
        assert_eq!(perm.len(), self.rank);
        let mut src = vec![0; self.rank];
        TJet::from_fn(self.n, self.rank, |ix| {
            for (s, &p) in perm.iter().enumerate() {
                src[s] = ix[p];
            }
            // src holds the source index with slot s taken from output slot perm[s]
            self.at(&src).clone()
        })
    }

    pub fn outer(&self, o: &TJet) -> TJet {
        let n = self.n.max(o.n);
        let rank = self.rank + o.rank;
        TJet::from_fn(n, rank, |ix| self.at(&ix[..self.rank]) * o.at(&ix[self.rank..]))
    }

    /// Plain sum over slot `sa` of self and slot `sb` of `o` (no metric).
    pub fn pair(&self, sa: usize, o: &TJet, sb: usize) -> TJet {
        let n = self.n;
        let ra = self.rank - 1;
        let rb = o.rank - 1;
        let mut ia = vec![0; self.rank];
        let mut ib = vec![0; o.rank];
        TJet::from_fn(n, ra + rb, |ix| {
            let (pa, pb) = ix.split_at(ra);
            let mut acc: Option<Jet> = None;
            for m in 0..n {
                fill_with(&mut ia, pa, sa, m);
                fill_with(&mut ib, pb, sb, m);
                let t = self.at(&ia) * o.at(&ib);
                acc = Some(match acc {
                    None => t,
                    Some(a) => a + t,
                });
            }
            acc.expect("dimension at least one")
        })
    }

    /// Sum over two slots of the same tensor (no metric).
    pub fn self_pair(&self, s1: usize, s2: usize) -> TJet {
        assert!(s1 < s2);
        let n = self.n;
        let mut full = vec![0; self.rank];
        TJet::from_fn(n, self.rank - 2, |ix| {
            let mut acc: Option<Jet> = None;
            for m in 0..n {
                let mut k = 0;
                for (s, slot) in full.iter_mut().enumerate() {
                    if s == s1 || s == s2 {
                        *slot = m;
                    } else {
                        *slot = ix[k];
                        k += 1;
                    }
                }
                let t = self.at(&full).clone();
                acc = Some(match acc {
                    None => t,
                    Some(a) => a + t,
                });
            }
            acc.expect("dimension at least one")
        })
    }

    /// Symmetrization of a rank-2 tensor.
    pub fn sym(&self) -> TJet {
        assert_eq!(self.rank, 2);
        self.add(&self.permute(&[1, 0])).scale(0.5)
    }
}

fn fill_with(buf: &mut [usize], rest: &[usize], slot: usize, m: usize) {
    let mut k = 0;
    for (s, b) in buf.iter_mut().enumerate() {
        if s == slot {
            *b = m;
        } else {
            *b = rest[k];
            k += 1;
        }
    }
}

/// Metric, weight and curvature jets about one point.
#[derive(Clone, Debug)]
pub struct Geom {
    pub n: usize,
    pub kappa: f64,
    pub g: TJet,
    pub gi: TJet,
    /// `gamma[k][i][j] = Γ^k_{ij}` flattened.
    pub gamma: Vec<Jet>,
    pub f: Jet,
    pub df: TJet,
    pub hess_f: TJet,
    /// Paper convention: `R_{ijkl} = −⟨R_std(e_i, e_j) e_k, e_l⟩`, positive sectional on spheres
    /// in the form `R_{ijij} > 0`, and `Ric_{ij} = g^{ab} R_{aibj}`.
    pub riem: TJet,
    pub ric: TJet,
    pub scal: Jet,
    pub phi: TJet,
}

/// Inverse of a matrix of jets by expanding about its value.
pub fn inverse(g: &TJet) -> Result<TJet> {
    let n = g.n;
    let order = g.order();
    let g0 = DMatrix::from_fn(n, n, |i, j| g.at(&[i, j]).value());
    let a = g0.clone().try_inverse().ok_or_else(|| Error::NotPositiveDefinite(vec![]))?;
    let proto = g.at(&[0, 0]);
    let layout = proto.layout().clone();
    let cst = |v: f64| Jet::constant(&layout, order, v);
    // E = A (g - g0), nilpotent
    let e = TJet::from_fn(n, 2, |ix| {
        let mut acc = cst(0.0);
        for m in 0..n {
            let mut d = g.at(&[m, ix[1]]).truncate(order);
            d = d - g0[(m, ix[1])];
            acc.axpy(a[(ix[0], m)], &d);
        }
        acc
    });
    // (I + E)^{-1} = Σ (−E)^k, then multiply by A on the right
    let ident = TJet::from_fn(n, 2, |ix| cst(if ix[0] == ix[1] { 1.0 } else { 0.0 }));
    let mut sum = ident.clone();
    let mut term = ident;
    for _ in 0..order {
        term = term.pair(1, &e, 0).scale(-1.0);
        sum = sum.add(&term);
    }
    Ok(TJet::from_fn(n, 2, |ix| {
        let mut acc = cst(0.0);
        for m in 0..n {
            acc.axpy(a[(m, ix[1])], sum.at(&[ix[0], m]));
        }
        acc
    }))
}

impl Geom {
    /// Builds every derived quantity from metric and weight jets of the same order.
    pub fn new(g: TJet, f: Jet, kappa: f64) -> Result<Geom> {
        let n = g.n;
        if g.order() < 2 || f.order() < 2 {
            return Err(Error::InsufficientOrder { have: g.order().min(f.order()), need: 2 });
        }
        let gi = inverse(&g)?;
        let dg: Vec<Jet> = (0..n * n * n).map(|t| g.c[t / n].deriv(t % n)).collect();
        let dgat = |i: usize, j: usize, k: usize| &dg[(i * n + j) * n + k];
        let mut gamma = Vec::with_capacity(n * n * n);
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut acc = Jet::constant(f.layout(), f.order(), 0.0);
                    for m in 0..n {
                        let s = dgat(m, j, i) + dgat(m, i, j) - dgat(i, j, m);
                        acc.add_product(0.5, gi.at(&[k, m]), &s);
                    }
                    gamma.push(acc);
                }
            }
        }
        let gam = |k: usize, i: usize, j: usize| &gamma[(k * n + i) * n + j];
        // standard R^l_{ijk}
        let zero = Jet::constant(f.layout(), f.order(), 0.0);
        let mut rstd = vec![zero.clone(); n * n * n * n];
        for l in 0..n {
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let mut acc = gam(l, j, k).deriv(i) - gam(l, i, k).deriv(j);
                        for m in 0..n {
                            acc.add_product(1.0, gam(l, i, m), gam(m, j, k));
                            acc.add_product(-1.0, gam(l, j, m), gam(m, i, k));
                        }
                        rstd[((l * n + i) * n + j) * n + k] = acc;
                    }
                }
            }
        }
        let riem = TJet::from_fn(n, 4, |ix| {
            let (i, j, k, l) = (ix[0], ix[1], ix[2], ix[3]);
            let mut acc = zero.clone();
            for m in 0..n {
                acc.add_product(-1.0, g.at(&[l, m]), &rstd[((m * n + i) * n + j) * n + k]);
            }
            acc
        });
        let ric = TJet::from_fn(n, 2, |ix| {
            let mut acc = zero.clone();
            for a in 0..n {
                for b in 0..n {
                    acc.add_product(1.0, gi.at(&[a, b]), riem.at(&[a, ix[0], b, ix[1]]));
                }
            }
            acc
        });
        let mut scal = zero.clone();
        for a in 0..n {
            for b in 0..n {
                scal.add_product(1.0, gi.at(&[a, b]), ric.at(&[a, b]));
            }
        }
        let df = TJet::from_fn(n, 1, |ix| f.deriv(ix[0]));
        let mut geom = Geom {
            n,
            kappa,
            g,
            gi,
            gamma,
            f,
            df,
            hess_f: TJet::scalar(zero.clone()),
            riem,
            ric,
            scal,
            phi: TJet::scalar(zero),
        };
        geom.hess_f = geom.cov(&geom.df);
        geom.phi = geom.g.scale(kappa).sub(&geom.ric).sub(&geom.hess_f);
        Ok(geom)
    }

    pub fn gamma(&self, k: usize, i: usize, j: usize) -> &Jet {
        &self.gamma[(k * self.n + i) * self.n + j]
    }

    pub fn layout(&self) -> &std::sync::Arc<Layout> {
        self.f.layout()
    }

    pub fn cst(&self, v: f64) -> Jet {
        Jet::constant(self.f.layout(), self.f.order(), v)
    }

    /// Covariant derivative; the new index is last.
    pub fn cov(&self, t: &TJet) -> TJet {
        let n = self.n;
        let r = t.rank;
        let mut src = vec![0; r];
        TJet::from_fn(n, r + 1, |ix| {
            let (base, k) = (&ix[..r], ix[r]);
            let mut acc = t.at(base).deriv(k);
            for s in 0..r {
                src.copy_from_slice(base);
                for m in 0..n {
                    src[s] = m;
                    acc.add_product(-1.0, self.gamma(m, k, base[s]), t.at(&src));
                }
            }
            acc
        })
    }

    /// Raises slot `s` with the inverse metric.
    pub fn raise(&self, t: &TJet, s: usize) -> TJet {
        let n = self.n;
        let mut buf = vec![0; t.rank];
        TJet::from_fn(n, t.rank, |ix| {
            buf.copy_from_slice(ix);
            let mut acc = self.cst(0.0);
            for m in 0..n {
                buf[s] = m;
                acc.add_product(1.0, self.gi.at(&[ix[s], m]), t.at(&buf));
            }
            acc
        })
    }

    /// Metric contraction of slot `sa` of `a` with slot `sb` of `b`.
    pub fn contract(&self, a: &TJet, sa: usize, b: &TJet, sb: usize) -> TJet {
        self.raise(a, sa).pair(sa, b, sb)
    }

    /// Metric trace over two slots of one tensor.
    pub fn trace(&self, t: &TJet, s1: usize, s2: usize) -> TJet {
        self.raise(t, s1).self_pair(s1, s2)
    }

    /// Full metric inner product of two tensors of equal rank.
    pub fn inner(&self, a: &TJet, b: &TJet) -> Jet {
        assert_eq!(a.rank, b.rank);
        let mut cur = a.clone();
        for s in 0..a.rank {
            cur = self.raise(&cur, s);
        }
        let mut acc = self.cst(0.0);
        for (x, y) in cur.c.iter().zip(&b.c) {
            acc.add_product(1.0, x, y);
        }
        acc
    }

    pub fn laplacian(&self, t: &TJet) -> TJet {
        let r = t.rank;
        self.trace(&self.cov(&self.cov(t)), r, r + 1)
    }

    /// `ℒT = ΔT − ∇_{∇f} T`.
    pub fn drift_laplacian(&self, t: &TJet) -> TJet {
        let r = t.rank;
        let d = self.cov(t);
        let lap = self.trace(&self.cov(&d), r, r + 1);
        lap.sub(&self.contract(&d, r, &self.df, 0))
    }

    /// `div V − ⟨V, ∇f⟩` for a covector field.
    pub fn divf_vec(&self, v: &TJet) -> TJet {
        let d = self.cov(v);
        self.trace(&d, 0, 1).sub(&self.contract(v, 0, &self.df, 0))
    }

    /// `(div_f h)_i = h_{ij,j} − f_j h_{ij}`.
    pub fn divf_sym(&self, h: &TJet) -> TJet {
        let d = self.cov(h);
        self.trace(&d, 1, 2).sub(&self.contract(h, 1, &self.df, 0))
    }

    /// `−½(∇_i Y_j + ∇_j Y_i)`.
    pub fn divf_star(&self, y: &TJet) -> TJet {
        self.cov(y).sym().scale(-1.0)
    }

    pub fn p_op(&self, y: &TJet) -> TJet {
        self.divf_sym(&self.divf_star(y))
    }

    /// `R(B)_{ij} = R_{likj} B_{lk}` contracted with the metric.
    pub fn curv_action(&self, b: &TJet) -> TJet {
        // R_{l i k j} B^{l k}
        let braised = self.raise(&self.raise(b, 0), 1);
        let n = self.n;
        TJet::from_fn(n, 2, |ix| {
            let mut acc = self.cst(0.0);
            for l in 0..n {
                for k in 0..n {
                    acc.add_product(1.0, self.riem.at(&[l, ix[0], k, ix[1]]), braised.at(&[l, k]));
                }
            }
            acc
        })
    }

    /// `L B = ℒB + 2R(B)`.
    pub fn l_op(&self, b: &TJet) -> TJet {
        self.drift_laplacian(b).add(&self.curv_action(b).scale(2.0))
    }

    pub fn grad(&self, u: &TJet) -> TJet {
        TJet::from_fn(self.n, 1, |ix| u.c[0].deriv(ix[0]))
    }

    pub fn hess(&self, u: &TJet) -> TJet {
        self.cov(&self.grad(u))
    }

    /// Scalar tensor (rank 0) holding a jet.
    pub fn scalar(&self, j: Jet) -> TJet {
        TJet { n: self.n, rank: 0, c: vec![j] }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::Scalar;

    fn flat_geom(x: &[f64], order: usize, quad: bool) -> Geom {
        let v = Jet::variables(x, order);
        let n = x.len();
        let layout = v[0].layout().clone();
        let g = TJet::from_fn(n, 2, |ix| Jet::constant(&layout, order, if ix[0] == ix[1] { 1.0 } else { 0.0 }));
        let mut f = Jet::constant(&layout, order, 0.0);
        if quad {
            for vi in &v {
                f = f + vi.clone() * vi.clone() * 0.25;
            }
        }
        Geom::new(g, f, 0.5).unwrap()
    }

    #[test]
    fn gaussian_phi_vanishes() {
        let g = flat_geom(&[1.0, -2.0, 0.5], 4, true);
        assert!(g.phi.max_abs() < 1e-14);
        assert!(g.riem.max_abs() < 1e-14);
    }

    #[test]
    fn inverse_of_jet_matrix() {
        let v = Jet::variables(&[0.3, 0.2], 4);
        let g = TJet::from_fn(2, 2, |ix| {
            let base = if ix[0] == ix[1] { 1.0 } else { 0.0 };
            v[0].sin() * 0.1 * ((ix[0] + ix[1]) as f64 + 1.0) + base
        });
        let gi = inverse(&g).unwrap();
        let prod = g.pair(1, &gi, 0);
        for i in 0..2 {
            for j in 0..2 {
                let p = prod.at(&[i, j]);
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((p.value() - target).abs() < 1e-14);
                assert!(p.coeffs()[1..].iter().all(|c| c.abs() < 1e-13));
            }
        }
    }
}
