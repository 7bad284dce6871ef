//! Fields sampled on a uniform box grid. Covariant derivatives use centered
//! differences of the components plus the chart's Christoffel symbols at the
//! nodes (one-sided second-order differences on the boundary layer).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::expr::{FieldExpr, Rank};
use crate::chart_geometry::{Chart, MetricFamily};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dim: usize,
    /// Nodes per axis.
    pub points: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Grid {
    pub fn new(dim: usize, points: usize, lo: f64, hi: f64) -> Grid {
        assert!(points >= 5 && hi > lo);
        Grid { dim, points, lo, hi }
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.points - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coords(&self, mut idx: usize) -> Vec<usize> {
        let mut c = vec![0; self.dim];
        for v in (0..self.dim).rev() {
            c[v] = idx % self.points;
            idx /= self.points;
        }
        c
    }

    pub fn index(&self, c: &[usize]) -> usize {
        c.iter().fold(0, |acc, &i| acc * self.points + i)
    }

    pub fn node(&self, idx: usize) -> Vec<f64> {
        let h = self.step();
        self.coords(idx).iter().map(|&i| self.lo + h * i as f64).collect()
    }

    pub fn nodes(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    fn stride(&self, axis: usize) -> usize {
        self.points.pow((self.dim - 1 - axis) as u32)
    }
}

/// Per-node metric data needed by the grid operators.
#[derive(Clone, Debug)]
pub struct GridGeometry {
    n: usize,
    flat: bool,
    gi: Vec<Vec<f64>>,
    gamma: Vec<Vec<f64>>,
    df: Vec<Vec<f64>>,
    f: Vec<f64>,
    sqrt_det: Vec<f64>,
}

impl GridGeometry {
    pub fn new(grid: &Grid, chart: &Chart) -> Result<GridGeometry> {
        let n = grid.dim;
        if chart.dim != n {
            return Err(Error::ChartMismatch(format!("grid dimension {n} on a {}-chart", chart.dim)));
        }
        let flat = chart.metric == MetricFamily::Euclidean && chart.perturbation.is_none();
        let rows: Vec<(Vec<f64>, Vec<f64>, Vec<f64>, f64, f64)> = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let x = grid.node(i);
                if flat {
                    let fj = chart.weight_jet(&x, 1)?;
                    let df = (0..n).map(|k| fj.partial_idx(&[k])).collect();
                    let mut gi = vec![0.0; n * n];
                    for k in 0..n {
                        gi[k * n + k] = 1.0;
                    }
                    Ok((gi, Vec::new(), df, fj.value(), 1.0))
                } else {
                    let geom = chart.geom_at(&x, 2)?;
                    let gamma = geom.gamma.iter().map(|j| j.value()).collect();
                    let gi = geom.gi.value();
                    let df = geom.df.value();
                    let g = nalgebra::DMatrix::from_row_slice(n, n, &geom.g.value());
                    Ok((gi, gamma, df, geom.f.value(), g.determinant().sqrt()))
                }
            })
            .collect::<Result<_>>()?;
        let mut out = GridGeometry { n, flat, gi: vec![], gamma: vec![], df: vec![], f: vec![], sqrt_det: vec![] };
        for (gi, gamma, df, f, sd) in rows {
            out.gi.push(gi);
            out.gamma.push(gamma);
            out.df.push(df);
            out.f.push(f);
            out.sqrt_det.push(sd);
        }
        Ok(out)
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.f[i]
    }
}

/// Raw node-major tensor data of arbitrary rank.
#[derive(Clone, Debug)]
struct Raw {
    r: usize,
    data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    pub grid: Grid,
    pub rank: Rank,
    /// Node-major components, `n^rank` per node, lower indices.
    pub data: Vec<f64>,
}

fn ncomp(n: usize, r: usize) -> usize {
    n.pow(r as u32)
}

impl GridField {
    pub fn zeros(grid: &Grid, rank: Rank) -> GridField {
        let c = ncomp(grid.dim, rank.order());
        GridField { grid: grid.clone(), rank, data: vec![0.0; grid.len() * c] }
    }

    pub fn from_fn(grid: &Grid, rank: Rank, f: impl Fn(&[f64]) -> Vec<f64> + Sync) -> GridField {
        let data: Vec<f64> = (0..grid.len()).into_par_iter().flat_map_iter(|i| f(&grid.node(i))).collect();
        assert_eq!(data.len(), grid.len() * ncomp(grid.dim, rank.order()));
        GridField { grid: grid.clone(), rank, data }
    }

    pub fn sample(grid: &Grid, chart: &Chart, e: &FieldExpr) -> Result<GridField> {
        let rank = e.rank()?;
        let rows: Vec<Vec<f64>> =
            (0..grid.len()).into_par_iter().map(|i| Ok(e.eval(chart, &grid.node(i), 0)?.value())).collect::<Result<_>>()?;
        Ok(GridField { grid: grid.clone(), rank, data: rows.concat() })
    }

    pub fn ncomp(&self) -> usize {
        ncomp(self.grid.dim, self.rank.order())
    }

    pub fn at(&self, node: usize) -> &[f64] {
        let c = self.ncomp();
        &self.data[node * c..(node + 1) * c]
    }

    pub fn value_nearest(&self, x: &[f64]) -> Result<Vec<f64>> {
        let h = self.grid.step();
        let mut c = Vec::with_capacity(self.grid.dim);
        for &xi in x {
            let k = ((xi - self.grid.lo) / h).round();
            if k < 0.0 || k > (self.grid.points - 1) as f64 {
                return Err(Error::OutOfBounds(x.to_vec()));
            }
            c.push(k as usize);
        }
        Ok(self.at(self.grid.index(&c)).to_vec())
    }

    pub fn scale(&self, s: f64) -> GridField {
        GridField { grid: self.grid.clone(), rank: self.rank, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn add(&self, o: &GridField) -> GridField {
        assert_eq!(self.rank, o.rank);
        GridField { grid: self.grid.clone(), rank: self.rank, data: self.data.iter().zip(&o.data).map(|(a, b)| a + b).collect() }
    }

    pub fn sub(&self, o: &GridField) -> GridField {
        self.add(&o.scale(-1.0))
    }

    /// Multiplies every node by a scalar profile.
    pub fn mul_nodes(&self, s: &[f64]) -> GridField {
        let c = self.ncomp();
        let data = self.data.iter().enumerate().map(|(k, v)| v * s[k / c]).collect();
        GridField { grid: self.grid.clone(), rank: self.rank, data }
    }

    fn raw(&self) -> Raw {
        Raw { r: self.rank.order(), data: self.data.clone() }
    }

    fn from_raw(grid: &Grid, raw: Raw) -> Result<GridField> {
        let rank = match raw.r {
            0 => Rank::Scalar,
            1 => Rank::Vector,
            2 => Rank::Sym2,
            r => return Err(Error::Rank(format!("rank {r} grid field"))),
        };
        Ok(GridField { grid: grid.clone(), rank, data: raw.data })
    }

    /// Sup over nodes of the metric norm, restricted by a node mask.
    pub fn sup_norm(&self, chart: &Chart, mask: impl Fn(&[f64]) -> bool + Sync) -> Result<f64> {
        let geo = GridGeometry::new(&self.grid, chart)?;
        Ok((0..self.grid.len())
            .into_par_iter()
            .filter(|&i| mask(&self.grid.node(i)))
            .map(|i| norm2(&geo, i, self.rank.order(), self.at(i), self.at(i)).max(0.0).sqrt())
            .reduce(|| 0.0, f64::max))
    }

    /// Trapezoid `∫ ⟨a, b⟩_g e^{−f} dV_g` over the box.
    pub fn weighted_inner(&self, o: &GridField, chart: &Chart) -> Result<f64> {
        let geo = GridGeometry::new(&self.grid, chart)?;
        Ok(self.weighted_inner_with(o, &geo, |_| true))
    }

    pub fn weighted_inner_with(&self, o: &GridField, geo: &GridGeometry, mask: impl Fn(&[f64]) -> bool + Sync) -> f64 {
        let h = self.grid.step();
        let vol = h.powi(self.grid.dim as i32);
        let r = self.rank.order();
        // collected before summing so the result does not depend on the thread schedule
        let terms: Vec<f64> = (0..self.grid.len())
            .into_par_iter()
            .filter(|&i| mask(&self.grid.node(i)))
            .map(|i| {
                let edge = self.grid.coords(i).iter().filter(|&&c| c == 0 || c == self.grid.points - 1).count();
                let tw = 0.5f64.powi(edge as i32);
                tw * vol * geo.sqrt_det[i] * (-geo.f[i]).exp() * norm2(geo, i, r, self.at(i), o.at(i))
            })
            .collect();
        terms.iter().sum()
    }

    pub fn weighted_norm(&self, chart: &Chart) -> Result<f64> {
        Ok(self.weighted_inner(self, chart)?.max(0.0).sqrt())
    }

    /// Weighted `W^{1,2}` norm `(‖F‖² + ‖∇F‖²)^{1/2}`.
    pub fn weighted_w12(&self, chart: &Chart, mask: impl Fn(&[f64]) -> bool + Sync + Copy) -> Result<f64> {
        let geo = GridGeometry::new(&self.grid, chart)?;
        let d = cov(&self.grid, &geo, &self.raw());
        let a = self.weighted_inner_with(self, &geo, mask);
        let h = self.grid.step();
        let vol = h.powi(self.grid.dim as i32);
        let c = ncomp(self.grid.dim, d.r);
        let terms: Vec<f64> = (0..self.grid.len())
            .into_par_iter()
            .filter(|&i| mask(&self.grid.node(i)))
            .map(|i| {
                let v = &d.data[i * c..(i + 1) * c];
                vol * geo.sqrt_det[i] * (-geo.f[i]).exp() * norm2(&geo, i, d.r, v, v)
            })
            .collect();
        let b: f64 = terms.iter().sum();
        Ok((a + b).max(0.0).sqrt())
    }

    pub fn drift_laplacian(&self, chart: &Chart) -> Result<GridField> {
        let geo = GridGeometry::new(&self.grid, chart)?;
        let t = self.raw();
        let d = cov(&self.grid, &geo, &t);
        let dd = cov(&self.grid, &geo, &d);
        let lap = trace_last_two(&self.grid, &geo, &dd);
        let drift = contract_last_with_df(&self.grid, &geo, &d);
        let data = lap.data.iter().zip(&drift.data).map(|(a, b)| a - b).collect();
        GridField::from_raw(&self.grid, Raw { r: t.r, data })
    }

    /// `div_f` of a vector (to a scalar) or of a symmetric 2-tensor (to a vector).
    pub fn divf(&self, chart: &Chart) -> Result<GridField> {
        let geo = GridGeometry::new(&self.grid, chart)?;
        self.divf_with(&geo)
    }

    pub fn divf_with(&self, geo: &GridGeometry) -> Result<GridField> {
        let t = self.raw();
        if t.r == 0 {
            return Err(Error::Rank("div_f of a scalar".into()));
        }
        let d = cov(&self.grid, geo, &t);
        let div = trace_last_two(&self.grid, geo, &d);
        let drift = contract_last_with_df(&self.grid, geo, &t);
        let data = div.data.iter().zip(&drift.data).map(|(a, b)| a - b).collect();
        GridField::from_raw(&self.grid, Raw { r: t.r - 1, data })
    }

    pub fn divf_star(&self, chart: &Chart) -> Result<GridField> {
        let geo = GridGeometry::new(&self.grid, chart)?;
        self.divf_star_with(&geo)
    }

    pub fn divf_star_with(&self, geo: &GridGeometry) -> Result<GridField> {
        if self.rank != Rank::Vector {
            return Err(Error::Rank("div_f* needs a vector field".into()));
        }
        let n = self.grid.dim;
        let d = cov(&self.grid, geo, &self.raw());
        let mut data = vec![0.0; d.data.len()];
        for node in 0..self.grid.len() {
            let b = node * n * n;
            for i in 0..n {
                for j in 0..n {
                    data[b + i * n + j] = -0.5 * (d.data[b + i * n + j] + d.data[b + j * n + i]);
                }
            }
        }
        Ok(GridField { grid: self.grid.clone(), rank: Rank::Sym2, data })
    }

    /// Covariant derivative of a scalar or vector (to a vector or a general 2-tensor, stored flat).
    pub fn cov_data(&self, geo: &GridGeometry) -> Vec<f64> {
        cov(&self.grid, geo, &self.raw()).data
    }

    /// Tensor-product cubic Lagrange interpolation of all components at `x`.
    pub fn interpolate(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.grid.dim;
        let h = self.grid.step();
        let p = self.grid.points;
        let mut base = vec![0usize; n];
        let mut wts = vec![[0.0f64; 4]; n];
        for v in 0..n {
            let s = (x[v] - self.grid.lo) / h;
            if !(s >= 0.0 && s <= (p - 1) as f64) {
                return Err(Error::OutOfBounds(x.to_vec()));
            }
            let i0 = (s.floor() as isize - 1).clamp(0, p as isize - 4) as usize;
            base[v] = i0;
            let t = s - i0 as f64;
            // Lagrange basis on nodes 0,1,2,3
            wts[v] = [
                -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0,
                t * (t - 2.0) * (t - 3.0) / 2.0,
                -t * (t - 1.0) * (t - 3.0) / 2.0,
                t * (t - 1.0) * (t - 2.0) / 6.0,
            ];
        }
        let c = self.ncomp();
        let mut out = vec![0.0; c];
        let mut idx = vec![0usize; n];
        for flat in 0..4usize.pow(n as u32) {
            let mut t = flat;
            let mut w = 1.0;
            for v in (0..n).rev() {
                let o = t % 4;
                t /= 4;
                idx[v] = base[v] + o;
                w *= wts[v][o];
            }
            let vals = self.at(self.grid.index(&idx));
            for k in 0..c {
                out[k] += w * vals[k];
            }
        }
        Ok(out)
    }
}

fn norm2(geo: &GridGeometry, node: usize, r: usize, a: &[f64], b: &[f64]) -> f64 {
    let n = geo.n;
    match r {
        0 => a[0] * b[0],
        _ if geo.flat => a.iter().zip(b).map(|(x, y)| x * y).sum(),
        1 => {
            let gi = &geo.gi[node];
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += gi[i * n + j] * a[i] * b[j];
                }
            }
            s
        }
        2 => {
            let gi = &geo.gi[node];
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        for l in 0..n {
                            s += gi[i * n + k] * gi[j * n + l] * a[i * n + j] * b[k * n + l];
                        }
                    }
                }
            }
            s
        }
        _ => {
            // rank 3: raise every slot
            let gi = &geo.gi[node];
            let mut s = 0.0;
            for i in 0..n.pow(3) {
                let (i0, i1, i2) = (i / (n * n), (i / n) % n, i % n);
                for j in 0..n.pow(3) {
                    let (j0, j1, j2) = (j / (n * n), (j / n) % n, j % n);
                    s += gi[i0 * n + j0] * gi[i1 * n + j1] * gi[i2 * n + j2] * a[i] * b[j];
                }
            }
            s
        }
    }
}

/// Second-order first derivative along `axis` of component data with `c` values per node.
fn partial(grid: &Grid, data: &[f64], c: usize, axis: usize) -> Vec<f64> {
    let h = grid.step();
    let st = grid.stride(axis) * c;
    let p = grid.points;
    let mut out = vec![0.0; data.len()];
    out.par_chunks_mut(c).enumerate().for_each(|(node, o)| {
        let k = grid.coords(node)[axis];
        let b = node * c;
        for comp in 0..c {
            let at = |off: isize| data[(b as isize + off * st as isize) as usize + comp];
            o[comp] = if k == 0 {
                (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
            } else if k == p - 1 {
                (3.0 * at(0) - 4.0 * at(-1) + at(-2)) / (2.0 * h)
            } else {
                (at(1) - at(-1)) / (2.0 * h)
            };
        }
    });
    out
}

/// Covariant derivative (new index last).
fn cov(grid: &Grid, geo: &GridGeometry, t: &Raw) -> Raw {
    let n = grid.dim;
    let c = ncomp(n, t.r);
    let parts: Vec<Vec<f64>> = (0..n).map(|k| partial(grid, &t.data, c, k)).collect();
    let cc = c * n;
    let mut data = vec![0.0; grid.len() * cc];
    data.par_chunks_mut(cc).enumerate().for_each(|(node, o)| {
        for comp in 0..c {
            for k in 0..n {
                let mut v = parts[k][node * c + comp];
                if !geo.flat {
                    let gam = &geo.gamma[node];
                    // digits of comp
                    let mut ix = vec![0; t.r];
                    let mut tmp = comp;
                    for s in (0..t.r).rev() {
                        ix[s] = tmp % n;
                        tmp /= n;
                    }
                    for s in 0..t.r {
                        for m in 0..n {
                            let mut src = ix.clone();
                            src[s] = m;
                            let si = src.iter().fold(0, |a, &i| a * n + i);
                            v -= gam[(m * n + k) * n + ix[s]] * t.data[node * c + si];
                        }
                    }
                }
                o[comp * n + k] = v;
            }
        }
    });
    Raw { r: t.r + 1, data }
}

/// Metric trace over the last two slots.
fn trace_last_two(grid: &Grid, geo: &GridGeometry, t: &Raw) -> Raw {
    let n = grid.dim;
    let c = ncomp(n, t.r);
    let oc = ncomp(n, t.r - 2);
    let mut data = vec![0.0; grid.len() * oc];
    data.par_chunks_mut(oc).enumerate().for_each(|(node, o)| {
        let gi = &geo.gi[node];
        for comp in 0..oc {
            let mut s = 0.0;
            for a in 0..n {
                for b in 0..n {
                    let g = if geo.flat { if a == b { 1.0 } else { continue } } else { gi[a * n + b] };
                    s += g * t.data[node * c + comp * n * n + a * n + b];
                }
            }
            o[comp] = s;
        }
    });
    Raw { r: t.r - 2, data }
}

/// `T_{..., a} ∇^a f`.
fn contract_last_with_df(grid: &Grid, geo: &GridGeometry, t: &Raw) -> Raw {
    let n = grid.dim;
    let c = ncomp(n, t.r);
    let oc = ncomp(n, t.r - 1);
    let mut data = vec![0.0; grid.len() * oc];
    data.par_chunks_mut(oc).enumerate().for_each(|(node, o)| {
        let gi = &geo.gi[node];
        let df = &geo.df[node];
        let up: Vec<f64> = (0..n).map(|a| (0..n).map(|b| gi[a * n + b] * df[b]).sum()).collect();
        for comp in 0..oc {
            o[comp] = (0..n).map(|a| t.data[node * c + comp * n + a] * up[a]).sum();
        }
    });
    Raw { r: t.r - 1, data }
}
