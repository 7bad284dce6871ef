//! Weighted operators `ℒ`, `div_f`, `div_f*`, `𝒫`, `L` on tensor fields, weighted
//! inner products and the duality between `div_f` and `div_f*`.
//!
//! Sobolev norms are weighted by `e^{−f}` throughout.

mod expr;
pub mod grid;
pub mod io;

use std::sync::Arc;

pub use expr::{Block, FieldExpr, Op, Rank};
pub use grid::{Grid, GridField, GridGeometry};

use crate::chart_geometry::{Chart, Patch};
use crate::error::{Error, Result};
use crate::model_spaces::PolyVectorBasis;
use crate::tensor::TJet;

#[derive(Clone, Debug)]
pub enum Repr {
    Closed(FieldExpr),
    Grid(GridField),
    Spectral { basis: Arc<PolyVectorBasis>, coeffs: Vec<f64> },
}

#[derive(Clone, Debug)]
pub struct TensorField {
    pub rank: Rank,
    pub chart: Arc<Chart>,
    pub repr: Repr,
}

impl TensorField {
    pub fn closed(chart: &Arc<Chart>, e: FieldExpr) -> Result<TensorField> {
        Ok(TensorField { rank: e.rank()?, chart: chart.clone(), repr: Repr::Closed(e) })
    }

    pub fn spectral(basis: &Arc<PolyVectorBasis>, coeffs: Vec<f64>) -> Result<TensorField> {
        if coeffs.len() != basis.len() {
            return Err(Error::Representation(format!("{} coefficients for a basis of {}", coeffs.len(), basis.len())));
        }
        Ok(TensorField { rank: basis.rank, chart: basis.chart.clone(), repr: Repr::Spectral { basis: basis.clone(), coeffs } })
    }

    pub fn grid(chart: &Arc<Chart>, g: GridField) -> TensorField {
        TensorField { rank: g.rank, chart: chart.clone(), repr: Repr::Grid(g) }
    }

    /// Closed-form expression of a closed or spectral field.
    pub fn expr(&self) -> Result<FieldExpr> {
        match &self.repr {
            Repr::Closed(e) => Ok(e.clone()),
            Repr::Spectral { basis, coeffs } => Ok(basis.combine(coeffs)),
            Repr::Grid(_) => Err(Error::Representation("grid field has no closed form; resample explicitly".into())),
        }
    }

    /// Component jets at a chart point (closed and spectral fields).
    pub fn jet_at(&self, x: &[f64], order: usize) -> Result<TJet> {
        self.expr()?.eval(&self.chart, x, order)
    }

    /// Component values at a point; grid fields are read at the nearest node only.
    pub fn value_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.repr {
            Repr::Grid(g) => g.value_nearest(x),
            _ => Ok(self.jet_at(x, 0)?.value()),
        }
    }

    /// Samples a closed or spectral field on a grid (the explicit spectral→grid conversion).
    pub fn resample(&self, grid: &Grid) -> Result<TensorField> {
        let e = self.expr()?;
        let g = GridField::sample(grid, &self.chart, &e)?;
        Ok(TensorField::grid(&self.chart, g))
    }

    fn map_closed(&self, op: Op, out: Rank) -> Result<TensorField> {
        let e = FieldExpr::apply(op, self.expr()?);
        Ok(TensorField { rank: out, chart: self.chart.clone(), repr: Repr::Closed(e) })
    }

    fn want(&self, r: Rank, what: &str) -> Result<()> {
        if self.rank != r {
            return Err(Error::Rank(format!("{what} expects {r:?}, got {:?}", self.rank)));
        }
        Ok(())
    }
}

/// `ℒF = ΔF − ∇_{∇f}F`.
pub fn drift_laplacian(f: &TensorField) -> Result<TensorField> {
    match &f.repr {
        Repr::Grid(g) => Ok(TensorField::grid(&f.chart, g.drift_laplacian(&f.chart)?)),
        _ => f.map_closed(Op::DriftLaplacian, f.rank),
    }
}

/// `div V − ⟨V, ∇f⟩`.
pub fn divf_vector(v: &TensorField) -> Result<TensorField> {
    v.want(Rank::Vector, "divf_vector")?;
    match &v.repr {
        Repr::Grid(g) => Ok(TensorField::grid(&v.chart, g.divf(&v.chart)?)),
        _ => v.map_closed(Op::Divf, Rank::Scalar),
    }
}

/// `(div_f h)_i = h_{ij,j} − f_j h_{ij}`.
pub fn divf_sym2(h: &TensorField) -> Result<TensorField> {
    h.want(Rank::Sym2, "divf_sym2")?;
    match &h.repr {
        Repr::Grid(g) => Ok(TensorField::grid(&h.chart, g.divf(&h.chart)?)),
        _ => h.map_closed(Op::Divf, Rank::Vector),
    }
}

/// `−½(∇_i Y_j + ∇_j Y_i)`.
pub fn divf_star(y: &TensorField) -> Result<TensorField> {
    y.want(Rank::Vector, "divf_star")?;
    match &y.repr {
        Repr::Grid(g) => Ok(TensorField::grid(&y.chart, g.divf_star(&y.chart)?)),
        _ => y.map_closed(Op::DivfStar, Rank::Sym2),
    }
}

/// `𝒫Y = div_f div_f* Y`.
pub fn p_op(y: &TensorField) -> Result<TensorField> {
    y.want(Rank::Vector, "P_op")?;
    match &y.repr {
        Repr::Grid(g) => {
            let s = g.divf_star(&y.chart)?;
            Ok(TensorField::grid(&y.chart, s.divf(&y.chart)?))
        }
        _ => y.map_closed(Op::P, Rank::Vector),
    }
}

/// Alternative soliton evaluation `−½(∇div_f Y + ℒY + κY)` of `𝒫Y`.
pub fn p_op_soliton_form(y: &TensorField) -> Result<TensorField> {
    y.want(Rank::Vector, "P_op")?;
    let e = y.expr()?;
    let kappa = y.chart.kappa;
    let alt = FieldExpr::apply(Op::Grad, FieldExpr::apply(Op::Divf, e.clone()))
        .plus(FieldExpr::apply(Op::DriftLaplacian, e.clone()))
        .plus(e.scaled(kappa))
        .scaled(-0.5);
    TensorField::closed(&y.chart, alt)
}

/// Max pointwise gap between the definition of `𝒫` and the soliton formula at the given points.
pub fn p_op_gap(y: &TensorField, points: &[Vec<f64>]) -> Result<f64> {
    let a = p_op(y)?;
    let b = p_op_soliton_form(y)?;
    let mut gap: f64 = 0.0;
    for x in points {
        let u = a.value_at(x)?;
        let v = b.value_at(x)?;
        gap = u.iter().zip(&v).fold(gap, |m, (p, q)| m.max((p - q).abs()));
    }
    Ok(gap)
}

/// `L B = ℒB + 2R(B)`.
pub fn l_op(b: &TensorField) -> Result<TensorField> {
    b.want(Rank::Sym2, "L_op")?;
    match &b.repr {
        Repr::Grid(_) => Err(Error::Representation("L_op is evaluated on closed or spectral fields".into())),
        _ => b.map_closed(Op::L, Rank::Sym2),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Measure {
    /// Weights already include `e^{−f} dV_g`.
    Weighted,
    /// Weights are `dV_g`; the weight `e^{−f}` is applied by the pairing.
    Unweighted,
    /// Nodes on `{b = r}`, weights include `|∇b| dA`.
    LevelSet { r: f64 },
}

#[derive(Clone, Debug)]
pub struct Quadrature {
    pub nodes: Vec<Vec<f64>>,
    /// Chart patch for each node on sphere products (empty otherwise).
    pub patches: Vec<Patch>,
    pub weights: Vec<f64>,
    pub measure: Measure,
    /// Polynomial degree integrated exactly, where known.
    pub exact_degree: Option<usize>,
}

impl Quadrature {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// The chart in which node `i` is expressed.
    pub fn chart_for(&self, base: &Arc<Chart>, i: usize) -> Arc<Chart> {
        match (self.patches.get(i), &base.metric) {
            (Some(p), crate::chart_geometry::MetricFamily::SphereProduct { ell, radius, patch }) if p != patch => {
                let mut c = (**base).clone();
                c.metric = crate::chart_geometry::MetricFamily::SphereProduct { ell: *ell, radius: *radius, patch: *p };
                Arc::new(c)
            }
            _ => base.clone(),
        }
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Values of a field at every quadrature node (components lower-index).
pub fn sample(f: &TensorField, q: &Quadrature) -> Result<Vec<Vec<f64>>> {
    let e = f.expr()?;
    let charts: Vec<Arc<Chart>> = patch_charts(&f.chart, q);
    (0..q.len())
        .map(|i| {
            let c = &charts[if q.patches.is_empty() { 0 } else { patch_index(q.patches[i]) }];
            Ok(e.eval(c, &q.nodes[i], 0)?.value())
        })
        .collect()
}

pub(crate) fn patch_index(p: Patch) -> usize {
    match p {
        Patch::Lower => 0,
        Patch::Upper => 1,
    }
}

pub(crate) fn patch_charts(base: &Arc<Chart>, q: &Quadrature) -> Vec<Arc<Chart>> {
    if q.patches.is_empty() {
        return vec![base.clone()];
    }
    let mut out = Vec::new();
    for p in [Patch::Lower, Patch::Upper] {
        let mut tmp = q.clone();
        tmp.patches = vec![p];
        out.push(tmp.chart_for(base, 0));
    }
    out
}

/// Metric inner product of two component vectors of the given rank at a node.
pub fn pointwise_inner(chart: &Chart, x: &[f64], rank: Rank, a: &[f64], b: &[f64]) -> Result<f64> {
    if rank == Rank::Scalar {
        return Ok(a[0] * b[0]);
    }
    let g = chart.metric_value(x)?;
    let gi = g.try_inverse().ok_or_else(|| Error::NotPositiveDefinite(x.to_vec()))?;
    let n = chart.dim;
    Ok(match rank {
        Rank::Vector => {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += gi[(i, j)] * a[i] * b[j];
                }
            }
            s
        }
        _ => {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        for l in 0..n {
                            s += gi[(i, k)] * gi[(j, l)] * a[i * n + j] * b[k * n + l];
                        }
                    }
                }
            }
            s
        }
    })
}

/// `∫ ⟨A, B⟩_g e^{−f}`, with the weight applied according to the quadrature measure.
pub fn weighted_inner(a: &TensorField, b: &TensorField, q: &Quadrature) -> Result<f64> {
    if a.rank != b.rank {
        return Err(Error::Rank(format!("inner product of {:?} and {:?}", a.rank, b.rank)));
    }
    if a.chart != b.chart {
        return Err(Error::ChartMismatch("fields live on different charts".into()));
    }
    match (&a.repr, &b.repr) {
        (Repr::Grid(ga), Repr::Grid(gb)) => return ga.weighted_inner(gb, &a.chart),
        (Repr::Grid(_), _) | (_, Repr::Grid(_)) => {
            return Err(Error::Representation("grid and closed fields are not combined implicitly".into()))
        }
        _ => {}
    }
    let va = sample(a, q)?;
    let vb = sample(b, q)?;
    let charts = patch_charts(&a.chart, q);
    let mut s = 0.0;
    for i in 0..q.len() {
        let c = &charts[if q.patches.is_empty() { 0 } else { patch_index(q.patches[i]) }];
        let mut w = q.weights[i];
        if !matches!(q.measure, Measure::Weighted) {
            w *= (-c.weight_value(&q.nodes[i])?).exp();
        }
        s += w * pointwise_inner(c, &q.nodes[i], a.rank, &va[i], &vb[i])?;
    }
    Ok(s)
}

pub fn weighted_norm(a: &TensorField, q: &Quadrature) -> Result<f64> {
    Ok(weighted_inner(a, a, q)?.max(0.0).sqrt())
}

/// `|∫⟨h, div_f* Y⟩ e^{−f} − ∫⟨Y, div_f h⟩ e^{−f}|`.
pub fn adjointness_gap(h: &TensorField, y: &TensorField, q: &Quadrature) -> Result<f64> {
    h.want(Rank::Sym2, "adjointness_gap")?;
    y.want(Rank::Vector, "adjointness_gap")?;
    let left = weighted_inner(h, &divf_star(y)?, q)?;
    let right = weighted_inner(y, &divf_sym2(h)?, q)?;
    Ok((left - right).abs())
}

/// Weighted `W^{k,2}` norm: `Σ_{j≤k} ‖∇^j F‖²` with covariant derivatives contracted by `g`.
pub fn weighted_sobolev_norm(a: &TensorField, k: usize, q: &Quadrature) -> Result<f64> {
    let e = a.expr()?;
    let charts = patch_charts(&a.chart, q);
    let mut s = 0.0;
    for i in 0..q.len() {
        let c = &charts[if q.patches.is_empty() { 0 } else { patch_index(q.patches[i]) }];
        let x = &q.nodes[i];
        let geom = c.geom_at(x, (k + e.depth()).max(2))?;
        let mut t = e.eval_with(c, Some(&geom), x, k)?;
        let mut w = q.weights[i];
        if !matches!(q.measure, Measure::Weighted) {
            w *= (-geom.f.value()).exp();
        }
        for j in 0..=k {
            if j > 0 {
                t = geom.cov(&t);
            }
            s += w * geom.inner(&t, &t).value();
        }
    }
    Ok(s.max(0.0).sqrt())
}

#[cfg(test)]
mod tests;
