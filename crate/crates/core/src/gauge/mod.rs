//! Time-one flows on a box grid, pull-backs of the Gaussian soliton, the
//! linearized gauge and center-of-mass conditions, and the iterative gauge
//! fixing with center-of-mass balancing.
//!
//! Everything here lives on the flat Gaussian `(Rⁿ, δ, |x|²/4)`: `h` and `k`
//! are grid perturbations of the metric and the weight, vector fields are
//! stored by components (upper and lower agree).

mod interp;
#[cfg(test)]
mod tests;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model_spaces::{Dir, ModelGeometry, ModelKind, PolyVectorBasis};
use crate::poly::Poly;
use crate::spectral::{log_slope, PSolver};
use crate::weighted_calculus::{Grid, GridField, GridGeometry, Rank};
use interp::Spline;

pub const DEFAULT_POINTS: usize = 161;
pub const DEFAULT_HALF_WIDTH: f64 = 10.0;
pub const DEFAULT_RADIUS: f64 = 8.0;
/// Degree of the polynomial vector basis used to solve `𝒫Y = ½ div_f h`.
pub const DEFAULT_DEGREE: usize = 4;
/// RK4 steps per unit flow time.
pub const FLOW_STEPS: usize = 8;
/// Smallest Jacobian determinant accepted anywhere on the grid.
pub const MIN_JACOBIAN: f64 = 0.5;
/// Width of the smoothed corners of the cutoff ramp.
pub const CORNER: f64 = 0.25;
/// Largest `sup |h|` accepted by the gauge loop.
pub const SMALLNESS: f64 = 0.1;
pub const SWEEP_LEVELS: usize = 4;

pub fn default_grid(n: usize) -> Grid {
    Grid::new(n, DEFAULT_POINTS, -DEFAULT_HALF_WIDTH, DEFAULT_HALF_WIDTH)
}

fn require_gaussian(model: &ModelGeometry, grid: &Grid) -> Result<()> {
    match model.kind {
        ModelKind::Gaussian { n } if n == grid.dim => Ok(()),
        ModelKind::Gaussian { n } => Err(Error::ChartMismatch(format!("{}-dimensional grid on gaussian:{n}", grid.dim))),
        k => Err(Error::Precondition(format!("gauge fixing runs on the Gaussian, not {k}"))),
    }
}

fn same_grid(a: &GridField, b: &Grid) -> Result<()> {
    if &a.grid != b {
        return Err(Error::ChartMismatch("fields live on different grids".into()));
    }
    Ok(())
}

fn check_rank(f: &GridField, rank: Rank, what: &str) -> Result<()> {
    if f.rank != rank {
        return Err(Error::Rank(format!("{what} must be {rank:?}, got {:?}", f.rank)));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// cutoff

fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / t).exp();
        let b = (-1.0 / (1.0 - t)).exp();
        a / (a + b)
    }
}

const TABLE: usize = 2048;

/// Smooth monotone cutoff in `b̄`: one on `b̄ ≤ R − 1`, zero on `b̄ ≥ R`, and
/// linear in between apart from `C^∞` corners of width `corner`.
#[derive(Clone, Debug)]
pub struct Cutoff {
    pub radius: f64,
    pub corner: f64,
    cum: Vec<f64>,
    scale: f64,
}

impl Cutoff {
    pub fn new(radius: f64, corner: f64) -> Result<Cutoff> {
        if !(corner > 0.0 && corner <= 0.5) || !(radius > 1.0) {
            return Err(Error::Precondition(format!("cutoff needs R > 1 and corner in (0, 1/2], got {radius}, {corner}")));
        }
        let slope = |s: f64| smooth_step(s / corner) * smooth_step((1.0 - s) / corner);
        let d = 1.0 / TABLE as f64;
        let mut cum = vec![0.0; TABLE + 1];
        for j in 0..TABLE {
            let a = j as f64 * d;
            cum[j + 1] = cum[j] + d / 6.0 * (slope(a) + 4.0 * slope(a + 0.5 * d) + slope(a + d));
        }
        let scale = 1.0 / cum[TABLE];
        Ok(Cutoff { radius, corner, cum, scale })
    }

    fn slope_unscaled(&self, s: f64) -> f64 {
        smooth_step(s / self.corner) * smooth_step((1.0 - s) / self.corner)
    }

    /// Ramp profile in `s = R − b̄`.
    pub fn profile(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        if s >= 1.0 {
            return 1.0;
        }
        let d = 1.0 / TABLE as f64;
        let j = ((s / d) as usize).min(TABLE - 1);
        let u = s / d - j as f64;
        let (y0, y1) = (self.cum[j], self.cum[j + 1]);
        let (m0, m1) = (self.slope_unscaled(j as f64 * d) * d, self.slope_unscaled((j + 1) as f64 * d) * d);
        let (u2, u3) = (u * u, u * u * u);
        let v = (2.0 * u3 - 3.0 * u2 + 1.0) * y0 + (u3 - 2.0 * u2 + u) * m0 + (-2.0 * u3 + 3.0 * u2) * y1 + (u3 - u2) * m1;
        (v * self.scale).clamp(0.0, 1.0)
    }

    /// `max |∇η|`, attained on the linear part of the ramp.
    pub fn slope_bound(&self) -> f64 {
        self.scale
    }

    pub fn at(&self, b: f64) -> f64 {
        self.profile(self.radius - b)
    }

    pub fn on_grid(&self, model: &ModelGeometry, grid: &Grid) -> Result<Vec<f64>> {
        (0..grid.len()).into_par_iter().map(|i| Ok(self.at(model.b_at(&grid.node(i))?))).collect()
    }
}

// ---------------------------------------------------------------------------
// flows

#[derive(Clone, Debug)]
pub struct Generator {
    pub field: GridField,
    pub time: f64,
}

/// A diffeomorphism sampled at the grid nodes.
#[derive(Clone, Debug)]
pub struct DiffeoMap {
    pub grid: Grid,
    /// `Φ(x) − x`, `n` per node.
    pub displacement: Vec<f64>,
    /// `∂_i Φ^k` at `[node·n² + k·n + i]`.
    pub jacobian: Vec<f64>,
    pub generators: Vec<Generator>,
}

impl DiffeoMap {
    pub fn identity(grid: &Grid) -> DiffeoMap {
        let n = grid.dim;
        let mut jacobian = vec![0.0; grid.len() * n * n];
        for node in 0..grid.len() {
            for k in 0..n {
                jacobian[node * n * n + k * n + k] = 1.0;
            }
        }
        DiffeoMap { grid: grid.clone(), displacement: vec![0.0; grid.len() * n], jacobian, generators: Vec::new() }
    }

    pub fn image(&self, node: usize) -> Vec<f64> {
        let n = self.grid.dim;
        self.grid.node(node).iter().zip(&self.displacement[node * n..(node + 1) * n]).map(|(x, d)| x + d).collect()
    }

    pub fn jacobian_at(&self, node: usize) -> &[f64] {
        let n2 = self.grid.dim * self.grid.dim;
        &self.jacobian[node * n2..(node + 1) * n2]
    }

    pub fn displacement_sup(&self) -> f64 {
        let n = self.grid.dim;
        self.displacement.chunks(n).map(|d| d.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max)
    }

    pub fn min_jacobian_det(&self) -> f64 {
        let n = self.grid.dim;
        self.jacobian.par_chunks(n * n).map(|j| DMatrix::from_row_slice(n, n, j).determinant()).reduce(|| f64::INFINITY, f64::min)
    }
}

fn boundary_layer(grid: &Grid, node: usize, width: usize) -> bool {
    grid.coords(node).iter().any(|&c| c < width || c + width >= grid.points)
}

/// Integrates `ẋ = V(x)` for time `time` from every node with `steps` RK4
/// steps, carrying the Jacobian through the variational equation `J̇ = DV J`.
pub fn flow(v: &GridField, time: f64, steps: usize) -> Result<DiffeoMap> {
    check_rank(v, Rank::Vector, "flow generator")?;
    let grid = &v.grid;
    let n = grid.dim;
    let margin = (0..grid.len()).filter(|&i| boundary_layer(grid, i, 2)).map(|i| v.at(i).iter().fold(0.0f64, |m, x| m.max(x.abs()))).fold(0.0, f64::max);
    if margin > 0.0 {
        return Err(Error::Precondition(format!("generator is {margin:e} on the grid margin; it must vanish there")));
    }
    if steps == 0 {
        return Err(Error::Precondition("flow needs at least one step".into()));
    }
    let it = Spline::new(v);
    let dt = time / steps as f64;
    let rhs = |y: &[f64]| -> Result<Vec<f64>> {
        let (val, gr) = it.eval_grad(&y[..n]).map_err(|_| Error::Flow(format!("trajectory left the grid at {:?}", &y[..n])))?;
        let mut out = vec![0.0; n + n * n];
        out[..n].copy_from_slice(&val);
        for k in 0..n {
            for i in 0..n {
                out[n + k * n + i] = (0..n).map(|a| gr[k * n + a] * y[n + a * n + i]).sum();
            }
        }
        Ok(out)
    };
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..grid.len())
        .into_par_iter()
        .map(|node| {
            let x0 = grid.node(node);
            let mut y = x0.clone();
            for k in 0..n {
                y.extend((0..n).map(|i| if i == k { 1.0 } else { 0.0 }));
            }
            for _ in 0..steps {
                let k1 = rhs(&y)?;
                let y2: Vec<f64> = y.iter().zip(&k1).map(|(a, b)| a + 0.5 * dt * b).collect();
                let k2 = rhs(&y2)?;
                let y3: Vec<f64> = y.iter().zip(&k2).map(|(a, b)| a + 0.5 * dt * b).collect();
                let k3 = rhs(&y3)?;
                let y4: Vec<f64> = y.iter().zip(&k3).map(|(a, b)| a + dt * b).collect();
                let k4 = rhs(&y4)?;
                for j in 0..y.len() {
                    y[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
                }
            }
            let disp = (0..n).map(|k| y[k] - x0[k]).collect();
            Ok((disp, y[n..].to_vec()))
        })
        .collect::<Result<_>>()?;
    let mut map = DiffeoMap { grid: grid.clone(), displacement: Vec::new(), jacobian: Vec::new(), generators: Vec::new() };
    for (d, j) in rows {
        map.displacement.extend(d);
        map.jacobian.extend(j);
    }
    let det = map.min_jacobian_det();
    if det < MIN_JACOBIAN {
        return Err(Error::Flow(format!("Jacobian determinant {det:.3} below {MIN_JACOBIAN}")));
    }
    map.generators.push(Generator { field: v.clone(), time });
    Ok(map)
}

pub fn flow_time_one(v: &GridField) -> Result<DiffeoMap> {
    flow(v, 1.0, FLOW_STEPS)
}

// ---------------------------------------------------------------------------
// pull-backs

#[derive(Clone, Debug)]
pub struct Pulled {
    /// `Φ*(ḡ + h) − ḡ`.
    pub h: GridField,
    /// `(f̄ + k)∘Φ − f̄`.
    pub k: GridField,
    /// Largest gap between the spline and cubic Lagrange interpolants at cell centers.
    pub interpolation_error: f64,
}

fn interpolation_gap(field: &GridField, it: &Spline) -> f64 {
    let g = &field.grid;
    let cells = g.points - 1;
    let count = cells.pow(g.dim as u32);
    let h = g.step();
    (0..count)
        .into_par_iter()
        .map(|c| {
            let mut rest = c;
            let mut x = vec![0.0; g.dim];
            for v in (0..g.dim).rev() {
                x[v] = g.lo + h * ((rest % cells) as f64 + 0.5);
                rest /= cells;
            }
            let a = it.eval(&x).unwrap_or_default();
            let b = field.interpolate(&x).unwrap_or_default();
            a.iter().zip(&b).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()))
        })
        .reduce(|| 0.0, f64::max)
}

/// `g′_{ij} = Φᵏᵢ Φˡⱼ g_{kl}∘Φ` and `f′ = f∘Φ` for `g = δ + h`, `f = |x|²/4 + k`.
pub fn pullback(model: &ModelGeometry, map: &DiffeoMap, h: &GridField, k: &GridField) -> Result<Pulled> {
    let grid = &map.grid;
    require_gaussian(model, grid)?;
    same_grid(h, grid)?;
    same_grid(k, grid)?;
    check_rank(h, Rank::Sym2, "h")?;
    check_rank(k, Rank::Scalar, "k")?;
    let n = grid.dim;
    let (hi, ki) = (Spline::new(h), Spline::new(k));
    let rows: Vec<(Vec<f64>, f64)> = (0..grid.len())
        .into_par_iter()
        .map(|node| {
            let x = grid.node(node);
            let y = map.image(node);
            let hv = hi.eval(&y)?;
            let kv = ki.eval(&y)?[0];
            let j = map.jacobian_at(node);
            let mut out = vec![0.0; n * n];
            for a in 0..n {
                for b in 0..n {
                    let mut s = 0.0;
                    for p in 0..n {
                        for q in 0..n {
                            let g = if p == q { 1.0 } else { 0.0 } + hv[p * n + q];
                            s += j[p * n + a] * j[q * n + b] * g;
                        }
                    }
                    out[a * n + b] = s - if a == b { 1.0 } else { 0.0 };
                }
            }
            Ok((out, model.f_at(&y)? + kv - model.f_at(&x)?))
        })
        .collect::<Result<_>>()?;
    let mut hd = Vec::with_capacity(grid.len() * n * n);
    let mut kd = Vec::with_capacity(grid.len());
    for (a, b) in rows {
        hd.extend(a);
        kd.push(b);
    }
    let interpolation_error = interpolation_gap(h, &hi).max(interpolation_gap(k, &ki));
    Ok(Pulled {
        h: GridField { grid: grid.clone(), rank: Rank::Sym2, data: hd },
        k: GridField { grid: grid.clone(), rank: Rank::Scalar, data: kd },
        interpolation_error,
    })
}

/// First variation of the pulled-back metric along `V`:
/// `V^k h_{ij,k} + V^k_i (δ + h)_{kj} + V^k_j (δ + h)_{ik}`, derivatives taken
/// with the same nodal differences the flow uses.
pub fn metric_variation(v: &GridField, h: &GridField) -> Result<GridField> {
    check_rank(v, Rank::Vector, "V")?;
    check_rank(h, Rank::Sym2, "h")?;
    same_grid(h, &v.grid)?;
    let grid = &v.grid;
    let n = grid.dim;
    let (vi, hi) = (Spline::new(v), Spline::new(h));
    let dv: Vec<&[f64]> = (0..n).map(|a| vi.partial(a)).collect();
    let dh: Vec<&[f64]> = (0..n).map(|a| hi.partial(a)).collect();
    let mut data = vec![0.0; grid.len() * n * n];
    data.par_chunks_mut(n * n).enumerate().for_each(|(node, o)| {
        let vv = v.at(node);
        let hv = h.at(node);
        let g = |p: usize, q: usize| if p == q { 1.0 } else { 0.0 } + hv[p * n + q];
        let d = |k: usize, i: usize| dv[i][node * n + k];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += vv[k] * dh[k][node * n * n + i * n + j] + d(k, i) * g(k, j) + d(k, j) * g(i, k);
                }
                o[i * n + j] = s;
            }
        }
    });
    Ok(GridField { grid: grid.clone(), rank: Rank::Sym2, data })
}

/// `−2 div_f* V = ∇_i V_j + ∇_j V_i` with the flow's nodal differences.
pub fn lie_metric(v: &GridField) -> Result<GridField> {
    metric_variation(v, &GridField::zeros(&v.grid, Rank::Sym2))
}

// ---------------------------------------------------------------------------
// integrals

fn trapezoid(model: &ModelGeometry, grid: &Grid, f: impl Fn(usize, &[f64]) -> f64 + Sync) -> Result<f64> {
    let vol = grid.step().powi(grid.dim as i32);
    (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = grid.node(i);
            let edge = grid.coords(i).iter().filter(|&&c| c == 0 || c == grid.points - 1).count();
            Ok(0.5f64.powi(edge as i32) * vol * (-model.f_at(&x)?).exp() * f(i, &x))
        })
        .collect::<Result<Vec<f64>>>()
        .map(|t| t.iter().sum())
}

fn trace(h: &[f64], n: usize) -> f64 {
    (0..n).map(|i| h[i * n + i]).sum()
}

/// `𝓑_i(h, k) = ∫ x_i (k − ½ tr h) e^{−f̄}` by the trapezoid rule.
pub fn center_of_mass_grid(model: &ModelGeometry, h: &GridField, k: &GridField) -> Result<Vec<f64>> {
    let grid = &h.grid;
    same_grid(k, grid)?;
    let n = grid.dim;
    (0..n).map(|i| trapezoid(model, grid, |node, x| x[i] * (k.at(node)[0] - 0.5 * trace(h.at(node), n)))).collect()
}

/// `∫ ⟨∂_{x_i}, V⟩ e^{−f̄}`.
pub fn translation_moments(model: &ModelGeometry, v: &GridField) -> Result<Vec<f64>> {
    let n = v.grid.dim;
    (0..n).map(|i| trapezoid(model, &v.grid, |node, _| v.at(node)[i])).collect()
}

pub fn grid_mass(model: &ModelGeometry, grid: &Grid) -> Result<f64> {
    trapezoid(model, grid, |_, _| 1.0)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `sup` of the Euclidean norm of the node values and of their first derivatives.
fn c1_norm(f: &GridField) -> f64 {
    let it = Spline::new(f);
    let n = f.grid.dim;
    let c = f.ncomp();
    (0..f.grid.len())
        .map(|node| {
            let mut s = norm(f.at(node));
            for a in 0..n {
                s = s.max(norm(&it.partial(a)[node * c..(node + 1) * c]));
            }
            s
        })
        .fold(0.0, f64::max)
}

/// `C²` analogue of [`c1_norm`].
fn c2_norm(f: &GridField) -> f64 {
    let it = Spline::new(f);
    let n = f.grid.dim;
    (0..n).fold(c1_norm(f), |m, a| m.max(c1_norm(&GridField { grid: f.grid.clone(), rank: f.rank, data: it.partial(a).to_vec() })))
}

// ---------------------------------------------------------------------------
// linearizations

/// Gaps measured over a dyadic sequence of amplitudes and the fitted power.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Sweep {
    pub amplitudes: Vec<f64>,
    pub gaps: Vec<f64>,
    pub exponent: f64,
}

pub fn sweep(start: f64, levels: usize, gap: impl Fn(f64) -> Result<f64>) -> Result<Sweep> {
    let amplitudes: Vec<f64> = (0..levels).map(|j| start / 2f64.powi(j as i32)).collect();
    let gaps = amplitudes.iter().map(|&a| gap(a)).collect::<Result<Vec<_>>>()?;
    let exponent = log_slope(&amplitudes, &gaps)?;
    Ok(Sweep { amplitudes, gaps, exponent })
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()))
}

/// `‖(Φ_t*g − Φ_{−t}*g)/2t − g′‖_∞` for the flows of `±tV` and `g = δ + h`.
pub fn linearization_gap(model: &ModelGeometry, v: &GridField, h: &GridField, t: f64) -> Result<f64> {
    let k = GridField::zeros(&v.grid, Rank::Scalar);
    let plus = pullback(model, &flow_time_one(&v.scale(t))?, h, &k)?;
    let minus = pullback(model, &flow_time_one(&v.scale(-t))?, h, &k)?;
    let formula = metric_variation(v, h)?;
    let fd: Vec<f64> = plus.h.data.iter().zip(&minus.h.data).map(|(a, b)| (a - b) / (2.0 * t)).collect();
    Ok(max_abs_diff(&fd, &formula.data))
}

pub fn linearization_sweep(model: &ModelGeometry, v: &GridField, h: &GridField, start: f64) -> Result<Sweep> {
    sweep(start, SWEEP_LEVELS, |t| linearization_gap(model, v, h, t))
}

/// `‖div_f(Φ*g − ḡ) − div_f h + 2𝒫V‖_∞` with `h` and `V` both scaled by `amplitude`.
pub fn divf_quadratic_gap(model: &ModelGeometry, v: &GridField, h: &GridField, amplitude: f64) -> Result<f64> {
    let grid = &v.grid;
    let (hs, vs) = (h.scale(amplitude), v.scale(amplitude));
    let pulled = pullback(model, &flow_time_one(&vs)?, &hs, &GridField::zeros(grid, Rank::Scalar))?;
    let rest = pulled.h.sub(&hs).sub(&lie_metric(&vs)?);
    let geo = GridGeometry::new(grid, &model.chart)?;
    Ok(rest.divf_with(&geo)?.data.iter().fold(0.0f64, |m, x| m.max(x.abs())))
}

pub fn divf_quadratic_sweep(model: &ModelGeometry, v: &GridField, h: &GridField, start: f64) -> Result<Sweep> {
    sweep(start, SWEEP_LEVELS, |a| divf_quadratic_gap(model, v, h, a))
}

/// The center-of-mass derivative along the flow of `V`, three ways, and the
/// bound on its distance from the translation moments.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CenterOfMassDerivative {
    /// `(𝓑(Φ_t) − 𝓑(Φ_{−t})) / 2t`.
    pub fd: Vec<f64>,
    /// Integral of the pointwise derivative of `k − ½ tr h`.
    pub pointwise: Vec<f64>,
    /// The integrated-by-parts form `∫⟨x_i ∇(k − ½ tr h) + div_f(x_i h) + ∂_{x_i}, V⟩ e^{−f̄}`.
    pub formula: Vec<f64>,
    pub translation: Vec<f64>,
    /// `∫ |V| (|x| |∇(k − ½ tr h)| + |div_f(x_i h)|) e^{−f̄}`.
    pub bound: Vec<f64>,
    /// `max_i |fd − pointwise|`.
    pub gap: f64,
    /// `max_i |pointwise − formula|` (discrete integration by parts).
    pub parts_gap: f64,
}

impl CenterOfMassDerivative {
    pub fn bound_holds(&self, slack: f64) -> bool {
        (0..self.formula.len()).all(|i| (self.formula[i] - self.translation[i]).abs() <= self.bound[i] + slack)
    }
}

/// Integrals of the pointwise derivative of `k − ½ tr h` against `x_i`, of the
/// integrated-by-parts form, and of the bound on its distance from the
/// translation moments.
#[allow(clippy::type_complexity)]
fn derivative_terms(model: &ModelGeometry, v: &GridField, h: &GridField, k: &GridField) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let grid = &v.grid;
    same_grid(h, grid)?;
    same_grid(k, grid)?;
    let n = grid.dim;
    let (vi, hi, ki) = (Spline::new(v), Spline::new(h), Spline::new(k));
    // s = k − ½ tr h and its gradient
    let ds = |node: usize, a: usize| ki.partial(a)[node] - 0.5 * trace(&hi.partial(a)[node * n * n..(node + 1) * n * n], n);
    let pointwise_at = |node: usize, x: &[f64]| -> f64 {
        let vv = v.at(node);
        let hv = h.at(node);
        let mut s = 0.0;
        for a in 0..n {
            let dv_aa = vi.partial(a)[node * n + a];
            s += (0.5 * x[a] + ki.partial(a)[node]) * vv[a] - dv_aa;
            for b in 0..n {
                s -= vi.partial(a)[node * n + b] * hv[a * n + b];
            }
            s -= 0.5 * vv[a] * trace(&hi.partial(a)[node * n * n..(node + 1) * n * n], n);
        }
        s
    };
    // div_f(x_i h)_b = Σ_a ∂_a(x_i h_{ab}) − x_i h_{ab} x_a / 2
    let divf_xh = |node: usize, x: &[f64], i: usize, b: usize| -> f64 {
        let hv = h.at(node);
        let mut s = hv[i * n + b];
        for a in 0..n {
            s += x[i] * hi.partial(a)[node * n * n + a * n + b] - 0.5 * x[i] * x[a] * hv[a * n + b];
        }
        s
    };
    let mut pointwise = Vec::with_capacity(n);
    let mut formula = Vec::with_capacity(n);
    let mut bound = Vec::with_capacity(n);
    for i in 0..n {
        pointwise.push(trapezoid(model, grid, |node, x| x[i] * pointwise_at(node, x))?);
        formula.push(trapezoid(model, grid, |node, x| {
            let vv = v.at(node);
            (0..n).map(|b| (x[i] * ds(node, b) + divf_xh(node, x, i, b) + if b == i { 1.0 } else { 0.0 }) * vv[b]).sum()
        })?);
        bound.push(trapezoid(model, grid, |node, x| {
            let grad: Vec<f64> = (0..n).map(|b| ds(node, b)).collect();
            let dx: Vec<f64> = (0..n).map(|b| divf_xh(node, x, i, b)).collect();
            norm(v.at(node)) * (norm(x) * norm(&grad) + norm(&dx))
        })?);
    }
    Ok((pointwise, formula, bound))
}

/// `∫ |V| (|x| |∇(k − ½ tr h)| + |div_f(x_i h)|) e^{−f̄}` for each `i`.
pub fn center_of_mass_bound(model: &ModelGeometry, v: &GridField, h: &GridField, k: &GridField) -> Result<Vec<f64>> {
    Ok(derivative_terms(model, v, h, k)?.2)
}

pub fn cb_derivative(model: &ModelGeometry, v: &GridField, h: &GridField, k: &GridField, t: f64) -> Result<CenterOfMassDerivative> {
    let grid = &v.grid;
    require_gaussian(model, grid)?;
    let plus = pullback(model, &flow_time_one(&v.scale(t))?, h, k)?;
    let minus = pullback(model, &flow_time_one(&v.scale(-t))?, h, k)?;
    let bp = center_of_mass_grid(model, &plus.h, &plus.k)?;
    let bm = center_of_mass_grid(model, &minus.h, &minus.k)?;
    let fd: Vec<f64> = bp.iter().zip(&bm).map(|(a, b)| (a - b) / (2.0 * t)).collect();

    let (pointwise, formula, bound) = derivative_terms(model, v, h, k)?;
    let translation = translation_moments(model, v)?;
    let gap = max_abs_diff(&fd, &pointwise);
    let parts_gap = max_abs_diff(&pointwise, &formula);
    Ok(CenterOfMassDerivative { fd, pointwise, formula, translation, bound, gap, parts_gap })
}

pub fn cb_derivative_sweep(model: &ModelGeometry, v: &GridField, h: &GridField, k: &GridField, start: f64) -> Result<Sweep> {
    sweep(start, SWEEP_LEVELS, |t| Ok(cb_derivative(model, v, h, k, t)?.gap))
}

// ---------------------------------------------------------------------------
// balancing and the gauge loop

/// Polynomial solver for `𝒫Y = ½ div_f h` with right-hand sides paired on the grid.
#[derive(Clone, Debug)]
pub struct GaugeSolver {
    pub model: ModelGeometry,
    pub grid: Grid,
    pub cutoff: Cutoff,
    psolver: PSolver,
    raw: Vec<GridField>,
    raw_star: Vec<GridField>,
    geo: GridGeometry,
    eta: Vec<f64>,
    mass: f64,
}

#[derive(Clone, Debug)]
pub struct BalanceFix {
    /// `Y + T`.
    pub v: GridField,
    pub y_coeffs: Vec<f64>,
    /// Coefficients `a_j` of the translation `T = Σ a_j ∂_{x_j}`.
    pub translation: Vec<f64>,
    /// `𝓑(h, k)` before the fix.
    pub center_of_mass: Vec<f64>,
    /// `‖div_f(h − 2 div_f* V)‖ / ‖div_f h‖` on the grid (weighted `L²`).
    pub projection_mismatch: f64,
    /// `max_i |∫⟨∂_{x_i}, V⟩ e^{−f̄} + 𝓑_i|`.
    pub balance_error: f64,
    /// Largest pairing of the right-hand side with the kernel of `𝒫`.
    pub kernel_pairing: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub v_sup: f64,
    pub v_c1: f64,
    pub translation: Vec<f64>,
    pub projection_mismatch: f64,
    pub balance_error: f64,
    pub kernel_pairing: f64,
    pub displacement_sup: f64,
    pub min_jacobian: f64,
    pub interpolation_error: f64,
    /// Quadratic tolerance for `|𝓑|` after this step: `mass · ‖V‖²_{C²}` plus the
    /// bound on `|𝓕(V) − ∫⟨∂_{x_i}, V⟩ e^{−f̄}|`.
    pub balance_tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaugeRecord {
    pub iteration: usize,
    /// Weighted `W^{1,2}` norm of `div_f h` over the grid.
    pub divf_w12: f64,
    /// `sup |div_f h|` on `{b̄ ≤ R − 2}`.
    pub divf_c0: f64,
    pub center_of_mass: Vec<f64>,
    pub center_of_mass_norm: f64,
    /// `sup |h|` on `{b̄ ≤ R − 2}`.
    pub h_sup: f64,
    pub k_sup: f64,
    pub step: Option<StepRecord>,
}

#[derive(Clone, Debug)]
pub struct GaugeState {
    pub iteration: usize,
    pub h: GridField,
    pub k: GridField,
    pub radius: f64,
    pub record: GaugeRecord,
    /// Records of every state up to and including this one.
    pub history: Vec<GaugeRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stop {
    /// Input already satisfies both conditions exactly.
    Exact,
    /// The residual fell by less than a factor 2 at this iteration.
    Plateau(usize),
    MaxIter,
}

#[derive(Clone, Debug)]
pub struct GaugeRun {
    pub states: Vec<GaugeState>,
    pub stop: Stop,
}

impl GaugeRun {
    pub fn records(&self) -> &[GaugeRecord] {
        &self.states.last().expect("a run has at least one state").history
    }
}

/// Input `h₀ = η(Φ_W*ḡ − ḡ)`, `k₀ = η(f̄∘Φ_W − f̄)` for a cut-off polynomial generator `W`.
#[derive(Clone, Debug)]
pub struct PureGauge {
    pub h: GridField,
    pub k: GridField,
    pub generator: GridField,
}

impl GaugeSolver {
    pub fn new(model: &ModelGeometry, grid: Grid, radius: f64, degree: usize) -> Result<GaugeSolver> {
        require_gaussian(model, &grid)?;
        if radius + 1.0 > grid.hi.min(-grid.lo) {
            return Err(Error::Precondition(format!("cutoff radius {radius} leaves no margin in [{}, {}]", grid.lo, grid.hi)));
        }
        let n = grid.dim;
        let basis = PolyVectorBasis::hermite(model, Rank::Vector, degree)?;
        let mut raw = Vec::with_capacity(basis.raw.len());
        let mut raw_star = Vec::with_capacity(basis.raw.len());
        for e in &basis.raw {
            let Dir::Coord(c) = e.dir else {
                return Err(Error::Rank("vector basis with a non-vector element".into()));
            };
            let grads: Vec<Poly> = (0..n).map(|a| e.poly.deriv(a)).collect();
            raw.push(GridField::from_fn(&grid, Rank::Vector, |x| {
                let mut out = vec![0.0; n];
                out[c] = e.poly.eval_f64(x);
                out
            }));
            raw_star.push(GridField::from_fn(&grid, Rank::Sym2, |x| {
                let mut out = vec![0.0; n * n];
                for a in 0..n {
                    let d = grads[a].eval_f64(x);
                    out[c * n + a] -= 0.5 * d;
                    out[a * n + c] -= 0.5 * d;
                }
                out
            }));
        }
        let psolver = PSolver::new(basis)?;
        let geo = GridGeometry::new(&grid, &model.chart)?;
        let cutoff = Cutoff::new(radius, CORNER)?;
        let eta = cutoff.on_grid(model, &grid)?;
        let mass = grid_mass(model, &grid)?;
        Ok(GaugeSolver { model: model.clone(), grid, cutoff, psolver, raw, raw_star, geo, eta, mass })
    }

    pub fn radius(&self) -> f64 {
        self.cutoff.radius
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn cut(&self, f: &GridField) -> GridField {
        f.mul_nodes(&self.eta)
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    fn combine(&self, fields: &[GridField], raw_c: &DVector<f64>, rank: Rank) -> GridField {
        let mut out = GridField::zeros(&self.grid, rank);
        for (f, &c) in fields.iter().zip(raw_c.iter()) {
            if c != 0.0 {
                out.data.par_iter_mut().zip(&f.data).for_each(|(o, v)| *o += c * v);
            }
        }
        out
    }

    fn inner_region(&self) -> impl Fn(&[f64]) -> bool + Sync + Copy + '_ {
        let r = self.radius() - 2.0;
        move |x: &[f64]| norm(x) <= r
    }

    /// `V = Y + T` with `div_f(h − 2 div_f* Y) = 0` in the polynomial basis,
    /// `Y` orthogonal to the kernel of `𝒫`, and `T` the translation that makes
    /// `∫⟨∂_{x_i}, V⟩ e^{−f̄} = −𝓑(h, k)`.
    pub fn balance_fix(&self, h: &GridField, k: &GridField) -> Result<BalanceFix> {
        same_grid(h, &self.grid)?;
        same_grid(k, &self.grid)?;
        check_rank(h, Rank::Sym2, "h")?;
        check_rank(k, Rank::Scalar, "k")?;
        let n = self.grid.dim;
        let b = &self.psolver.space.basis;
        let entries: Vec<f64> = self.raw_star.par_iter().map(|s| 0.5 * s.weighted_inner_with(h, &self.geo, |_| true)).collect();
        let rhs = b.transform.transpose() * DVector::from_vec(entries);
        let (c, pairing) = self.psolver.solve_rhs(&rhs);
        let raw_c = &b.transform * &c;
        let y = self.combine(&self.raw, &raw_c, Rank::Vector);
        let y_star = self.combine(&self.raw_star, &raw_c, Rank::Sym2);
        let center_of_mass = center_of_mass_grid(&self.model, h, k)?;
        let ty = translation_moments(&self.model, &y)?;
        let translation: Vec<f64> = (0..n).map(|i| -(center_of_mass[i] + ty[i]) / self.mass).collect();
        let mut v = y;
        for node in 0..self.grid.len() {
            for i in 0..n {
                v.data[node * n + i] += translation[i];
            }
        }
        let dh = h.divf_with(&self.geo)?;
        let resid = h.sub(&y_star.scale(2.0)).divf_with(&self.geo)?;
        let dh_norm = dh.weighted_inner_with(&dh, &self.geo, |_| true).max(0.0).sqrt();
        let r_norm = resid.weighted_inner_with(&resid, &self.geo, |_| true).max(0.0).sqrt();
        let projection_mismatch = if dh_norm > 0.0 { r_norm / dh_norm } else { r_norm };
        let tv = translation_moments(&self.model, &v)?;
        let balance_error = max_abs_diff(&tv, &center_of_mass.iter().map(|x| -x).collect::<Vec<_>>());
        let scale = rhs.norm();
        let kernel_pairing = if scale > 0.0 { pairing / scale } else { 0.0 };
        Ok(BalanceFix { v, y_coeffs: c.as_slice().to_vec(), translation, center_of_mass, projection_mismatch, balance_error, kernel_pairing })
    }

    pub fn measure(&self, iteration: usize, h: &GridField, k: &GridField) -> Result<GaugeRecord> {
        let inner = self.inner_region();
        let dh = h.divf_with(&self.geo)?;
        let divf_w12 = dh.weighted_w12(&self.model.chart, |_| true)?;
        let sup = |f: &GridField| {
            (0..self.grid.len())
                .filter(|&i| inner(&self.grid.node(i)))
                .map(|i| norm(f.at(i)))
                .fold(0.0, f64::max)
        };
        let center_of_mass = center_of_mass_grid(&self.model, h, k)?;
        Ok(GaugeRecord {
            iteration,
            divf_w12,
            divf_c0: sup(&dh),
            center_of_mass_norm: norm(&center_of_mass),
            center_of_mass,
            h_sup: sup(h),
            k_sup: sup(k),
            step: None,
        })
    }

    /// One gauge step: balance, cut off, flow, pull back, cut off.
    pub fn step(&self, h: &GridField, k: &GridField) -> Result<(GridField, GridField, StepRecord)> {
        let fix = self.balance_fix(h, k)?;
        let v = self.cut(&fix.v);
        let map = flow_time_one(&v)?;
        let pulled = pullback(&self.model, &map, h, k)?;
        let v_c1 = c1_norm(&v);
        let drift = center_of_mass_bound(&self.model, &v, h, k)?.into_iter().fold(0.0, f64::max);
        let v_c2 = c2_norm(&v);
        let step = StepRecord {
            v_sup: (0..self.grid.len()).map(|i| norm(v.at(i))).fold(0.0, f64::max),
            v_c1,
            translation: fix.translation,
            projection_mismatch: fix.projection_mismatch,
            balance_error: fix.balance_error,
            kernel_pairing: fix.kernel_pairing,
            displacement_sup: map.displacement_sup(),
            min_jacobian: map.min_jacobian_det(),
            interpolation_error: pulled.interpolation_error,
            balance_tolerance: self.mass * v_c2 * v_c2 + drift,
        };
        Ok((self.cut(&pulled.h), self.cut(&pulled.k), step))
    }

    /// Repeats [`GaugeSolver::step`] until `‖div_f h‖` falls by less than a
    /// factor 2, or `max_iter` steps.
    pub fn iterate(&self, h0: &GridField, k0: &GridField, max_iter: usize) -> Result<GaugeRun> {
        same_grid(h0, &self.grid)?;
        same_grid(k0, &self.grid)?;
        let outside = (0..self.grid.len())
            .filter(|&i| self.eta[i] == 0.0)
            .map(|i| norm(h0.at(i)).max(k0.at(i)[0].abs()))
            .fold(0.0, f64::max);
        if outside > 0.0 {
            return Err(Error::Precondition(format!("input is {outside:e} outside b ≤ {}", self.radius())));
        }
        let size = (0..self.grid.len()).map(|i| norm(h0.at(i))).fold(0.0, f64::max);
        if size > SMALLNESS {
            return Err(Error::Precondition(format!("sup |h| = {size:.3e} exceeds {SMALLNESS}")));
        }
        let (mut h, mut k) = (self.cut(h0), self.cut(k0));
        let first = self.measure(0, &h, &k)?;
        let mut history = vec![first.clone()];
        let mut states = vec![GaugeState { iteration: 0, h: h.clone(), k: k.clone(), radius: self.radius(), record: first, history: history.clone() }];
        if history[0].divf_w12 == 0.0 && history[0].center_of_mass_norm == 0.0 {
            return Ok(GaugeRun { states, stop: Stop::Exact });
        }
        for it in 1..=max_iter {
            let (nh, nk, step) = self.step(&h, &k)?;
            h = nh;
            k = nk;
            let mut rec = self.measure(it, &h, &k)?;
            rec.step = Some(step);
            let prev = history[it - 1].divf_w12;
            if it == 1 && rec.divf_w12 > prev {
                return Err(Error::Precondition(format!(
                    "‖div_f h‖ grew from {prev:.3e} to {:.3e} on the first step; the input is too large",
                    rec.divf_w12
                )));
            }
            let factor = prev / rec.divf_w12;
            history.push(rec.clone());
            states.push(GaugeState { iteration: it, h: h.clone(), k: k.clone(), radius: self.radius(), record: rec, history: history.clone() });
            if factor < 2.0 {
                return Ok(GaugeRun { states, stop: Stop::Plateau(it) });
            }
        }
        Ok(GaugeRun { states, stop: Stop::MaxIter })
    }

    /// Pure-gauge input from a polynomial vector field `shape`, cut off by `η`
    /// and scaled to `sup |W| = sup_norm`.
    pub fn pure_gauge(&self, shape: &[Poly], sup_norm: f64) -> Result<PureGauge> {
        let n = self.grid.dim;
        if shape.len() != n {
            return Err(Error::Rank(format!("generator has {} components in dimension {n}", shape.len())));
        }
        let raw = self.cut(&GridField::from_fn(&self.grid, Rank::Vector, |x| shape.iter().map(|p| p.eval_f64(x)).collect()));
        let s = (0..self.grid.len()).map(|i| norm(raw.at(i))).fold(0.0, f64::max);
        if !(s > 0.0) {
            return Err(Error::Precondition("generator vanishes on the support".into()));
        }
        let generator = raw.scale(sup_norm / s);
        let zero_h = GridField::zeros(&self.grid, Rank::Sym2);
        let zero_k = GridField::zeros(&self.grid, Rank::Scalar);
        let pulled = pullback(&self.model, &flow_time_one(&generator)?, &zero_h, &zero_k)?;
        Ok(PureGauge { h: self.cut(&pulled.h), k: self.cut(&pulled.k), generator })
    }

    /// Residuals after undoing a pure-gauge input with the exact inverse flow
    /// (the loop cannot do better than this).
    pub fn floor(&self, input: &PureGauge) -> Result<GaugeRecord> {
        let map = flow_time_one(&input.generator.scale(-1.0))?;
        let pulled = pullback(&self.model, &map, &input.h, &input.k)?;
        self.measure(0, &self.cut(&pulled.h), &self.cut(&pulled.k))
    }
}

/// Default pure-gauge generator shape `∇((x₁² − 2) x₂)` in two dimensions.
pub fn default_generator_shape() -> Vec<Poly> {
    vec![Poly::parse("2*x1*x2", 2).expect("literal"), Poly::parse("x1^2 - 2", 2).expect("literal")]
}
