//! C² tensor-product cubic B-spline interpolation of grid fields with natural
//! end conditions. The derivative of the interpolant at a node is the centered
//! difference of the spline coefficients; flows and the linearized formulas
//! both use it.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::weighted_calculus::{Grid, GridField};

#[derive(Clone, Debug)]
pub(crate) struct Spline {
    grid: Grid,
    c: usize,
    /// Coefficients on the grid extended by one ghost layer per side, `c` per entry.
    coef: Vec<f64>,
    /// Nodal first derivatives of the interpolant by axis, `c` per node.
    nodal: Vec<Vec<f64>>,
}

/// Solves `(c_{i−1} + 4c_i + c_{i+1})/6 = f_i` with `c_{−1} = 2c_0 − c_1`, `c_p = 2c_{p−1} − c_{p−2}`
/// in place on `line` (length `p + 2`, ghosts at both ends).
fn solve_line(line: &mut [f64], scratch: &mut Vec<f64>) {
    let p = line.len() - 2;
    let f = &mut line[1..=p];
    // end rows reduce to c_0 = f_0 and c_{p−1} = f_{p−1}
    let m = p - 2;
    if m > 0 {
        scratch.clear();
        scratch.resize(m, 0.0);
        let mut rhs: Vec<f64> = (1..=m).map(|i| 6.0 * f[i]).collect();
        rhs[0] -= f[0];
        rhs[m - 1] -= f[p - 1];
        // Thomas with diagonal 4, off-diagonals 1
        let mut diag = 4.0;
        scratch[0] = diag;
        for i in 1..m {
            let w = 1.0 / diag;
            diag = 4.0 - w;
            scratch[i] = diag;
            rhs[i] -= w * rhs[i - 1];
        }
        rhs[m - 1] /= scratch[m - 1];
        for i in (0..m - 1).rev() {
            rhs[i] = (rhs[i] - rhs[i + 1]) / scratch[i];
        }
        f[1..=m].copy_from_slice(&rhs);
    }
    line[0] = 2.0 * line[1] - line[2];
    line[p + 1] = 2.0 * line[p] - line[p - 1];
}

fn weights(t: f64, h: f64) -> ([f64; 4], [f64; 4]) {
    let s = 1.0 - t;
    (
        [s * s * s / 6.0, (3.0 * t * t * t - 6.0 * t * t + 4.0) / 6.0, (-3.0 * t * t * t + 3.0 * t * t + 3.0 * t + 1.0) / 6.0, t * t * t / 6.0],
        [-s * s / (2.0 * h), (3.0 * t * t - 4.0 * t) / (2.0 * h), (-3.0 * t * t + 2.0 * t + 1.0) / (2.0 * h), t * t / (2.0 * h)],
    )
}

impl Spline {
    pub(crate) fn new(field: &GridField) -> Spline {
        let grid = field.grid.clone();
        let (n, p, c) = (grid.dim, grid.points, field.ncomp());
        let q = p + 2;
        let total = q.pow(n as u32);
        let mut coef = vec![0.0; total * c];
        for node in 0..grid.len() {
            let e: usize = grid.coords(node).iter().fold(0, |a, &i| a * q + i + 1);
            coef[e * c..(e + 1) * c].copy_from_slice(field.at(node));
        }
        for axis in 0..n {
            let st = q.pow((n - 1 - axis) as u32);
            // every line along `axis`: bases are the extended indices with coordinate 0 on `axis`
            let bases: Vec<usize> = (0..total).filter(|e| (e / st) % q == 0).collect();
            let lines: Vec<(usize, Vec<f64>)> = bases
                .par_iter()
                .flat_map_iter(|&b| {
                    let coef = &coef;
                    (0..c).map(move |comp| {
                        let mut line: Vec<f64> = (0..q).map(|j| coef[(b + j * st) * c + comp]).collect();
                        solve_line(&mut line, &mut Vec::new());
                        (b * c + comp, line)
                    })
                })
                .collect();
            for (start, line) in lines {
                for (j, v) in line.into_iter().enumerate() {
                    coef[start + j * st * c] = v;
                }
            }
        }
        let mut s = Spline { grid, c, coef, nodal: Vec::new() };
        s.nodal = (0..n)
            .map(|axis| {
                (0..s.grid.len())
                    .into_par_iter()
                    .flat_map_iter(|node| {
                        let x = s.grid.node(node);
                        let (_, g) = s.eval_inner(&x, true).expect("nodes lie in the box");
                        (0..c).map(move |k| g[k * n + axis])
                    })
                    .collect()
            })
            .collect();
        s
    }

    /// Nodal first derivative along `axis`, `c` components per node.
    pub(crate) fn partial(&self, axis: usize) -> &[f64] {
        &self.nodal[axis]
    }

    pub(crate) fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.eval_inner(x, false)?.0)
    }

    /// Values and gradients, the latter laid out `[comp * n + axis]`.
    pub(crate) fn eval_grad(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.eval_inner(x, true)
    }

    fn eval_inner(&self, x: &[f64], grad: bool) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.grid.dim;
        let h = self.grid.step();
        let p = self.grid.points;
        let q = p + 2;
        let mut cell = vec![0usize; n];
        let mut w = Vec::with_capacity(n);
        for v in 0..n {
            let s = (x[v] - self.grid.lo) / h;
            if !(s >= 0.0 && s <= (p - 1) as f64) {
                return Err(Error::OutOfBounds(x.to_vec()));
            }
            let i = (s.floor() as usize).min(p - 2);
            cell[v] = i;
            w.push(weights(s - i as f64, h));
        }
        let mut val = vec![0.0; self.c];
        let mut gr = vec![0.0; if grad { self.c * n } else { 0 }];
        for flat in 0..4usize.pow(n as u32) {
            let mut rest = flat;
            let mut e = 0usize;
            let mut off = vec![0usize; n];
            for v in (0..n).rev() {
                off[v] = rest % 4;
                rest /= 4;
            }
            for v in 0..n {
                // ghost-extended index of node cell[v] − 1 + off[v] is cell[v] + off[v]
                e = e * q + cell[v] + off[v];
            }
            let data = &self.coef[e * self.c..(e + 1) * self.c];
            let wv: f64 = (0..n).map(|v| w[v].0[off[v]]).product();
            for k in 0..self.c {
                val[k] += wv * data[k];
            }
            if grad {
                for a in 0..n {
                    let wa: f64 = (0..n).map(|v| if v == a { w[v].1[off[v]] } else { w[v].0[off[v]] }).product();
                    for k in 0..self.c {
                        gr[k * n + a] += wa * data[k];
                    }
                }
            }
        }
        Ok((val, gr))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weighted_calculus::Rank;

    fn bump(x: &[f64]) -> f64 {
        (-(x[0] * x[0] + 2.0 * x[1] * x[1])).exp() * (1.0 + x[0])
    }

    #[test]
    fn reproduces_node_values_and_converges_at_fourth_order() {
        let x = [0.137, -0.41];
        let mut errs = Vec::new();
        for p in [41, 81] {
            let grid = Grid::new(2, p, -5.0, 5.0);
            let field = GridField::from_fn(&grid, Rank::Scalar, |x| vec![bump(x)]);
            let s = Spline::new(&field);
            let node = grid.index(&[p / 3, p / 2 + 1]);
            assert!((s.eval(&grid.node(node)).unwrap()[0] - field.at(node)[0]).abs() < 1e-13);
            errs.push((s.eval(&x).unwrap()[0] - bump(&x)).abs());
        }
        assert!(errs[1] < 1e-5 && errs[0] / errs[1] > 12.0, "{errs:?}");
    }

    #[test]
    fn gradient_is_continuous_and_nodal_partials_match() {
        let grid = Grid::new(2, 41, -5.0, 5.0);
        let s = Spline::new(&GridField::from_fn(&grid, Rank::Scalar, |x| vec![bump(x)]));
        let node = grid.index(&[17, 23]);
        let x = grid.node(node);
        let e = 1e-9;
        let (_, a) = s.eval_grad(&[x[0] - e, x[1]]).unwrap();
        let (_, b) = s.eval_grad(&[x[0] + e, x[1]]).unwrap();
        assert!((a[0] - b[0]).abs() < 1e-7 && (a[1] - b[1]).abs() < 1e-7);
        assert!((a[0] - s.partial(0)[node]).abs() < 1e-7);
        assert!((a[1] - s.partial(1)[node]).abs() < 1e-7);
    }

    #[test]
    fn outside_the_box_is_an_error() {
        let grid = Grid::new(2, 11, -1.0, 1.0);
        let s = Spline::new(&GridField::zeros(&grid, Rank::Vector));
        assert!(matches!(s.eval(&[1.01, 0.0]), Err(Error::OutOfBounds(_))));
        assert!(s.eval(&[1.0, -1.0]).is_ok());
    }
}
