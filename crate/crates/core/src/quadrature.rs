//! One-dimensional Gauss rules (Golub–Welsch) and product rules on spheres.

use nalgebra::DMatrix;
use std::f64::consts::PI;

/// Gauss rule from a symmetric Jacobi matrix with zero diagonal.
fn golub_welsch(offdiag: &[f64], mu0: f64) -> (Vec<f64>, Vec<f64>) {
    let n = offdiag.len() + 1;
    let mut j = DMatrix::zeros(n, n);
    for (k, b) in offdiag.iter().enumerate() {
        j[(k, k + 1)] = *b;
        j[(k + 1, k)] = *b;
    }
    let eig = crate::linalg::symmetric_eigen(&j);
    let mut pairs: Vec<(f64, f64)> = (0..n).map(|i| (eig.eigenvalues[i], mu0 * eig.eigenvectors[(0, i)].powi(2))).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // symmetric weight: enforce exact symmetry of the rule
    let m = pairs.len();
    for i in 0..m / 2 {
        let x = 0.5 * (pairs[m - 1 - i].0 - pairs[i].0);
        let w = 0.5 * (pairs[m - 1 - i].1 + pairs[i].1);
        pairs[i] = (-x, w);
        pairs[m - 1 - i] = (x, w);
    }
    if m % 2 == 1 {
        pairs[m / 2].0 = 0.0;
    }
    pairs.into_iter().unzip()
}

/// `n`-point rule for `∫ F(x) e^{−x²/4} dx`, exact through degree `2n − 1`.
pub fn gauss_hermite_quarter(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let off: Vec<f64> = (1..n).map(|k| (k as f64 / 2.0).sqrt()).collect();
    let (t, w) = golub_welsch(&off, PI.sqrt());
    (t.iter().map(|x| 2.0 * x).collect(), w.iter().map(|x| 2.0 * x).collect())
}

/// Γ at positive half-integers.
fn gamma_half(x: f64) -> f64 {
    let twice = (2.0 * x).round() as i64;
    assert!(twice >= 1 && (2.0 * x - twice as f64).abs() < 1e-12);
    let mut g = if twice % 2 == 0 { 1.0 } else { PI.sqrt() };
    let mut y = if twice % 2 == 0 { 1.0 } else { 0.5 };
    while y < x - 1e-12 {
        g *= y;
        y += 1.0;
    }
    g
}

/// `n`-point rule for `∫_{-1}^{1} F(t) (1 − t²)^α dt` with `α` a nonnegative half-integer.
pub fn gauss_gegenbauer(n: usize, alpha: f64) -> (Vec<f64>, Vec<f64>) {
    let off: Vec<f64> = (1..n)
        .map(|k| {
            let k = k as f64;
            let d = 2.0 * k + 2.0 * alpha;
            (k * (k + 2.0 * alpha) / (d * d - 1.0)).sqrt()
        })
        .collect();
    let mu0 = PI.sqrt() * gamma_half(alpha + 1.0) / gamma_half(alpha + 1.5);
    golub_welsch(&off, mu0)
}

/// Product rule on the round unit sphere `S^ell ⊂ R^{ell+1}`, exact for ambient
/// polynomials of degree ≤ `degree`. Weights sum to the sphere area.
pub fn unit_sphere(ell: usize, degree: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    assert!(ell >= 1);
    if ell == 1 {
        let m = degree + 1;
        let nodes = (0..m)
            .map(|j| {
                let th = 2.0 * PI * (j as f64 + 0.5) / m as f64;
                vec![th.cos(), th.sin()]
            })
            .collect();
        return (nodes, vec![2.0 * PI / m as f64; m]);
    }
    let (sub_nodes, sub_w) = unit_sphere(ell - 1, degree);
    let (t, tw) = gauss_gegenbauer(degree / 2 + 1, (ell as f64 - 2.0) / 2.0);
    let mut nodes = Vec::with_capacity(t.len() * sub_nodes.len());
    let mut weights = Vec::with_capacity(nodes.capacity());
    for (ti, wi) in t.iter().zip(&tw) {
        let s = (1.0 - ti * ti).sqrt();
        for (p, w) in sub_nodes.iter().zip(&sub_w) {
            let mut q: Vec<f64> = p.iter().map(|v| v * s).collect();
            q.push(*ti);
            nodes.push(q);
            weights.push(wi * w);
        }
    }
    (nodes, weights)
}

pub fn unit_sphere_area(ell: usize) -> f64 {
    let k = (ell + 1) as f64;
    2.0 * PI.powf(k / 2.0) / gamma_half(k / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_moments() {
        let (x, w) = gauss_hermite_quarter(8);
        let m = |p: i32| x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum::<f64>();
        let z = 2.0 * PI.sqrt();
        assert!((m(0) - z).abs() < 1e-13);
        assert!((m(2) - 2.0 * z).abs() < 1e-12);
        assert!((m(4) - 12.0 * z).abs() < 1e-11);
        assert!(m(3).abs() < 1e-12);
    }

    #[test]
    fn gegenbauer_mass() {
        let (_, w) = gauss_gegenbauer(5, 0.5);
        assert!((w.iter().sum::<f64>() - PI / 2.0).abs() < 1e-13);
        let (_, w) = gauss_gegenbauer(5, 0.0);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
    }

    #[test]
    fn sphere_rule_integrates_moments() {
        for ell in 2..=3 {
            let (nodes, w) = unit_sphere(ell, 6);
            let area: f64 = w.iter().sum();
            assert!((area - unit_sphere_area(ell)).abs() < 1e-12);
            // ∫ z_0^2 = area / (ell + 1)
            let m2: f64 = nodes.iter().zip(&w).map(|(p, w)| w * p[0] * p[0]).sum();
            assert!((m2 - area / (ell as f64 + 1.0)).abs() < 1e-12);
            // ∫ z_0^4 = 3 area / ((ell+1)(ell+3))
            let m4: f64 = nodes.iter().zip(&w).map(|(p, w)| w * p[ell].powi(4)).sum();
            assert!((m4 - 3.0 * area / ((ell as f64 + 1.0) * (ell as f64 + 3.0))).abs() < 1e-12);
        }
    }
}
