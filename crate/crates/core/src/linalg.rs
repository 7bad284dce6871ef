//! Symmetric eigendecomposition with a residual check.

use nalgebra::{DMatrix, Dyn, SymmetricEigen};

/// nalgebra's default convergence test occasionally stops with eigenvectors that are
/// off by 1e-3 on clustered spectra; retrying with an explicit epsilon fixes it.
pub(crate) fn symmetric_eigen(a: &DMatrix<f64>) -> SymmetricEigen<f64, Dyn> {
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let residual = |e: &SymmetricEigen<f64, Dyn>| {
        if e.eigenvalues.iter().chain(e.eigenvectors.iter()).any(|v| !v.is_finite()) {
            return f64::INFINITY;
        }
        (0..a.nrows())
            .map(|i| {
                let v = e.eigenvectors.column(i);
                (a * v - v * e.eigenvalues[i]).amax()
            })
            .fold(0.0, f64::max)
    };
    let first = SymmetricEigen::new(a.clone());
    let limit = 1e-14 * scale * (a.nrows() as f64).max(1.0);
    if residual(&first) <= limit {
        return first;
    }
    let mut best = (residual(&first), first);
    for eps in [1e-15, 1e-16, 1e-17, 1e-14, 1e-18, 1e-13] {
        if let Some(e) = SymmetricEigen::try_new(a.clone(), eps, 0) {
            let r = residual(&e);
            if r <= limit {
                return e;
            }
            if r < best.0 {
                best = (r, e);
            }
        }
    }
    best.1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clustered_spectrum_gets_accurate_vectors() {
        let mut rng = 0x2545_f491_4f6c_dd1du64;
        let mut next = || {
            rng ^= rng << 13;
            rng ^= rng >> 7;
            rng ^= rng << 17;
            (rng >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let q = DMatrix::from_fn(10, 10, |_, _| next()).qr().q();
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![21.5, 0.0, 4.9, 6.2, 4.9, 6.2, 6.2, 2.5, 2.5, 2.5]));
        let a = &q * d * q.transpose();
        let a = (&a + a.transpose()) * 0.5;
        let e = symmetric_eigen(&a);
        for i in 0..10 {
            let v = e.eigenvectors.column(i);
            assert!((&a * v - v * e.eigenvalues[i]).amax() < 1e-12);
        }
    }
}
