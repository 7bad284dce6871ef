//! Convergence order from residuals at steps `s, s/2, s/4, …`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Richardson {
    /// `log₂` of the residual ratio per halving (least squares for three or more levels).
    pub order: f64,
    /// Limit of the sequence under the fitted power law.
    pub extrapolated: f64,
    /// The last halving did not reduce the residual: roundoff has taken over.
    pub floor: bool,
    /// Every halving reduced the residual.
    pub monotone: bool,
}

pub fn richardson(values: &[f64]) -> Result<Richardson> {
    if values.len() < 2 {
        return Err(Error::Precondition("Richardson estimate needs at least two step levels".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Precondition("Richardson estimate of non-finite values".into()));
    }
    let m = values.len();
    let (a, b) = (values[m - 2].abs(), values[m - 1].abs());
    let floor = !(b > 0.0 && a > b);
    let monotone = values.windows(2).all(|w| w[1].abs() < w[0].abs());
    if floor && m == 2 {
        return Ok(Richardson { order: 0.0, extrapolated: values[m - 1], floor, monotone });
    }
    let order = if m == 2 {
        (a / b).log2()
    } else {
        // slope of log₂|r| against the halving index, sign flipped
        let pts: Vec<(f64, f64)> = values.iter().enumerate().filter(|(_, v)| v.abs() > 0.0).map(|(i, v)| (i as f64, v.abs().log2())).collect();
        if pts.len() < 2 {
            0.0
        } else {
            let k = pts.len() as f64;
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
            let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
            -sxy / sxx
        }
    };
    let ratio = 2f64.powf(order);
    let extrapolated =
        if order > 0.0 && ratio > 1.0 { values[m - 1] - (values[m - 2] - values[m - 1]) / (ratio - 1.0) } else { values[m - 1] };
    Ok(Richardson { order, extrapolated, floor, monotone })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_ratio_four_is_order_two() {
        let r = richardson(&[4e-6, 1e-6]).unwrap();
        assert!((r.order - 2.0).abs() < 1e-12);
        assert!(!r.floor && r.monotone);
        assert!(r.extrapolated.abs() < 1e-18);
    }

    #[test]
    fn equal_residuals_flag_the_floor() {
        let r = richardson(&[1e-6, 1e-6]).unwrap();
        assert_eq!(r.order, 0.0);
        assert!(r.floor && !r.monotone);
    }

    #[test]
    fn three_levels_use_least_squares() {
        let r = richardson(&[8e-3, 1e-3, 1.25e-4]).unwrap();
        assert!((r.order - 3.0).abs() < 1e-12);
        let noisy = richardson(&[1e-2, 2.4e-3, 6.5e-4]).unwrap();
        assert!((noisy.order - 1.971).abs() < 1e-3, "{}", noisy.order);
    }

    #[test]
    fn extrapolates_a_converging_quantity() {
        // q(s) = 3 + 5 s²
        let q: Vec<f64> = [0.1f64, 0.05].iter().map(|s| 3.0 + 5.0 * s * s).collect();
        let r = richardson(&[q[0] - 3.0, q[1] - 3.0]).unwrap();
        assert!((r.order - 2.0).abs() < 1e-9);
        let lim = q[1] - (q[0] - q[1]) / (2f64.powf(r.order) - 1.0);
        assert!((lim - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_short_or_nonfinite_input() {
        assert!(richardson(&[1.0]).is_err());
        assert!(richardson(&[1.0, f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn recovers_any_power_law(c in 1e-8f64..1e2, p in 0.5f64..6.0, levels in 2usize..6) {
            let vals: Vec<f64> = (0..levels).map(|i| c * 0.5f64.powf(p * i as f64)).collect();
            let r = richardson(&vals).unwrap();
            prop_assert!((r.order - p).abs() < 1e-9);
            prop_assert!(r.monotone && !r.floor);
        }
    }
}
