//! Fixtures shared by the kernel benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shrinkerlab::chart_geometry::TestFields;
use shrinkerlab::gauge::{self, default_generator_shape, PureGauge};
use shrinkerlab::{make_gaussian, Chart, GaugeSolver, ModelGeometry, Result};

/// A random flat-torus perturbation with a sample point and test fields.
pub fn torus_case(seed: u64) -> (Chart, Vec<f64>, TestFields) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chart = Chart::random_torus(&mut rng, 3, 0.1);
    let x = (0..3).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    (chart, x, TestFields::random(3, seed + 100))
}

/// Gauge solver on the default planar grid together with the default pure-gauge input.
pub fn gauge_case() -> Result<(ModelGeometry, GaugeSolver, PureGauge)> {
    let model = make_gaussian(2)?;
    let solver = GaugeSolver::new(&model, gauge::default_grid(2), gauge::DEFAULT_RADIUS, gauge::DEFAULT_DEGREE)?;
    let input = solver.pure_gauge(&default_generator_shape(), 1e-2)?;
    Ok((model, solver, input))
}
