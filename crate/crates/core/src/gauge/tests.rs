use super::*;
use crate::model_spaces::make_gaussian;

fn gaussian() -> ModelGeometry {
    make_gaussian(2).unwrap()
}

fn eta(grid: &Grid) -> Vec<f64> {
    Cutoff::new(DEFAULT_RADIUS, CORNER).unwrap().on_grid(&gaussian(), grid).unwrap()
}

fn cut_field(grid: &Grid, rank: Rank, f: impl Fn(&[f64]) -> Vec<f64> + Sync) -> GridField {
    GridField::from_fn(grid, rank, f).mul_nodes(&eta(grid))
}

fn rotation(grid: &Grid, c: f64) -> GridField {
    cut_field(grid, Rank::Vector, |x| vec![-c * x[1], c * x[0]])
}

fn generic_v(grid: &Grid) -> GridField {
    let shape = default_generator_shape();
    cut_field(grid, Rank::Vector, |x| shape.iter().map(|p| p.eval_f64(x) / 50.0).collect())
}

fn generic_h(grid: &Grid) -> GridField {
    cut_field(grid, Rank::Sym2, |x| vec![0.01 * (1.0 + x[0] * x[0]), 0.01 * x[0] * x[1], 0.01 * x[0] * x[1], 0.02 * x[1]])
}

fn generic_k(grid: &Grid) -> GridField {
    cut_field(grid, Rank::Scalar, |x| vec![0.01 * x[0] * x[1] + 0.02 * x[0]])
}

fn sup_where(f: &GridField, keep: impl Fn(&[f64]) -> bool) -> f64 {
    (0..f.grid.len()).filter(|&i| keep(&f.grid.node(i))).map(|i| norm(f.at(i))).fold(0.0, f64::max)
}

fn inside(r: f64) -> impl Fn(&[f64]) -> bool {
    move |x: &[f64]| norm(x) <= r
}

#[test]
fn cutoff_ramps_monotonically_with_bounded_slope() {
    let c = Cutoff::new(8.0, CORNER).unwrap();
    assert!((c.slope_bound() - 1.0 / (1.0 - CORNER)).abs() < 1e-9);
    assert_eq!(c.at(6.5), 1.0);
    assert_eq!(c.at(7.0), 1.0);
    assert_eq!(c.at(8.0), 0.0);
    assert_eq!(c.at(9.0), 0.0);
    assert!((c.at(7.5) - 0.5).abs() < 1e-9);
    let d = 1e-4;
    let mut prev = c.at(6.9);
    let mut b = 6.9;
    while b < 8.1 {
        b += d;
        let now = c.at(b);
        assert!(now <= prev + 1e-15);
        assert!((prev - now) / d <= c.slope_bound() * (1.0 + 1e-6));
        prev = now;
    }
}

#[test]
fn cutoff_rejects_degenerate_parameters() {
    assert!(Cutoff::new(8.0, 0.0).is_err());
    assert!(Cutoff::new(8.0, 0.6).is_err());
    assert!(Cutoff::new(1.0, 0.25).is_err());
}

#[test]
fn zero_generator_flows_to_the_identity() {
    let grid = default_grid(2);
    let map = flow_time_one(&GridField::zeros(&grid, Rank::Vector)).unwrap();
    assert_eq!(map.displacement_sup(), 0.0);
    assert!((map.min_jacobian_det() - 1.0).abs() < 1e-15);
}

#[test]
fn constant_generator_translates_the_interior() {
    let grid = default_grid(2);
    let c = [0.1, -0.05];
    let map = flow_time_one(&cut_field(&grid, Rank::Vector, |_| c.to_vec())).unwrap();
    for node in 0..grid.len() {
        let x = grid.node(node);
        if norm(&x) <= 4.0 {
            let d = &map.displacement[node * 2..node * 2 + 2];
            assert!((d[0] - c[0]).abs() < 1e-10 && (d[1] - c[1]).abs() < 1e-10, "{x:?} {d:?}");
            let j = map.jacobian_at(node);
            assert!((j[0] - 1.0).abs() < 1e-9 && j[1].abs() < 1e-9 && j[2].abs() < 1e-9 && (j[3] - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn flow_displacement_is_the_generator_to_second_order() {
    let grid = default_grid(2);
    let w = generic_v(&grid);
    let gap = |e: f64| {
        let map = flow_time_one(&w.scale(e)).unwrap();
        map.displacement.iter().zip(&w.data).fold(0.0f64, |m, (d, v)| m.max((d - e * v).abs()))
    };
    let (a, b) = (gap(0.2), gap(0.1));
    assert!((a / b - 4.0).abs() < 0.5, "{a:e} {b:e}");
}

#[test]
fn flow_refuses_margin_support_and_collapse() {
    let grid = default_grid(2);
    let constant = GridField::from_fn(&grid, Rank::Vector, |_| vec![0.1, 0.0]);
    assert!(matches!(flow_time_one(&constant), Err(Error::Precondition(_))));
    let squeeze = cut_field(&grid, Rank::Vector, |x| vec![-3.0 * x[0], -3.0 * x[1]]);
    assert!(matches!(flow_time_one(&squeeze), Err(Error::Flow(_))));
    assert!(matches!(flow(&GridField::zeros(&grid, Rank::Vector), 1.0, 0), Err(Error::Precondition(_))));
    assert!(matches!(flow_time_one(&GridField::zeros(&grid, Rank::Sym2)), Err(Error::Rank(_))));
}

#[test]
fn identity_pullback_returns_the_input() {
    let grid = default_grid(2);
    let (h, k) = (generic_h(&grid), generic_k(&grid));
    let p = pullback(&gaussian(), &DiffeoMap::identity(&grid), &h, &k).unwrap();
    assert!(max_abs_diff(&p.h.data, &h.data) < 1e-13);
    assert!(max_abs_diff(&p.k.data, &k.data) < 1e-13);
}

#[test]
fn translation_shifts_the_weight_and_keeps_the_metric() {
    let grid = default_grid(2);
    let c = [0.1, -0.05];
    let map = flow_time_one(&cut_field(&grid, Rank::Vector, |_| c.to_vec())).unwrap();
    let p = pullback(&gaussian(), &map, &GridField::zeros(&grid, Rank::Sym2), &GridField::zeros(&grid, Rank::Scalar)).unwrap();
    for node in 0..grid.len() {
        let x = grid.node(node);
        if norm(&x) <= 4.0 {
            let want = 0.5 * (x[0] * c[0] + x[1] * c[1]) + 0.25 * (c[0] * c[0] + c[1] * c[1]);
            assert!((p.k.at(node)[0] - want).abs() < 1e-9);
            assert!(norm(p.h.at(node)) < 1e-9);
        }
    }
}

#[test]
fn rotation_is_an_isometry_of_the_soliton() {
    let grid = default_grid(2);
    let map = flow_time_one(&rotation(&grid, 0.3)).unwrap();
    let p = pullback(&gaussian(), &map, &GridField::zeros(&grid, Rank::Sym2), &GridField::zeros(&grid, Rank::Scalar)).unwrap();
    assert!(sup_where(&p.h, inside(4.0)) < 1e-8, "{:e}", sup_where(&p.h, inside(4.0)));
    assert!(sup_where(&p.k, inside(4.0)) < 1e-8, "{:e}", sup_where(&p.k, inside(4.0)));
}

#[test]
fn reverse_flow_undoes_a_pure_gauge_perturbation() {
    let grid = default_grid(2);
    let model = gaussian();
    let w = generic_v(&grid).scale(0.1);
    let (h0, k0) = (GridField::zeros(&grid, Rank::Sym2), GridField::zeros(&grid, Rank::Scalar));
    let there = pullback(&model, &flow_time_one(&w).unwrap(), &h0, &k0).unwrap();
    let back = pullback(&model, &flow_time_one(&w.scale(-1.0)).unwrap(), &there.h, &there.k).unwrap();
    let (moved, left) = (sup_where(&there.h, inside(6.0)), sup_where(&back.h, inside(6.0)));
    assert!(moved > 1e-2 && left < 1e-4 * moved, "{moved:e} {left:e}");
    assert!(sup_where(&back.k, inside(6.0)) < 1e-4 * sup_where(&there.k, inside(6.0)));
}

#[test]
fn metric_variation_vanishes_for_killing_fields() {
    let grid = default_grid(2);
    let lie = lie_metric(&rotation(&grid, 1.0)).unwrap();
    assert!(sup_where(&lie, inside(4.0)) < 1e-9, "{:e}", sup_where(&lie, inside(4.0)));
    let lie = lie_metric(&cut_field(&grid, Rank::Vector, |_| vec![1.0, 2.0])).unwrap();
    assert!(sup_where(&lie, inside(4.0)) < 1e-9, "{:e}", sup_where(&lie, inside(4.0)));
}

#[test]
fn metric_variation_matches_the_exact_lie_derivative_for_polynomials() {
    let grid = default_grid(2);
    let v = generic_v(&grid);
    let lie = lie_metric(&v).unwrap();
    // ∇_i V_j + ∇_j V_i for V = ∇((x₁² − 2) x₂) / 50
    let exact = GridField::from_fn(&grid, Rank::Sym2, |x| {
        let (a, b) = (4.0 * x[1] / 50.0, 4.0 * x[0] / 50.0);
        vec![a, b, b, 0.0]
    });
    let gap = (0..grid.len())
        .filter(|&i| inside(4.0)(&grid.node(i)))
        .map(|i| max_abs_diff(lie.at(i), exact.at(i)))
        .fold(0.0, f64::max);
    assert!(gap < 1e-8, "{gap:e}");
}

#[test]
fn linearization_gap_is_quadratic_in_time() {
    let grid = default_grid(2);
    let model = gaussian();
    let v = generic_v(&grid);
    let z = GridField::zeros(&grid, Rank::Sym2);
    assert!(linearization_gap(&model, &v, &z, 1e-4).unwrap() < 1e-6);
    let a = linearization_gap(&model, &v, &generic_h(&grid), 2e-3).unwrap();
    let b = linearization_gap(&model, &v, &generic_h(&grid), 1e-3).unwrap();
    assert!((a / b - 4.0).abs() < 0.2, "{a:e} {b:e}");
}

#[test]
fn divf_gap_vanishes_without_a_generator() {
    let grid = default_grid(2);
    let gap = divf_quadratic_gap(&gaussian(), &GridField::zeros(&grid, Rank::Vector), &generic_h(&grid), 1.0).unwrap();
    assert!(gap < 1e-10, "{gap:e}");
}

#[test]
fn center_of_mass_derivative_of_the_bare_soliton_is_the_translation() {
    let grid = default_grid(2);
    let model = gaussian();
    let (h, k) = (GridField::zeros(&grid, Rank::Sym2), GridField::zeros(&grid, Rank::Scalar));
    let v = generic_v(&grid);
    let d = cb_derivative(&model, &v, &h, &k, 1e-3).unwrap();
    assert!(max_abs_diff(&d.formula, &d.translation) < 1e-14);
    assert!(d.bound.iter().all(|&b| b == 0.0));
    assert!(d.parts_gap < 1e-8 && d.gap < 1e-6, "{d:?}");

    let r = cb_derivative(&model, &rotation(&grid, 1.0), &h, &k, 1e-3).unwrap();
    assert!(r.fd.iter().chain(&r.formula).all(|x| x.abs() < 1e-10), "{r:?}");

    let zero = cb_derivative(&model, &GridField::zeros(&grid, Rank::Vector), &generic_h(&grid), &generic_k(&grid), 1e-3).unwrap();
    assert!(zero.fd.iter().chain(&zero.formula).chain(&zero.bound).all(|x| x.abs() < 1e-12));
}

#[test]
fn center_of_mass_derivative_obeys_its_bound() {
    let grid = default_grid(2);
    let (v, h, k) = (generic_v(&grid), generic_h(&grid), generic_k(&grid));
    let d = cb_derivative(&gaussian(), &v, &h, &k, 1e-3).unwrap();
    assert!(d.gap < 1e-5 && d.parts_gap < 1e-6, "{d:?}");
    assert!(d.bound_holds(1e-9), "{d:?}");
}

fn solver() -> GaugeSolver {
    GaugeSolver::new(&gaussian(), default_grid(2), DEFAULT_RADIUS, DEFAULT_DEGREE).unwrap()
}

#[test]
fn solver_needs_a_margin_and_the_gaussian() {
    assert!(GaugeSolver::new(&gaussian(), default_grid(2), 9.5, 4).is_err());
    let cyl = crate::model_spaces::make_cylinder(2, 3).unwrap();
    assert!(GaugeSolver::new(&cyl, default_grid(2), 8.0, 4).is_err());
}

#[test]
fn balance_fix_inverts_an_uncut_pure_gauge() {
    let s = solver();
    let grid = s.grid.clone();
    let w = |x: &[f64]| vec![2.0 * x[0] * x[1], x[0] * x[0] - 2.0];
    // h = ∇W + ∇Wᵀ and k = ⟨∇f̄, W⟩, the linearized pull-back along W
    let h = GridField::from_fn(&grid, Rank::Sym2, |x| vec![4.0 * x[1], 4.0 * x[0], 4.0 * x[0], 0.0]);
    let k = GridField::from_fn(&grid, Rank::Scalar, |x| {
        let wv = w(x);
        vec![0.5 * (x[0] * wv[0] + x[1] * wv[1])]
    });
    let fix = s.balance_fix(&h, &k).unwrap();
    assert!(fix.translation.iter().all(|t| t.abs() < 1e-8), "{:?}", fix.translation);
    assert!(fix.center_of_mass.iter().all(|t| t.abs() < 1e-8), "{:?}", fix.center_of_mass);
    let gap = (0..grid.len())
        .filter(|&i| inside(6.0)(&grid.node(i)))
        .map(|i| {
            let want = w(&grid.node(i));
            max_abs_diff(fix.v.at(i), &[-want[0], -want[1]])
        })
        .fold(0.0, f64::max);
    assert!(gap < 1e-6, "{gap:e}");
    assert!(fix.projection_mismatch < 1e-6 && fix.balance_error < 1e-10 && fix.kernel_pairing < 1e-8, "{fix:?}");
}

#[test]
fn balance_fix_moves_a_shifted_weight_by_a_translation() {
    let s = solver();
    let grid = s.grid.clone();
    let fix = s.balance_fix(&GridField::zeros(&grid, Rank::Sym2), &GridField::from_fn(&grid, Rank::Scalar, |x| vec![x[0]])).unwrap();
    assert!((fix.translation[0] + 2.0).abs() < 1e-8 && fix.translation[1].abs() < 1e-10, "{:?}", fix.translation);
    assert!(fix.y_coeffs.iter().all(|c| c.abs() < 1e-12));

    let zero = s.balance_fix(&GridField::zeros(&grid, Rank::Sym2), &GridField::zeros(&grid, Rank::Scalar)).unwrap();
    assert!(zero.v.data.iter().all(|&x| x == 0.0));
}

#[test]
fn gauge_loop_stops_at_once_on_the_soliton() {
    let s = solver();
    let run = s.iterate(&GridField::zeros(&s.grid, Rank::Sym2), &GridField::zeros(&s.grid, Rank::Scalar), 5).unwrap();
    assert_eq!(run.stop, Stop::Exact);
    assert_eq!(run.states.len(), 1);
}

#[test]
fn gauge_loop_rejects_large_or_unsupported_input() {
    let s = solver();
    let big = GridField::from_fn(&s.grid, Rank::Sym2, |_| vec![0.2, 0.0, 0.0, 0.0]).mul_nodes(s.eta());
    let k = GridField::zeros(&s.grid, Rank::Scalar);
    assert!(matches!(s.iterate(&big, &k, 3), Err(Error::Precondition(_))));
    let wide = GridField::from_fn(&s.grid, Rank::Sym2, |_| vec![1e-3, 0.0, 0.0, 1e-3]);
    assert!(matches!(s.iterate(&wide, &k, 3), Err(Error::Precondition(_))));
}

#[test]
fn gauge_loop_reaches_the_floor_on_pure_gauge_input() {
    let s = solver();
    let pg = s.pure_gauge(&default_generator_shape(), 1e-2).unwrap();
    let floor = s.floor(&pg).unwrap();
    let run = s.iterate(&pg.h, &pg.k, 6).unwrap();
    let recs = run.records();
    let Stop::Plateau(stop) = run.stop else { panic!("{:?}", run.stop) };
    let best = recs.iter().map(|r| r.divf_w12).fold(f64::INFINITY, f64::min);
    assert!(best <= 10.0 * floor.divf_w12, "{best:e} vs floor {:e}", floor.divf_w12);
    assert!(recs[stop].h_sup <= 1e-2 * recs[0].h_sup, "{:e} {:e}", recs[stop].h_sup, recs[0].h_sup);
    for r in &recs[1..] {
        let step = r.step.as_ref().unwrap();
        assert!(r.center_of_mass.iter().all(|b| b.abs() <= step.balance_tolerance), "{r:?}");
    }
}

#[test]
fn divergence_free_input_needs_no_gauge() {
    let s = solver();
    let e = 1e-3;
    let h = GridField::from_fn(&s.grid, Rank::Sym2, |x| {
        let g = e * (-(x[0] * x[0] + x[1] * x[1]) / 4.0).exp();
        vec![g * (x[1] * x[1] - 1.0), -g * x[0] * x[1], -g * x[0] * x[1], g * (x[0] * x[0] - 1.0)]
    })
    .mul_nodes(s.eta());
    let k = GridField::zeros(&s.grid, Rank::Scalar);
    let fix = s.balance_fix(&h, &k).unwrap();
    let v_sup = fix.v.data.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(v_sup < 1e-8, "{v_sup:e}");
    let rec = s.measure(0, &h, &k).unwrap();
    assert!(rec.divf_c0 < 1e-2 * e && rec.center_of_mass_norm < 1e-15, "{rec:?}");
}
