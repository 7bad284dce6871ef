use super::*;
use crate::model_spaces::{make_cylinder, make_gaussian};

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn cyl23() -> ModelGeometry {
    make_cylinder(2, 3).unwrap()
}

fn euclid(model: &ModelGeometry, s: &str) -> Poly {
    model.lift(&Poly::parse(s, model.euclid_dim()).unwrap())
}

#[test]
fn phi_vanishes_at_t_zero_and_for_zero_directions() {
    let m = cyl23();
    let x = [0.2, -0.4, 0.9];
    let jac = PerturbationPath::jacobi(&m, &euclid(&m, "x1^2 - 2")).unwrap();
    assert!(max_abs(&jac.phi_at(0.0, &x).unwrap()) < 1e-12);
    let zero = PerturbationPath::new(&m.chart, FieldExpr::Zero(Rank::Sym2), FieldExpr::Zero(Rank::Scalar)).unwrap();
    assert!(max_abs(&zero.phi_at(0.3, &x).unwrap()) < 1e-12);
    // Jacobi direction: no first-order term
    let a = max_abs(&jac.phi_at(1e-2, &x).unwrap());
    let b = max_abs(&jac.phi_at(5e-3, &x).unwrap());
    assert!((a / b - 4.0).abs() < 0.1, "{a:e} {b:e}");
}

#[test]
fn first_variation_on_jacobi_gauge_and_conformal_paths() {
    let m = cyl23();
    let g = make_gaussian(2).unwrap();
    let a = g.ambient_dim();
    let paths = vec![
        (PerturbationPath::jacobi(&m, &euclid(&m, "x1^2 - 2")).unwrap(), vec![0.3, -0.2, 0.8]),
        (PerturbationPath::pure_gauge(&m, vec![Poly::zero(4), Poly::zero(4), euclid(&m, "2*x1")]).unwrap(), vec![0.1, 0.5, -0.6]),
        (PerturbationPath::pure_gauge(&g, vec![Poly::parse("x1*x2", a).unwrap(), Poly::parse("x1^2 - x2", a).unwrap()]).unwrap(), vec![0.4, -0.7]),
        (PerturbationPath::conformal(&g.chart, FieldExpr::poly(Poly::parse("x1*x2 + 0.5", a).unwrap())).unwrap(), vec![0.3, 1.2]),
    ];
    for (p, x) in paths {
        let r = first_variation_gap(&p.normalized_at(&x).unwrap(), &x).unwrap();
        assert!(r.gap < 1e-6, "gap {:e}", r.gap);
        assert!(r.order_confirmed(), "{r:?}");
        assert!(r.route_gap.unwrap() < 1e-10, "{r:?}");
    }
}

#[test]
fn jacobi_and_gauge_first_variation_formula_vanishes() {
    let m = cyl23();
    let p = PerturbationPath::jacobi(&m, &euclid(&m, "x1^2 - 2")).unwrap();
    let r = first_variation_gap(&p, &[0.3, -0.2, 0.8]).unwrap();
    assert!(max_abs(&r.formula) < 1e-12);
    let g = make_gaussian(2).unwrap();
    let q = PerturbationPath::pure_gauge(&g, vec![Poly::parse("x2^2", 2).unwrap(), Poly::parse("x1", 2).unwrap()]).unwrap();
    let r = first_variation_gap(&q, &[0.5, 0.1]).unwrap();
    assert!(max_abs(&r.formula) < 1e-12);
}

#[test]
fn second_variation_spot_value_and_gap() {
    let m = cyl23();
    let u = euclid(&m, "x1^2 - 2");
    let r = second_variation_gap(&m, &u, &[0.0, 0.0, 0.0], SECOND_STEP).unwrap();
    // 8 dx⊗dx on the Euclidean slot, zero elsewhere
    let mut want = vec![0.0; 9];
    want[8] = 8.0;
    assert!(max_diff(&r.formula, &want) < 1e-12);
    assert!(max_diff(&r.fd, &want) < 1e-5, "{:?}", r.fd);
    assert!(r.order_confirmed(), "{r:?}");
    let r = second_variation_gap(&m, &u, &[0.4, -0.3, 1.1], SECOND_STEP).unwrap();
    assert!(r.gap < 1e-5 && r.order_confirmed(), "{r:?}");
}

#[test]
fn second_variation_of_a_product_potential() {
    let m = make_cylinder(2, 4).unwrap();
    let u = euclid(&m, "x1*x2");
    for x in [[0.0, 0.0, 0.0, 0.0], [0.3, -0.2, 0.7, -1.1]] {
        let r = second_variation_gap(&m, &u, &x, SECOND_STEP).unwrap();
        assert!(r.gap < 1e-5 && r.order_confirmed(), "{r:?}");
    }
}

#[test]
fn second_variation_rejects_sphere_dependence() {
    let m = cyl23();
    let u = Poly::parse("x1*x4", 4).unwrap();
    assert!(matches!(second_variation_gap(&m, &u, &[0.0; 3], DEFAULT_STEP), Err(Error::Precondition(_))));
}

#[test]
fn decomposition_blocks() {
    let m = cyl23();
    let v = euclid(&m, "x1^2 - 2");
    let zero = FieldExpr::Zero(Rank::Scalar);
    let h = FieldExpr::metric_block(Block::Sphere, FieldExpr::poly(v.clone()));
    let d = jacobi_decompose(&m, &h, &zero).unwrap();
    assert!(d.reconstruction_error < 1e-12 && d.orthogonality_error < 1e-12);
    let x = [0.3, 0.1, 1.5];
    assert!((d.u.eval(&m.chart, &x, 0).unwrap().value()[0] - v.eval_f64(&m.chart.ambient(&x))).abs() < 1e-12);
    assert!(d.h0.eval(&m.chart, &x, 0).unwrap().max_abs() < 1e-12);
    assert!(d.h2.eval(&m.chart, &x, 0).unwrap().max_abs() < 1e-12);
    let mut c = vec![Poly::zero(4); 9];
    c[8] = Poly::constant(4, 1.0);
    c[2] = Poly::parse("x4", 4).unwrap();
    c[6] = c[2].clone();
    c[0] = Poly::parse("x4^2", 4).unwrap();
    let h = FieldExpr::poly_sym(c);
    let d = jacobi_decompose(&m, &h, &zero).unwrap();
    assert!(d.reconstruction_error < 1e-12 && d.orthogonality_error < 1e-12, "{d:?}");
    assert!(matches!(jacobi_decompose(&make_gaussian(2).unwrap(), &h, &zero), Err(Error::Precondition(_))));
}

#[test]
fn projection_onto_k() {
    let g = make_gaussian(2).unwrap();
    let q = g.quadrature(10);
    let p = |s: &str| FieldExpr::poly(Poly::parse(s, 2).unwrap());
    let r = project_k(&g, &p("x1^2 - 2"), &q).unwrap();
    assert!((r.coeffs[0] - 1.0).abs() < 1e-12 && r.coeffs[1].abs() < 1e-12 && r.remainder < 1e-10);
    let r = project_k(&g, &p("x1"), &q).unwrap();
    assert!(r.coeffs.iter().all(|c| c.abs() < 1e-12));
    // ⟨x⁴, x²−2⟩ = E x⁶ − 2E x⁴ = 96, ‖x²−2‖² = 8
    let r = project_k(&g, &p("x1^4"), &q).unwrap();
    assert!((r.coeffs[0] - 12.0).abs() < 1e-10 && r.coeffs[1].abs() < 1e-10, "{:?}", r.coeffs);
    let again = project_k(&g, &FieldExpr::poly(r.v.clone()), &q).unwrap();
    assert!(max_diff(&again.coeffs, &r.coeffs) < 1e-10);
}

#[test]
fn center_of_mass_examples() {
    let m = cyl23();
    let q = m.quadrature(6);
    let zero = FieldExpr::Zero(Rank::Sym2);
    let b = center_of_mass(&m, &zero, &FieldExpr::poly(m.x(0)), &q).unwrap();
    assert!((b.b[0] - 2.0 * m.weighted_mass()).abs() < 1e-9 * m.weighted_mass());
    let b = center_of_mass(&m, &zero, &FieldExpr::poly(euclid(&m, "x1^2")), &q).unwrap();
    assert!(b.norm() < 1e-10);
    let g = FieldExpr::metric_block(Block::Full, FieldExpr::poly(Poly::constant(4, 1.0)));
    let b = center_of_mass(&m, &g, &FieldExpr::poly(Poly::constant(4, 1.5)), &q).unwrap();
    assert!(b.norm() < 1e-10);
}

#[test]
fn approximation_probe() {
    let m = cyl23();
    let q = m.quadrature(8);
    let h = FieldExpr::metric_block(Block::Sphere, FieldExpr::poly(euclid(&m, "x1^2 - 2")));
    let r = jacobi_approx_probe(&m, &h, &q).unwrap();
    assert!(r.lhs < 1e-8 && r.rhs < 1e-8, "{r:?}");
    let mut c = vec![Poly::zero(4); 9];
    c[8] = Poly::constant(4, 1e-2);
    let a = jacobi_approx_probe(&m, &FieldExpr::poly_sym(c.clone()), &q).unwrap();
    c[8] = Poly::constant(4, 5e-3);
    let b = jacobi_approx_probe(&m, &FieldExpr::poly_sym(c), &q).unwrap();
    assert!((a.ratio.unwrap() - b.ratio.unwrap()).abs() < 1e-9);
    let z = jacobi_approx_probe(&m, &FieldExpr::Zero(Rank::Sym2), &q).unwrap();
    assert_eq!((z.lhs, z.rhs, z.ratio), (0.0, 0.0, None));
}

#[test]
fn k_field_identities() {
    let v = Poly::parse("x1^2 - 2", 1).unwrap();
    let r = kfield_identities(&v).unwrap();
    let z = 2.0 * std::f64::consts::PI.sqrt();
    assert!((r.v_sq - 8.0 * z).abs() < 1e-10);
    assert!((r.grad_sq / r.v_sq - 1.0).abs() < 1e-12);
    assert!((r.hess_sq / r.v_sq - 0.5).abs() < 1e-12);
    let r = kfield_identities(&Poly::parse("x1*x2", 2).unwrap()).unwrap();
    assert!((&r.u - &Poly::parse("x1^2 + x2^2 - 4", 2).unwrap()).max_coeff() < 1e-12);
    assert!(r.u_remainder < 1e-10);
    assert!((r.u_grad_pairing - r.u_sq).abs() < 1e-10 * r.u_sq);
    assert!(k_constant_sample(3, 50, 7).unwrap() > 0.0);
}

#[test]
fn pairing_is_negative() {
    let m = cyl23();
    let r = nonintegrability_pairing(&m, &Poly::parse("x1^2 - 2", 1).unwrap(), 12).unwrap();
    assert!(r.expected < 0.0);
    assert!((r.pairing - r.expected).abs() < 1e-8 * r.expected.abs(), "{r:?}");
}

#[test]
fn stability_terms_along_jacobi_direction() {
    let m = cyl23();
    let q = m.quadrature(8);
    let v = euclid(&m, "x1^2 - 2");
    let probe = |eps: f64| {
        let h = FieldExpr::metric_block(Block::Sphere, FieldExpr::poly(v.scale(eps)));
        let k = FieldExpr::poly(v.scale(eps));
        stability_probe(&m, &h, &k, 10.0, &q).unwrap()
    };
    let a = probe(1e-3);
    let b = probe(5e-4);
    for r in [&a, &b] {
        assert!(r.h_hat_w22 < 1e-10 && r.grad_psi_w12 < 1e-10 && r.divf_h_w12 < 1e-10 && r.center_of_mass < 1e-10, "{r:?}");
    }
    // φ(1) is quadratic in the amplitude, like ‖u‖²
    let ra = a.u_l2.powi(2) / a.phi_moment_l1;
    let rb = b.u_l2.powi(2) / b.phi_moment_l1;
    assert!((ra / rb - 1.0).abs() < 0.02, "{ra} {rb}");
    let zero = stability_probe(&m, &FieldExpr::Zero(Rank::Sym2), &FieldExpr::Zero(Rank::Scalar), 1.0, &q).unwrap();
    assert!(zero.u_l2 + zero.phi_l2 + zero.h_hat_w22 < 1e-14);
    assert!(matches!(stability_probe(&m, &FieldExpr::metric_block(Block::Sphere, FieldExpr::poly(v)), &FieldExpr::Zero(Rank::Scalar), 1e-3, &q), Err(Error::Precondition(_))));
}
