use super::*;
use crate::model_spaces::make_gaussian;
use crate::poly::Poly;

fn gauss2() -> (Arc<Chart>, Quadrature) {
    let m = make_gaussian(2).unwrap();
    let q = m.quadrature(10);
    (m.chart, q)
}

fn p(s: &str) -> Poly {
    Poly::parse(s, 2).unwrap()
}

#[test]
fn drift_laplacian_of_quadratic_potential() {
    let (chart, _) = gauss2();
    let v = TensorField::closed(&chart, FieldExpr::poly(p("x1^2 - 2"))).unwrap();
    let lv = drift_laplacian(&v).unwrap();
    for x in [[0.3, -1.2], [2.0, 0.5]] {
        let a = lv.value_at(&x).unwrap()[0];
        assert!((a + x[0] * x[0] - 2.0).abs() < 1e-12);
    }
}

#[test]
fn translation_divergence() {
    let (chart, _) = gauss2();
    let e1 = TensorField::closed(&chart, FieldExpr::poly_vector(vec![p("1"), p("0")])).unwrap();
    let d = divf_vector(&e1).unwrap();
    assert!((d.value_at(&[1.4, 0.2]).unwrap()[0] + 0.7).abs() < 1e-14);
}

#[test]
fn duality_on_polynomial_fields() {
    let (chart, q) = gauss2();
    let h = TensorField::closed(&chart, FieldExpr::poly_sym(vec![p("x1^2"), p("x1*x2 - 1"), p("x1*x2 - 1"), p("x2^3")])).unwrap();
    let y = TensorField::closed(&chart, FieldExpr::poly_vector(vec![p("x2"), p("x1^2 + 3")])).unwrap();
    let gap = adjointness_gap(&h, &y, &q).unwrap();
    assert!(gap < 1e-10, "gap {gap:e}");
}

#[test]
fn p_is_positive_and_matches_soliton_form() {
    let (chart, q) = gauss2();
    let y = TensorField::closed(&chart, FieldExpr::poly_vector(vec![p("x1*x2"), p("x1^2 - x2")])).unwrap();
    let py = p_op(&y).unwrap();
    let lhs = weighted_inner(&y, &py, &q).unwrap();
    let rhs = weighted_inner(&divf_star(&y).unwrap(), &divf_star(&y).unwrap(), &q).unwrap();
    assert!((lhs - rhs).abs() < 1e-10 * rhs.max(1.0));
    let gap = p_op_gap(&y, &[vec![0.3, 0.4], vec![-1.0, 2.0]]).unwrap();
    assert!(gap < 1e-12);
}

#[test]
fn gradient_and_divergence_free_fields_are_orthogonal() {
    let (chart, q) = gauss2();
    let grad = TensorField::closed(&chart, FieldExpr::apply(Op::Grad, FieldExpr::poly(p("x1^3 + x1*x2")))).unwrap();
    let rot = TensorField::closed(&chart, FieldExpr::poly_vector(vec![p("x2"), p("-x1")])).unwrap();
    assert!(divf_vector(&rot).unwrap().value_at(&[0.7, 1.1]).unwrap()[0].abs() < 1e-14);
    assert!(weighted_inner(&grad, &rot, &q).unwrap().abs() < 1e-10);
}

#[test]
fn concentration_inequality_on_basis_fields() {
    let m = make_gaussian(2).unwrap();
    let q = m.quadrature(14);
    let fq = FieldExpr::poly(p("0.25*x1^2 + 0.25*x2^2 - 2"));
    for s in ["x1", "x1*x2", "x1^2 - 2", "x2^3"] {
        let y = TensorField::closed(&m.chart, FieldExpr::poly(p(s))).unwrap();
        let prod = TensorField::closed(&m.chart, FieldExpr::Times(Box::new(fq.clone()), Box::new(FieldExpr::poly(p(s))))).unwrap();
        let lhs = weighted_inner(&prod, &y, &q).unwrap();
        let grad = TensorField::closed(&m.chart, FieldExpr::apply(Op::Grad, FieldExpr::poly(p(s)))).unwrap();
        let rhs = 4.0 * weighted_inner(&grad, &grad, &q).unwrap();
        assert!(lhs <= rhs + 1e-10, "{s}: {lhs} > {rhs}");
    }
}

#[test]
fn grid_and_closed_fields_do_not_mix() {
    let (chart, q) = gauss2();
    let y = TensorField::closed(&chart, FieldExpr::poly_vector(vec![p("x2"), p("1")])).unwrap();
    let g = y.resample(&Grid::new(2, 5, -1.0, 1.0)).unwrap();
    assert!(matches!(weighted_inner(&y, &g, &q), Err(Error::Representation(_))));
}

#[test]
fn sobolev_norm_of_linear_function() {
    let m = make_gaussian(1).unwrap();
    let q = m.quadrature(6);
    let u = TensorField::closed(&m.chart, FieldExpr::poly(Poly::parse("x1", 1).unwrap())).unwrap();
    // ‖x‖² = 2·2√π, ‖∇x‖² = 2√π
    let z = 2.0 * std::f64::consts::PI.sqrt();
    let w1 = weighted_sobolev_norm(&u, 1, &q).unwrap();
    assert!((w1 * w1 - 3.0 * z).abs() < 1e-12);
}
