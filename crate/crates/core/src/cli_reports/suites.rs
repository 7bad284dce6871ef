//! The experiment suites behind each command.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::config::{Command, ExperimentConfig};
use super::report::{CheckRecord, Report};
use super::richardson::richardson;
use crate::chart_geometry::{all_residuals, Chart, IdentityId, JetMode, TestFields};
use crate::error::{Error, Result};
use crate::gauge::{self, default_generator_shape, GaugeSolver, PureGauge, Stop};
use crate::model_spaces::{k_basis, make_model, ModelGeometry, ModelKind, PolyVectorBasis};
use crate::poly::Poly;
use crate::spectral::{
    check_mu_lambda, commutator_gap, eigenpairs, eigenpairs_csv, function_spectrum, growth_profile, growth_values, kernel_dimension,
    radii_in, z_fields, OpTag, PSolver, SpectralSpace,
};
use crate::variation::{first_variation_gap, k_constant_sample, kfield_identities, second_variation_gap, PerturbationPath, VariationGap, SECOND_STEP};
use crate::weighted_calculus::{io, FieldExpr, GridField, Rank, TensorField};

mod anchor {
    pub const SELF_ADJOINT: &str = "self-adjoint for the weighted $L^2$ norm";
    pub const DISCRETE: &str = "has discrete eigenvalues $0 \\leq \\mu_0 < \\mu_1";
    pub const P_DEFINITION: &str = "composing ${\\text {div}}_f^{*}$ with its adjoint";
    pub const EIGEN_STRUCTURE: &str = "with equality if and only";
    pub const COMMUTE: &str = "For a gradient Ricci soliton and any vector field";
    pub const HESSIAN: &str = "If $v \\in W^{2,2}$ satisfies";
    pub const GROWTH_FUNCTIONAL: &str = "measure the growth of $Y$ by the weighted average";
    pub const KILLING_GROWTH: &str = "On any shrinker, for any $L^2$ Killing field";
    pub const EIGEN_GROWTH: &str = "For any shrinker $(M,g,f)$, if $Y\\in L^2$";
    pub const POISSON_GROWTH: &str = "$({\\mathcal{P}} -\\lambda)\\, Y = V$";
    pub const FIRST_VARIATION: &str = "computed the first variation of $\\phi$";
    pub const SECOND_VARIATION: &str = "$h=u\\,g^1$ and $k= \\frac{\\ell}{2} \\, u$";
    pub const K_SPACE: &str = "for a constant matrix $a_{ij}$";
    pub const GAUGE_LOOP: &str = "construct the diffeomorphism $\\Phi$";
    pub const BALANCE: &str = "$\\int \\langle \\partial_{x_i} , V \\rangle \\, {\\text {e}}^{ - \\bar{f}} = -{\\mathcal{B}} (h,k)$";
}

/// Below this `‖div_f V‖` an eigenfield counts as divergence free.
const DIVF_FREE: f64 = 1e-6;
/// Prefactor of `ε / step⁴` in the roundoff allowance for identities at their floor.
const ROUNDOFF_SCALE: f64 = 1000.0;
const RADII: usize = 9;
const GROWTH_QUADRATURE: usize = 16;
/// Parts of an eigenfield this much smaller than the field itself are roundoff.
const VANISHING: f64 = 1e-20;

/// Runs the configured command and writes the JSON report and CSV series it asks for.
pub fn run(cfg: &ExperimentConfig) -> Result<Report> {
    let start = Instant::now();
    let mut report = Report::new(cfg);
    let suites: Vec<Command> = if cfg.command == Command::All { Command::SUITES.to_vec() } else { vec![cfg.command] };
    for suite in suites {
        let sub = if cfg.command == Command::All { suite_defaults(cfg, suite) } else { cfg.clone() };
        let csv = csv_target(cfg, suite);
        let t = Instant::now();
        match suite {
            Command::Identities => identities(&sub, &mut report, csv.as_deref())?,
            Command::Spectrum => spectrum(&sub, &mut report, csv.as_deref())?,
            Command::Growth => growth(&sub, &mut report, csv.as_deref())?,
            Command::Variation => variation(&sub, &mut report, csv.as_deref())?,
            Command::GaugeFix => gauge_fix(&sub, &mut report, csv.as_deref())?,
            Command::All => unreachable!("`all` is not a suite"),
        }
        report.timing.suites.insert(suite.name().to_string(), t.elapsed().as_secs_f64());
    }
    report.timing.total_seconds = start.elapsed().as_secs_f64();
    if let Some(path) = &cfg.json {
        fs::write(path, report.to_json())?;
    }
    Ok(report)
}

/// Suite settings under `all`: shared seed, tolerances and gauge/growth parameters,
/// everything else at the suite's own defaults.
fn suite_defaults(cfg: &ExperimentConfig, suite: Command) -> ExperimentConfig {
    let mut s = ExperimentConfig::new(suite);
    s.seed = cfg.seed;
    s.tolerances = cfg.tolerances.clone();
    s.radius = cfg.radius;
    s.iters = cfg.iters;
    s.window = cfg.window;
    s.beta = cfg.beta;
    s
}

fn csv_target(cfg: &ExperimentConfig, suite: Command) -> Option<PathBuf> {
    let path = cfg.emit_csv.as_ref()?;
    if cfg.command != Command::All {
        return Some(path.clone());
    }
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "series".into());
    Some(path.with_file_name(format!("{stem}_{}.csv", suite.name())))
}

fn write_csv(path: Option<&Path>, body: &str) -> Result<()> {
    if let Some(p) = path {
        fs::write(p, body)?;
    }
    Ok(())
}

fn model_of(cfg: &ExperimentConfig, default: &str) -> Result<ModelGeometry> {
    let s = cfg.model.as_deref().unwrap_or(default);
    let kind: ModelKind = s.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
    make_model(kind)
}

fn sample_point(rng: &mut ChaCha8Rng, model: &ModelGeometry, sphere: f64, euclid: f64) -> Vec<f64> {
    (0..model.dim()).map(|i| if i < model.ell() { rng.gen_range(-sphere..sphere) } else { rng.gen_range(-euclid..euclid) }).collect()
}

// ---------------------------------------------------------------------------
// identities

#[derive(Default)]
struct IdentityTally {
    analytic: f64,
    order: Option<f64>,
    floor_points: usize,
    floor_residual: f64,
    /// Largest residual at a point that neither converged nor reached roundoff.
    stalled: Option<f64>,
}

fn identities(cfg: &ExperimentConfig, report: &mut Report, csv: Option<&Path>) -> Result<()> {
    let descriptor = cfg.model.clone().unwrap_or_else(|| "torus:3".into());
    let torus_dim: Option<usize> = descriptor.strip_prefix("torus:").map(|n| n.trim().parse()).transpose().map_err(|_| Error::Config(format!("model `{descriptor}`")))?;
    let model = match torus_dim {
        Some(_) => None,
        None => Some(model_of(cfg, &descriptor)?),
    };
    let points = cfg.points.unwrap_or(20);
    let step = cfg.step.unwrap_or(0.04);
    let tol = &cfg.tolerances;
    // fourth differences of the metric set the roundoff of the finite-difference jets
    let floor_tol = tol.identity_fd.max(ROUNDOFF_SCALE * f64::EPSILON / step.powi(4));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tally: BTreeMap<&'static str, (IdentityId, IdentityTally)> = BTreeMap::new();
    let mut rows = String::from("point,identity,analytic,fd_residual,fd_residual_half,order\n");
    for p in 0..points {
        let (chart, x) = match (&model, torus_dim) {
            (Some(m), _) => ((*m.chart).clone(), sample_point(&mut rng, m, 0.8, 2.0)),
            (None, Some(n)) => {
                let c = Chart::random_torus(&mut rng, n, 0.1);
                let x = (0..n).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
                (c, x)
            }
            (None, None) => unreachable!(),
        };
        let fields = TestFields::random(chart.dim, cfg.seed.wrapping_add(100 + p as u64));
        let exact = all_residuals(&chart, &x, 0.0, &fields)?;
        let fd = all_residuals(&chart.clone().with_mode(JetMode::FiniteDifference { step }), &x, step, &fields)?;
        for a in &exact {
            let Some(r) = fd.iter().find(|r| r.id == a.id) else {
                continue;
            };
            let half = r.residual_half.unwrap_or(f64::NAN);
            let t = &mut tally.entry(a.id.name()).or_insert_with(|| (a.id, IdentityTally::default())).1;
            t.analytic = t.analytic.max(a.residual);
            let rich = richardson(&[r.residual, half])?;
            if !rich.floor && rich.order >= tol.identity_order {
                t.order = Some(t.order.map_or(rich.order, |o: f64| o.min(rich.order)));
            } else if r.residual.max(half) <= floor_tol {
                t.floor_points += 1;
                t.floor_residual = t.floor_residual.max(r.residual.max(half));
            } else {
                let worst = r.residual.max(half);
                t.stalled = Some(t.stalled.map_or(worst, |s: f64| s.max(worst)));
                t.order = Some(t.order.map_or(rich.order, |o: f64| o.min(rich.order)));
            }
            rows.push_str(&format!("{p},{},{:.6e},{:.6e},{:.6e},{:.4}\n", a.id, a.residual, r.residual, half, rich.order));
        }
    }
    let mut summary = serde_json::Map::new();
    for (name, (id, t)) in &tally {
        let anchor = id.anchor();
        report.push(CheckRecord::at_most(format!("identities/{name}/analytic"), anchor, t.analytic, tol.identity_analytic));
        match t.order {
            Some(o) => report.push(CheckRecord::at_least(format!("identities/{name}/order"), anchor, o, tol.identity_order)),
            None => report.push(CheckRecord::info(format!("identities/{name}/order"), anchor, f64::NAN).with_note("every point at the roundoff floor")),
        }
        if t.floor_points > 0 {
            report.push(
                CheckRecord::at_most(format!("identities/{name}/floor"), anchor, t.floor_residual, floor_tol)
                    .with_note(format!("{} of {points} points at the roundoff floor, allowance max(tol, 1000 eps / step^4)", t.floor_points)),
            );
        }
        if let Some(s) = t.stalled {
            report.push(CheckRecord::info(format!("identities/{name}/stalled"), anchor, s).with_note("no convergence and above the floor tolerance"));
        }
        summary.insert(name.to_string(), json!({ "analytic": t.analytic, "order": t.order, "floor_points": t.floor_points }));
    }
    report.series.insert(
        "identities".into(),
        json!({ "model": descriptor, "points": points, "step": step, "identities": summary }),
    );
    write_csv(csv, &rows)
}

// ---------------------------------------------------------------------------
// spectrum

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Harmonic polynomials of degree `k` on `S^ℓ`.
fn sphere_multiplicity(ell: usize, k: usize) -> usize {
    binomial(ell + k, ell) - if k >= 2 { binomial(ell + k - 2, ell) } else { 0 }
}

/// Eigenvalues of `−ℒ` on functions in the truncated space, ascending.
fn expected_function_spectrum(model: &ModelGeometry, sphere_degree: usize, degree: usize) -> Vec<f64> {
    let (ell, m) = (model.ell(), model.euclid_dim());
    let mut out = Vec::new();
    let sphere: Vec<(f64, usize)> = if ell == 0 {
        vec![(0.0, 1)]
    } else {
        (0..=sphere_degree).map(|k| ((k * (k + ell - 1)) as f64 / (2.0 * (ell as f64 - 1.0)), sphere_multiplicity(ell, k))).collect()
    };
    for (s, sm) in sphere {
        for j in 0..=degree {
            let mult = sm * binomial(j + m - 1, m - 1);
            out.extend(std::iter::repeat(s + j as f64 / 2.0).take(mult));
        }
    }
    out.sort_by(f64::total_cmp);
    out
}

fn spectrum(cfg: &ExperimentConfig, report: &mut Report, csv: Option<&Path>) -> Result<()> {
    let model = model_of(cfg, "gaussian:2")?;
    let op: OpTag = cfg.op.as_deref().unwrap_or("P").parse().map_err(|e: Error| Error::Config(e.to_string()))?;
    let degree = cfg.degree.unwrap_or(6);
    let rank = match op {
        OpTag::DriftLaplacian => Rank::Scalar,
        OpTag::P => Rank::Vector,
        OpTag::L => Rank::Sym2,
    };
    let cylinder = model.ell() > 0;
    let basis = if cylinder && rank == Rank::Scalar {
        PolyVectorBasis::cylinder(&model, rank, 2, degree)?
    } else {
        PolyVectorBasis::hermite(&model, rank, degree)?
    };
    let k = cfg.k.unwrap_or(12);
    if k > basis.len() {
        return Err(Error::Config(format!("k = {k} exceeds the basis dimension {}", basis.len())));
    }
    let tol = &cfg.tolerances;
    let space = SpectralSpace::new(basis)?;
    let m = space.assemble(op)?;
    report.push(CheckRecord::at_most("spectrum/symmetry", anchor::SELF_ADJOINT, m.symmetry_gap, tol.spectral));
    let pairs = eigenpairs(&m, k)?;
    let resid = pairs.iter().map(|p| p.residual).fold(0.0, f64::max);
    report.push(CheckRecord::at_most("spectrum/eigen_residual", anchor::DISCRETE, resid, tol.spectral));
    if op == OpTag::P {
        report.push(CheckRecord::at_least("spectrum/nonnegative", anchor::P_DEFINITION, m.min_eigenvalue(), -tol.spectral));
    }
    let gaussian = !cylinder;
    let n = model.dim();
    match (op, gaussian) {
        (OpTag::DriftLaplacian, _) => {
            let sphere_degree = if cylinder { 2 } else { 0 };
            let want = expected_function_spectrum(&model, sphere_degree, degree);
            report.push(CheckRecord::equal("spectrum/dimension", anchor::DISCRETE, space.len() as f64, want.len() as f64));
            let err = pairs.iter().zip(&want).map(|(p, w)| (p.value - w).abs()).fold(0.0, f64::max);
            report.push(CheckRecord::at_most("spectrum/eigenvalues", anchor::DISCRETE, err, tol.spectral));
            if cylinder {
                let probe = function_spectrum(&space.basis, k, None)?;
                let gap = probe.modes.iter().map(|md| md.hessian_gap).fold(0.0, f64::max);
                report.push(CheckRecord::at_most("spectrum/hessian_identity", anchor::HESSIAN, gap, tol.hessian));
            }
        }
        (OpTag::P, true) => {
            let dim = kernel_dimension(&pairs);
            report.push(CheckRecord::equal("spectrum/kernel_dimension", anchor::KILLING_GROWTH, dim as f64, (n + n * (n - 1) / 2) as f64));
            if let Some(next) = pairs.get(dim) {
                // exactly 1/4, so only roundoff may fall below it
                report.push(CheckRecord::at_least("spectrum/first_positive", anchor::EIGEN_STRUCTURE, next.value, 0.25 - 1e-12));
            }
            let lcal = space.assemble(OpTag::DriftLaplacian)?;
            report.push(CheckRecord::at_most("spectrum/commutator", anchor::COMMUTE, commutator_gap(&lcal, &m), tol.commutator));
            let ml = check_mu_lambda(&lcal, &m, tol.spectral, DIVF_FREE)?;
            report.push(CheckRecord::at_most("spectrum/mu_minus_2lambda", anchor::EIGEN_STRUCTURE, ml.max_excess, model.chart.kappa + tol.spectral));
            report.push(CheckRecord::holds("spectrum/equality_iff_divergence_free", anchor::EIGEN_STRUCTURE, ml.equality_matches_divergence));
        }
        _ => {}
    }
    report.series.insert(
        "spectrum".into(),
        json!({
            "model": model.kind.to_string(),
            "op": op.to_string(),
            "degree": degree,
            "basis_dimension": space.len(),
            "eigenvalues": pairs.iter().map(|p| p.value).collect::<Vec<_>>(),
        }),
    );
    write_csv(csv, &eigenpairs_csv(&pairs))
}

// ---------------------------------------------------------------------------
// growth

fn growth(cfg: &ExperimentConfig, report: &mut Report, csv: Option<&Path>) -> Result<()> {
    let model = model_of(cfg, "gaussian:2")?;
    if model.ell() > 0 {
        return Err(Error::Config("the growth suite runs on gaussian models".into()));
    }
    let degree = cfg.degree.unwrap_or(3);
    let tol = &cfg.tolerances;
    let window = cfg.window;
    let radii = radii_in(window, RADII);
    let kappa = model.chart.kappa;
    let mut rows = String::from("field,index,lambda,radius,value\n");
    let mut profiles = Vec::new();
    let record_profile = |rows: &mut String, label: &str, index: usize, lambda: f64, radii: &[f64], values: &[f64]| {
        for (r, v) in radii.iter().zip(values) {
            rows.push_str(&format!("{label},{index},{lambda:.12e},{r},{v:.12e}\n"));
        }
    };

    if model.dim() >= 2 {
        let rot = growth_profile(&model.rotation(0, 1), &model, &radii, window, 12, Some(2.0))?;
        report.push(CheckRecord::within("growth/rotation", anchor::KILLING_GROWTH, rot.fitted_slope, 2.0, tol.rigid_slope));
        record_profile(&mut rows, "rotation", 0, 0.0, &rot.radii, &rot.values);
    }
    let tr = growth_profile(&model.translation(0), &model, &radii, window, 12, None)?;
    report.push(CheckRecord::within("growth/translation", anchor::GROWTH_FUNCTIONAL, tr.fitted_slope, 0.0, tol.rigid_slope));
    record_profile(&mut rows, "translation", 0, 0.0, &tr.radii, &tr.values);

    let basis = PolyVectorBasis::hermite(&model, Rank::Vector, degree)?;
    let p = SpectralSpace::new(basis.clone())?.assemble(OpTag::P)?;
    let mut skipped = 0;
    for (i, e) in eigenpairs(&p, basis.len())?.into_iter().enumerate() {
        let y = basis.combine(&e.coeffs);
        let scale = growth_values(&y, &model, &radii, GROWTH_QUADRATURE)?.into_iter().fold(0.0, f64::max);
        let (grad_div, z) = z_fields(&y, e.value, kappa)?;
        for (label, field, bound) in [("z", &z, 8.0 * e.value + 2.0), ("grad_div", &grad_div, 4.0 * e.value)] {
            let values = growth_values(field, &model, &radii, GROWTH_QUADRATURE)?;
            if values.iter().fold(0.0, |m: f64, v| m.max(*v)) < VANISHING * scale {
                skipped += 1;
                continue;
            }
            let prof = growth_profile(field, &model, &radii, window, GROWTH_QUADRATURE, Some(bound))?;
            report.push(
                CheckRecord::at_most(format!("growth/eigenfield_{i}/{label}"), anchor::EIGEN_GROWTH, prof.fitted_slope, bound + tol.bound_slope)
                    .with_note(format!("lambda {:.6}", e.value)),
            );
            record_profile(&mut rows, label, i, e.value, &prof.radii, &prof.values);
            profiles.push(json!({ "field": label, "index": i, "lambda": e.value, "slope": prof.fitted_slope, "bound": bound }));
        }
    }
    if skipped > 0 {
        report.push(CheckRecord::info("growth/vanishing_parts", anchor::EIGEN_GROWTH, skipped as f64).with_note("identically zero, not fitted"));
    }

    // a Poisson solution against the same bounds with the extra beta
    let poisson = poisson_profiles(cfg, &model, degree, &radii)?;
    for (label, slope, reference) in &poisson {
        report.push(
            CheckRecord::info_against(format!("growth/poisson/{label}"), anchor::POISSON_GROWTH, *slope, *reference)
                .with_note(format!("beta {}", cfg.beta)),
        );
    }
    report.series.insert(
        "growth".into(),
        json!({ "degree": degree, "window": [window.0, window.1], "radii": radii, "profiles": profiles }),
    );
    write_csv(csv, &rows)
}

/// Slopes for `Y` solving `𝒫Y = ½ div_f h` with a seeded polynomial `h`, so `λ = 0` and `V = 𝒫Y`.
fn poisson_profiles(cfg: &ExperimentConfig, model: &ModelGeometry, degree: usize, radii: &[f64]) -> Result<Vec<(String, f64, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let hb = PolyVectorBasis::hermite(model, Rank::Sym2, degree)?;
    let coeffs: Vec<f64> = (0..hb.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let h = TensorField::closed(&model.chart, hb.combine(&coeffs))?;
    let solver = PSolver::new(PolyVectorBasis::hermite(model, Rank::Vector, degree + 1)?)?;
    let y = solver.solve(&h, false)?.y.expr()?;
    let (grad_div, z) = z_fields(&y, 0.0, model.chart.kappa)?;
    let b = cfg.beta;
    let delta = cfg.tolerances.bound_slope;
    let mut out = Vec::new();
    for (label, field, reference) in [("grad_div", &grad_div, 4.0 * b + delta), ("z", &z, 8.0 * b + 2.0 + delta)] {
        let prof = growth_profile(field, model, radii, cfg.window, GROWTH_QUADRATURE, Some(reference))?;
        out.push((label.to_string(), prof.fitted_slope, reference));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// variation

fn default_directions(model: &ModelGeometry) -> Vec<String> {
    let n = model.dim();
    if model.ell() > 0 {
        let mut comps = vec!["0".to_string(); n];
        comps[model.euclid_chart_index(0)] = "2*x1".into();
        vec!["jacobi:x1^2-2".into(), format!("gauge:{}", comps.join(";")), "conformal:x1+0.5".into()]
    } else if n >= 2 {
        let mut comps = vec!["0".to_string(); n];
        comps[0] = "x1*x2".into();
        comps[1] = "x1^2-x2".into();
        vec![format!("gauge:{}", comps.join(";")), "conformal:x1*x2+0.5".into()]
    } else {
        vec!["gauge:x1^2".into(), "conformal:x1^2+0.5".into()]
    }
}

/// A direction and, for Jacobi fields, the function `u` in ambient variables.
fn parse_direction(model: &ModelGeometry, spec: &str) -> Result<(PerturbationPath, Option<Poly>)> {
    let bad = |m: String| Error::Config(format!("direction `{spec}`: {m}"));
    let (kind, body) = spec.split_once(':').ok_or_else(|| bad("missing kind".into()))?;
    let euclid = |s: &str| Poly::parse(s, model.euclid_dim()).map(|p| model.lift(&p)).map_err(|e| bad(e.to_string()));
    match kind {
        "jacobi" => {
            if model.ell() == 0 {
                return Err(bad("Jacobi directions need a cylinder model".into()));
            }
            let u = euclid(body)?;
            Ok((PerturbationPath::jacobi(model, &u)?, Some(u)))
        }
        "gauge" => {
            let comps: Vec<Poly> = body.split(';').map(|c| euclid(c.trim())).collect::<Result<_>>()?;
            if comps.len() != model.dim() {
                return Err(bad(format!("{} components for dimension {}", comps.len(), model.dim())));
            }
            Ok((PerturbationPath::pure_gauge(model, comps)?, None))
        }
        "conformal" => Ok((PerturbationPath::conformal(&model.chart, FieldExpr::poly(euclid(body)?))?, None)),
        other => Err(bad(format!("unknown kind `{other}`"))),
    }
}

fn variation(cfg: &ExperimentConfig, report: &mut Report, csv: Option<&Path>) -> Result<()> {
    let model = model_of(cfg, "cylinder:2,3")?;
    let tol = &cfg.tolerances;
    let directions = if cfg.directions.is_empty() { default_directions(&model) } else { cfg.directions.clone() };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut points = vec![vec![0.0; model.dim()]];
    points.extend((0..cfg.points.unwrap_or(3)).map(|_| sample_point(&mut rng, &model, 0.8, 1.0)));
    let mut rows = String::from("direction,point,kind,gap,extrapolated_gap,order,route_gap\n");
    for dir in &directions {
        let (path, jacobi) = parse_direction(&model, dir)?;
        for (pi, x) in points.iter().enumerate() {
            let mut p = path.normalized_at(x)?;
            if let Some(s) = cfg.step {
                p = p.with_step(s);
            }
            let r = first_variation_gap(&p, x)?;
            let name = format!("variation/{dir}/p{pi}");
            // the O(step²) truncation term cancels in the extrapolation; the raw gap is kept for reference
            let extrapolated = r.fd.iter().zip(&r.fd_half).zip(&r.formula).map(|((a, b), f)| ((4.0 * b - a) / 3.0 - f).abs()).fold(0.0, f64::max);
            report.push(CheckRecord::at_most(format!("{name}/first"), anchor::FIRST_VARIATION, extrapolated, tol.first_variation));
            report.push(CheckRecord::info(format!("{name}/first_raw"), anchor::FIRST_VARIATION, r.gap).with_note(format!("step {:.1e}", r.step)));
            report.push(order_record(format!("{name}/first_order"), anchor::FIRST_VARIATION, &r));
            if let Some(g) = r.route_gap {
                report.push(CheckRecord::info(format!("{name}/route_gap"), anchor::FIRST_VARIATION, g));
            }
            rows.push_str(&format!("{dir},{pi},first,{:.6e},{extrapolated:.6e},{},{}\n", r.gap, opt(r.order), opt(r.route_gap)));
            if let Some(u) = &jacobi {
                let s = second_variation_gap(&model, u, x, SECOND_STEP)?;
                report.push(CheckRecord::at_most(format!("{name}/second"), anchor::SECOND_VARIATION, s.gap, tol.second_variation));
                report.push(order_record(format!("{name}/second_order"), anchor::SECOND_VARIATION, &s));
                rows.push_str(&format!("{dir},{pi},second,{:.6e},,{},\n", s.gap, opt(s.order)));
                if pi == 0 && model.kind == (ModelKind::Cylinder { ell: 2, n: 3 }) && *u == model.lift(&Poly::parse("x1^2-2", 1)?) {
                    // φ″ at the origin is 8 dx⊗dx
                    let e = model.euclid_chart_index(0);
                    let n = model.dim();
                    let err = s.fd.iter().enumerate().map(|(t, v)| (v - if t == e * n + e { 8.0 } else { 0.0 }).abs()).fold(0.0, f64::max);
                    report.push(CheckRecord::at_most("variation/second_spot_value", anchor::SECOND_VARIATION, err, tol.second_variation));
                }
            }
        }
    }
    k_space(&model, cfg, report)?;
    report.series.insert(
        "variation".into(),
        json!({ "model": model.kind.to_string(), "directions": directions, "points": points }),
    );
    write_csv(csv, &rows)
}

/// Half-step gaps must clear their roundoff estimate by this factor before an order is read off.
const RESOLVED: f64 = 100.0;

/// Second order under step halving, checked only where the half-step gap is resolved above roundoff.
fn order_record(name: String, anchor: &str, r: &VariationGap) -> CheckRecord {
    let resolved = r.fd_half.iter().zip(&r.formula).zip(&r.floor).any(|((h, f), fl)| (h - f).abs() > RESOLVED * fl);
    match r.order {
        Some(o) if resolved => CheckRecord::holds(name, anchor, r.order_confirmed()).with_note(format!("order {o:.3}")),
        Some(o) => CheckRecord::info(name, anchor, o).with_note("gap too close to roundoff to resolve the order"),
        None => CheckRecord::holds(name, anchor, true).with_note("at roundoff"),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6e}")).unwrap_or_default()
}

fn k_space(model: &ModelGeometry, cfg: &ExperimentConfig, report: &mut Report) -> Result<()> {
    let m = model.euclid_dim();
    let (mut grad, mut hess, mut member, mut pairing): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    for v in k_basis(m)?.elems {
        let r = kfield_identities(&v)?;
        let s = r.v_sq;
        grad = grad.max((r.grad_sq - s).abs() / s);
        hess = hess.max((2.0 * r.hess_sq - s).abs() / s);
        member = member.max(r.u_remainder / r.u_sq.sqrt().max(1.0));
        pairing = pairing.max((r.u_grad_pairing - r.u_sq).abs() / r.u_sq.max(1.0));
    }
    let tol = cfg.tolerances.k_identities;
    report.push(CheckRecord::at_most("variation/k/gradient_norm", anchor::K_SPACE, grad, tol));
    report.push(CheckRecord::at_most("variation/k/hessian_norm", anchor::K_SPACE, hess, tol));
    report.push(CheckRecord::at_most("variation/k/u_membership", anchor::K_SPACE, member, tol));
    report.push(CheckRecord::at_most("variation/k/u_pairing", anchor::K_SPACE, pairing, tol));
    let c = k_constant_sample(m, 200, cfg.seed)?;
    report.push(CheckRecord::at_least("variation/k/quartic_constant", anchor::K_SPACE, c, f64::MIN_POSITIVE));
    Ok(())
}

// ---------------------------------------------------------------------------
// gauge fixing

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn gauge_fix(cfg: &ExperimentConfig, report: &mut Report, csv: Option<&Path>) -> Result<()> {
    let model = model_of(cfg, "gaussian:2")?;
    if model.kind != (ModelKind::Gaussian { n: 2 }) {
        return Err(Error::Config("the gauge suite runs on gaussian:2".into()));
    }
    let solver = GaugeSolver::new(&model, gauge::default_grid(2), cfg.radius, gauge::DEFAULT_DEGREE)
        .map_err(|e| Error::Config(e.to_string()))?;
    let chart = &model.chart;
    let (input, generated) = match &cfg.input {
        Some(path) => {
            let h = io::read_grid_field(path, Some(chart))?;
            let kp = sibling(path, ".k");
            let k = if kp.exists() { io::read_grid_field(&kp, Some(chart))? } else { GridField::zeros(&h.grid, Rank::Scalar) };
            let gp = sibling(path, ".gen");
            let generator = if gp.exists() { Some(io::read_grid_field(&gp, Some(chart))?) } else { None };
            (generator.map(|g| PureGauge { h: h.clone(), k: k.clone(), generator: g }).ok_or((h, k)), false)
        }
        None => {
            let pg = solver.pure_gauge(&default_generator_shape(), 1e-2)?;
            if let Some(path) = &cfg.write_input {
                io::write_grid_field(path, chart, &pg.h)?;
                io::write_grid_field(&sibling(path, ".k"), chart, &pg.k)?;
                io::write_grid_field(&sibling(path, ".gen"), chart, &pg.generator)?;
            }
            (Ok(pg), true)
        }
    };
    let (h, k, floor) = match &input {
        Ok(pg) => (&pg.h, &pg.k, Some(solver.floor(pg)?.divf_w12)),
        Err((h, k)) => (h, k, None),
    };
    let run = solver.iterate(h, k, cfg.iters)?;
    let recs = run.records();
    for r in recs {
        let bal = r.step.as_ref().map(|s| s.balance_tolerance);
        report.push(
            CheckRecord::info(format!("gauge/iteration_{}/divf", r.iteration), anchor::GAUGE_LOOP, r.divf_w12)
                .with_note(format!("sup|h| {:.3e}, |B| {:.3e}", r.h_sup, r.center_of_mass_norm)),
        );
        if let Some(t) = bal {
            let b = r.center_of_mass.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
            report.push(CheckRecord::at_most(format!("gauge/iteration_{}/balance", r.iteration), anchor::BALANCE, b, t));
        }
    }
    if let Some(floor) = floor {
        report.push(CheckRecord::info("gauge/floor", anchor::GAUGE_LOOP, floor));
        for w in recs.windows(2) {
            if w[0].divf_w12 > 10.0 * floor {
                report.push(CheckRecord::at_most(format!("gauge/iteration_{}/halving", w[1].iteration), anchor::GAUGE_LOOP, w[1].divf_w12, w[0].divf_w12 / 2.0));
            }
        }
        let best = recs.iter().map(|r| r.divf_w12).fold(f64::INFINITY, f64::min);
        report.push(CheckRecord::at_most("gauge/best_residual", anchor::GAUGE_LOOP, best, 10.0 * floor).with_note("ten times the floor"));
    }
    if generated || floor.is_some() {
        let ratio = recs.last().map_or(0.0, |r| r.h_sup) / recs[0].h_sup;
        report.push(CheckRecord::at_most("gauge/h_sup_ratio", anchor::GAUGE_LOOP, ratio, 1e-2));
    }
    report.push(CheckRecord::holds("gauge/stopped", anchor::GAUGE_LOOP, run.stop != Stop::MaxIter).with_note(format!("{:?}", run.stop)));
    let mut rows = String::from("iteration,divf_w12,divf_c0,center_of_mass_norm,h_sup,k_sup\n");
    for r in recs {
        rows.push_str(&format!("{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e}\n", r.iteration, r.divf_w12, r.divf_c0, r.center_of_mass_norm, r.h_sup, r.k_sup));
    }
    report.series.insert(
        "gauge_fix".into(),
        json!({ "radius": cfg.radius, "floor": floor, "stop": run.stop, "records": recs }),
    );
    write_csv(csv, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_spaces::{make_cylinder, make_gaussian};

    #[test]
    fn function_spectrum_counts_match_basis() {
        let g = make_gaussian(2).unwrap();
        let want = expected_function_spectrum(&g, 0, 6);
        assert_eq!(want.len(), 28);
        assert_eq!(want[..4], [0.0, 0.5, 0.5, 1.0]);
        let c = make_cylinder(2, 3).unwrap();
        let want = expected_function_spectrum(&c, 2, 2);
        assert_eq!(want[..7], [0.0, 0.5, 1.0, 1.0, 1.0, 1.0, 1.5]);
        assert_eq!(want.len(), PolyVectorBasis::cylinder(&c, Rank::Scalar, 2, 2).unwrap().len());
    }

    #[test]
    fn sphere_harmonic_dimensions() {
        assert_eq!((0..4).map(|k| sphere_multiplicity(2, k)).collect::<Vec<_>>(), [1, 3, 5, 7]);
        assert_eq!(sphere_multiplicity(3, 2), 9);
    }

    #[test]
    fn default_directions_parse() {
        for m in [make_cylinder(2, 3).unwrap(), make_gaussian(2).unwrap(), make_gaussian(1).unwrap()] {
            for d in default_directions(&m) {
                parse_direction(&m, &d).unwrap();
            }
        }
        let g = make_gaussian(2).unwrap();
        assert!(matches!(parse_direction(&g, "jacobi:x1^2-2"), Err(Error::Config(_))));
        assert!(matches!(parse_direction(&g, "gauge:x1"), Err(Error::Config(_))));
    }

    #[test]
    fn csv_names_under_all() {
        let mut c = ExperimentConfig::new(Command::All);
        c.emit_csv = Some(PathBuf::from("out/run.csv"));
        assert_eq!(csv_target(&c, Command::GaugeFix).unwrap(), PathBuf::from("out/run_gauge_fix.csv"));
        c.command = Command::Spectrum;
        assert_eq!(csv_target(&c, Command::Spectrum).unwrap(), PathBuf::from("out/run.csv"));
    }

    #[test]
    fn spectrum_suite_on_the_plane() {
        let mut c = ExperimentConfig::new(Command::Spectrum);
        c.degree = Some(4);
        let r = run(&c).unwrap();
        assert!(r.passed(), "{:#?}", r.records);
        assert!(r.records.iter().any(|x| x.name == "spectrum/kernel_dimension" && x.measured == 3.0));
    }
}
