//! One executor per subcommand. Each is a thin wrapper: it parses the
//! resolved configuration, calls exactly one library operation (plus input
//! loading), and packages the result for emission. Re-running the library
//! call with the same configuration reproduces the emitted numbers exactly.

use crate::config::{CliError, RunConfig};
use crate::output::fmt_f64;
use designforge::designs::{
    self, DesignInit, NodeSet,
};
use designforge::kernels::{
    decay_grid, decay_profile, propagation_check, CutoffFunction, KernelSpec, SpectralWindow,
};
use designforge::manifold::{ManifoldKind, ManifoldModel};
use designforge::mz::mz_survey;
use designforge::partition::{self, equal_area_partition, pick_nodes, NodeRule};
use designforge::spectral::{greiner_fit, heat_envelope_fit, heat_power_fit_diag, heat_sum};
use designforge::{EigenLabel, Point};
use serde_json::{json, Value};
use std::f64::consts::PI;
use std::fs;

/// What a subcommand produced: the JSON report, the primary CSV table,
/// optional extra CSV tables (written as `<stem>.<suffix>`), a one-line
/// `key=value` summary, and the exit code (0 success, 2 failed assertion).
pub struct Emission {
    pub json: Value,
    pub csv: String,
    pub extra_csv: Vec<(&'static str, String)>,
    pub summary: String,
    pub exit: i32,
}

fn manifold_of(cfg: &RunConfig) -> Result<ManifoldModel, CliError> {
    Ok(ManifoldModel::parse(cfg.str("manifold")?)?)
}

/// Default evaluation base point (torus origin; sphere equator point).
fn base_point(m: &ManifoldModel) -> Point {
    match m.kind {
        ManifoldKind::Sphere2 => vec![PI / 2.0, 0.0],
        ManifoldKind::Torus(d) => vec![0.0; d as usize],
    }
}

/// Loads a node set from `.json` (self-describing) or coordinate CSV
/// (requires the `manifold` key). When both the file and the configuration
/// name a manifold, they must agree.
fn load_nodes(cfg: &RunConfig) -> Result<NodeSet, CliError> {
    let path = cfg.str("nodes")?;
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read nodes file `{path}`: {e}")))?;
    let declared = match cfg.get("manifold") {
        Some(tag) => Some(ManifoldModel::parse(tag)?),
        None => None,
    };
    let nodes = if text.trim_start().starts_with('{') {
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("nodes file `{path}` is not valid JSON: {e}")))?;
        NodeSet::from_json(&v)?
    } else {
        let m = declared.ok_or_else(|| {
            CliError::usage("key `manifold` is required to read CSV node coordinates")
        })?;
        NodeSet::from_csv(m, &text)?
    };
    if let Some(m) = declared {
        if m != nodes.manifold {
            return Err(CliError::usage(format!(
                "nodes file manifold `{}` does not match configured manifold `{}`",
                nodes.manifold.tag(),
                m.tag()
            )));
        }
    }
    Ok(nodes)
}

/// Compact CSV-safe tag for an eigenfunction label.
fn label_tag(label: &EigenLabel) -> String {
    let join = |k: &[i64]| k.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";");
    match label {
        EigenLabel::Constant => "const".to_string(),
        EigenLabel::TorusCos(k) => format!("cos({})", join(k)),
        EigenLabel::TorusSin(k) => format!("sin({})", join(k)),
        EigenLabel::Sphere { l, m } => format!("sph({l};{m})"),
    }
}

// ---------------------------------------------------------------------------
// design
// ---------------------------------------------------------------------------

pub fn exec_design(cfg: &mut RunConfig) -> Result<Emission, CliError> {
    let m = manifold_of(cfg)?;
    let l = cfg.f64("L")?;
    let n = cfg.usize("N")?;
    let tol = cfg.f64("tol")?;
    let budget = cfg.usize("budget")?;
    let init = match cfg.str("init")? {
        "random" => {
            if cfg.get("seed").is_none() {
                return Err(CliError::usage(
                    "`design` with init = random is randomized: key `seed` is required",
                ));
            }
            DesignInit::Random { seed: cfg.u64("seed")? }
        }
        "centers" => DesignInit::PartitionCenters,
        "file" => {
            if cfg.get("nodes").is_none() {
                return Err(CliError::usage(
                    "`design` with init = file needs key `nodes` (a node-set file)",
                ));
            }
            DesignInit::Given(load_nodes(cfg)?)
        }
        other => {
            return Err(CliError::usage(format!(
                "key `init`: expected one of centers, random, file — got `{other}`"
            )))
        }
    };
    // Deterministic inits never consume randomness; the seed still names
    // the output files.
    if cfg.get("seed").is_none() {
        cfg.set("seed", "0");
    }

    let out = designs::construct_design(&m, l, n, &init, tol, budget)?;
    let iterations = out.trace.last().map(|r| r.iter).unwrap_or(0);
    let mut report = out.report.to_json();
    let obj = report.as_object_mut().expect("design report is an object");
    obj.insert("converged".into(), json!(out.converged));
    obj.insert("evaluations".into(), json!(out.evaluations));
    obj.insert("iterations".into(), json!(iterations));
    obj.insert("tolerance".into(), json!(tol));

    let summary = format!(
        "manifold={} L={} N={} defect={} certified={} iterations={} evaluations={}",
        m.tag(),
        cfg.str("L")?,
        n,
        fmt_f64(out.report.defect),
        out.report.certified,
        iterations,
        out.evaluations
    );
    Ok(Emission {
        json: report,
        csv: designs::trace_csv(&out.trace),
        extra_csv: vec![("nodes.csv", out.report.nodes.to_csv())],
        summary,
        exit: if out.converged { 0 } else { 2 },
    })
}

// ---------------------------------------------------------------------------
// certify
// ---------------------------------------------------------------------------

pub fn exec_certify(cfg: &mut RunConfig) -> Result<Emission, CliError> {
    let nodes = load_nodes(cfg)?;
    let m = nodes.manifold;
    let l = cfg.f64("L")?;
    let tol = cfg.f64("tol")?;
    let report = designs::design_defect(&m, l, &nodes, Some(tol))?;

    let mut body = report.to_json();
    let obj = body.as_object_mut().expect("report is an object");
    obj.insert("tolerance".into(), json!(tol));
    obj.insert("gram_defect_squared".into(), json!(report.gram_defect_squared));

    let mut csv = String::from("label,lambda,residual\n");
    for mode in &report.residuals {
        csv.push_str(&format!(
            "{},{},{}\n",
            label_tag(&mode.label),
            fmt_f64(mode.lambda),
            fmt_f64(mode.residual)
        ));
    }
    let summary = format!(
        "manifold={} L={} N={} defect={} certified={}",
        m.tag(),
        cfg.str("L")?,
        nodes.len(),
        fmt_f64(report.defect),
        report.certified
    );
    let exit = if report.certified { 0 } else { 2 };
    Ok(Emission { json: body, csv, extra_csv: vec![], summary, exit })
}

// ---------------------------------------------------------------------------
// partition
// ---------------------------------------------------------------------------

pub fn exec_partition(cfg: &mut RunConfig) -> Result<Emission, CliError> {
    let m = manifold_of(cfg)?;
    let n = cfg.usize("N")?;
    let samples = cfg.usize("samples")?;
    let seed = cfg.u64("seed")?;
    let rule_tag = cfg.str("rule")?.to_string();

    let p = equal_area_partition(&m, n)?;
    let cert = partition::certify(&p, samples, seed);
    let rule = NodeRule::parse(&rule_tag, Some(seed))?;
    let nodes = pick_nodes(&p, &rule);

    let body = json!({
        "manifold": m,
        "N": n,
        "c1": p.c1,
        "c2": p.c2,
        "c1_hat": cert.c1_hat,
        "c2_hat": cert.c2_hat,
        "ok": cert.ok,
        "violations": cert.violations.len(),
        "samples_per_region": samples,
        "rule": rule_tag,
    });
    let mut csv = String::from("region,measure,inner_radius,outer_radius,samples,violations\n");
    for row in &cert.rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.region,
            fmt_f64(row.measure),
            fmt_f64(row.inner_radius),
            fmt_f64(row.outer_radius),
            row.samples,
            row.violations
        ));
    }
    let summary = format!(
        "manifold={} N={n} c1_hat={} c2_hat={} ok={}",
        m.tag(),
        fmt_f64(cert.c1_hat),
        fmt_f64(cert.c2_hat),
        cert.ok
    );
    Ok(Emission {
        json: body,
        csv,
        extra_csv: vec![("nodes.csv", nodes.to_csv())],
        summary,
        exit: if cert.ok { 0 } else { 2 },
    })
}

// ---------------------------------------------------------------------------
// mz-survey
// ---------------------------------------------------------------------------

pub fn exec_mz_survey(cfg: &mut RunConfig) -> Result<Emission, CliError> {
    let m = manifold_of(cfg)?;
    let l_grid = cfg.list_f64("l_grid")?;
    let n_grid = cfg.list_usize("n_grid")?;
    let trials = cfg.usize("trials")?;
    let seed = cfg.u64("seed")?;

    let rep = mz_survey(&m, &l_grid, &n_grid, trials, seed)?;
    let summary = format!(
        "manifold={} cells={} c_hat={} c3_hat={} value_stability={} gradient_stability={}",
        m.tag(),
        rep.cells.len(),
        fmt_f64(rep.c_hat),
        fmt_f64(rep.c3_hat),
        fmt_f64(rep.value_stability),
        fmt_f64(rep.gradient_stability)
    );
    Ok(Emission { json: rep.to_json(), csv: rep.to_csv(), extra_csv: vec![], summary, exit: 0 })
}

// ---------------------------------------------------------------------------
// kernel-decay
// ---------------------------------------------------------------------------

pub fn exec_kernel_decay(cfg: &mut RunConfig) -> Result<Emission, CliError> {
    let m = manifold_of(cfg)?;
    let l_grid = cfg.list_f64("l_grid")?;
    let smoothness = cfg.usize("smoothness")? as u32;
    let scaled_top = cfg.f64("scaled_top")?;
    let ell = cfg.usize("ell")?;
    let em = cfg.usize("em")?;
    let cutoff_tag = cfg.str("cutoff")?.to_string();
    let cutoff = match cutoff_tag.as_str() {
        "plateau" => CutoffFunction::plateau(smoothness),
        "annulus" => CutoffFunction::annulus(smoothness),
        "mollifier_hat" => CutoffFunction::mollifier_hat(smoothness),
        other => {
            return Err(CliError::usage(format!(
                "key `cutoff`: expected one of plateau, annulus, mollifier_hat — got `{other}`"
            )))
        }
    };

    let mut profiles = Vec::new();
    let mut csv = String::from("bandwidth,dist,value,bound,ratio\n");
    let mut exponent_sum = 0.0;
    for &l in &l_grid {
        let spec = KernelSpec::new(m, l, cutoff.clone(), vec![0; ell], vec![0; em])?;
        let dists = decay_grid(l, scaled_top, m.diameter());
        let prof = decay_profile(&spec, &dists)?;
        for row in &prof.rows {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                fmt_f64(row.bandwidth),
                fmt_f64(row.dist),
                fmt_f64(row.value),
                fmt_f64(row.bound),
                fmt_f64(row.ratio)
            ));
        }
        exponent_sum += prof.exponent;
        profiles.push(json!({
            "bandwidth": l,
            "exponent": prof.exponent,
            "c9_hat": prof.c9_hat,
            "k_exponent": prof.k_exponent,
        }));
    }
    let mean_exponent = exponent_sum / l_grid.len() as f64;
    let body = json!({
        "manifold": m,
        "cutoff": cutoff_tag,
        "smoothness": smoothness,
        "ell": ell,
        "em": em,
        "scaled_top": scaled_top,
        "profiles": profiles,
        "mean_exponent": mean_exponent,
    });
    let summary = format!(
        "manifold={} cutoff={} smoothness={} bandwidths={} mean_exponent={}",
        m.tag(),
        cutoff_tag,
        smoothness,
        l_grid.len(),
        fmt_f64(mean_exponent)
    );
    Ok(Emission { json: body, csv, extra_csv: vec![], summary, exit: 0 })
}

// ---------------------------------------------------------------------------
// propagation
// ---------------------------------------------------------------------------

pub fn exec_propagation(cfg: &mut RunConfig) -> Result<Emission, CliError> {
    let m = manifold_of(cfg)?;
    let r = cfg.f64("r")?;
    let dist = cfg.f64("dist")?;
    let window_tag = cfg.str("window")?.to_string();
    let window = match window_tag.as_str() {
        "plateau" => SpectralWindow::SmoothPlateau,
        "fejer" => SpectralWindow::Fejer,
        "zero" => SpectralWindow::Zero,
        other => {
            return Err(CliError::usage(format!(
                "key `window`: expected one of plateau, fejer, zero — got `{other}`"
            )))
        }
    };
    let x = base_point(&m);
    let y = m.exp_map(&m.frame_vector(&x, 0), dist);
    let rep = propagation_check(&m, window, r, &x, &y)?;

    let body = json!({
        "manifold": m,
        "window": window_tag,
        "r": r,
        "dist": dist,
        "value": rep.value,
        "at_zero": rep.at_zero,
        "tail_bound": rep.tail_bound,
        "terms": rep.terms,
    });
    let csv = format!(
        "window,r,dist,value,at_zero,tail_bound,terms\n{},{},{},{},{},{},{}\n",
        window_tag,
        fmt_f64(r),
        fmt_f64(dist),
        fmt_f64(rep.value),
        fmt_f64(rep.at_zero),
        fmt_f64(rep.tail_bound),
        rep.terms
    );
    let summary = format!(
        "manifold={} window={} r={} dist={} value={} at_zero={}",
        m.tag(),
        window_tag,
        fmt_f64(r),
        fmt_f64(dist),
        fmt_f64(rep.value),
        fmt_f64(rep.at_zero)
    );
    Ok(Emission { json: body, csv, extra_csv: vec![], summary, exit: 0 })
}

// ---------------------------------------------------------------------------
// heat-fit
// ---------------------------------------------------------------------------

pub fn exec_heat_fit(cfg: &mut RunConfig) -> Result<Emission, CliError> {
    let m = manifold_of(cfg)?;
    let ell = cfg.usize("ell")?;
    let em = cfg.usize("em")?;
    let (t_min, t_max, t_count) = (cfg.f64("t_min")?, cfg.f64("t_max")?, cfg.usize("t_count")?);
    let (d_min, d_max, d_count) =
        (cfg.f64("dist_min")?, cfg.f64("dist_max")?, cfg.usize("dist_count")?);
    if !(t_min > 0.0 && t_min <= t_max) || t_count < 2 {
        return Err(CliError::usage(
            "keys `t_min`/`t_max`/`t_count`: need 0 < t_min ≤ t_max and t_count ≥ 2",
        ));
    }
    if !(d_min > 0.0 && d_min <= d_max) || d_count < 2 {
        return Err(CliError::usage(
            "keys `dist_min`/`dist_max`/`dist_count`: need 0 < dist_min ≤ dist_max and dist_count ≥ 2",
        ));
    }
    let left = vec![0usize; ell];
    let right = vec![0usize; em];
    let ts: Vec<f64> = (0..t_count)
        .map(|i| t_min * (t_max / t_min).powf(i as f64 / (t_count - 1) as f64))
        .collect();
    let x = base_point(&m);
    let pairs: Vec<(Point, Point)> = (0..d_count)
        .map(|j| {
            let d = d_min + (d_max - d_min) * j as f64 / (d_count - 1) as f64;
            (x.clone(), m.exp_map(&m.frame_vector(&x, 0), d))
        })
        .collect();

    let fit = greiner_fit(&m, &left, &right, &ts, &pairs)?;
    // The on-diagonal sum vanishes identically for odd derivative counts;
    // the envelope over the pair grid carries the power law there.
    let (power_kind, power) = if (ell + em) % 2 == 0 {
        let diag = match m.tag().as_str() {
            "sphere2" => vec![1.1, 0.3],
            _ => {
                let mut p = vec![0.3; m.frame_dim()];
                p[0] = 0.9;
                p
            }
        };
        ("diagonal", heat_power_fit_diag(&m, &left, &right, &ts, &diag)?)
    } else {
        ("envelope", heat_envelope_fit(&m, &left, &right, &ts, &pairs)?)
    };

    let mut csv = String::from("t,dist,value\n");
    for &t in &ts {
        for (px, py) in &pairs {
            let hs = heat_sum(&m, t, px, py, &left, &right)?;
            csv.push_str(&format!(
                "{},{},{}\n",
                fmt_f64(t),
                fmt_f64(m.distance(px, py)),
                fmt_f64(hs.value)
            ));
        }
    }
    let body = json!({
        "manifold": m,
        "ell": ell,
        "em": em,
        "c7": fit.c7,
        "t_exponent": fit.t_exponent,
        "c8": fit.c8,
        "rows": fit.rows,
        "max_log_residual": fit.max_log_residual,
        "dominating_c7": fit.dominating_c7,
        "power_kind": power_kind,
        "power_prefactor": power.0,
        "power_exponent": power.1,
    });
    let summary = format!(
        "manifold={} ell={ell} em={em} c8={} t_exponent={} power_exponent={}",
        m.tag(),
        fmt_f64(fit.c8),
        fmt_f64(fit.t_exponent),
        fmt_f64(power.1)
    );
    Ok(Emission { json: body, csv, extra_csv: vec![], summary, exit: 0 })
}

// ---------------------------------------------------------------------------
// flow-check
// ---------------------------------------------------------------------------

pub fn exec_flow_check(cfg: &mut RunConfig) -> Result<Emission, CliError> {
    let m = manifold_of(cfg)?;
    let l = cfg.f64("L")?;
    let n = cfg.usize("N")?;
    let trials = cfg.usize("trials")?;
    let seed = cfg.u64("seed")?;

    let rep = designs::boundary_positivity_check(&m, l, n, trials, seed)?;
    let body = json!({
        "manifold": m,
        "L": l,
        "N": n,
        "trials": trials,
        "seed": seed,
        "c_hat": rep.c_hat,
        "gate_satisfied": rep.gate_satisfied,
        "c2": rep.c2,
        "horizon": rep.horizon,
        "epsilon": rep.epsilon,
        "min_functional": rep.min_functional,
    });
    let mut csv = String::from("trial,functional_plus,functional_minus\n");
    for row in &rep.rows {
        csv.push_str(&format!(
            "{},{},{}\n",
            row.trial,
            fmt_f64(row.functional_plus),
            fmt_f64(row.functional_minus)
        ));
    }
    let positive = rep.min_functional > 0.0;
    let summary = format!(
        "manifold={} L={} N={n} trials={trials} gate_satisfied={} min_functional={} positive={}",
        m.tag(),
        cfg.str("L")?,
        rep.gate_satisfied,
        fmt_f64(rep.min_functional),
        positive
    );
    Ok(Emission { json: body, csv, extra_csv: vec![], summary, exit: if positive { 0 } else { 2 } })
}

// ---------------------------------------------------------------------------
// scaling
// ---------------------------------------------------------------------------

pub fn exec_scaling(cfg: &mut RunConfig) -> Result<Emission, CliError> {
    let m = manifold_of(cfg)?;
    let l_grid = cfg.list_f64("l_grid")?;
    let tol = cfg.f64("tol")?;
    let budget = cfg.usize("budget")?;
    let seed = cfg.u64("seed")?;

    let rep = designs::scaling_experiment(&m, &l_grid, tol, seed, budget)?;
    let rows: Vec<Value> =
        rep.rows.iter().map(|r| json!({"L": r.l, "n_star": r.n_star})).collect();
    let body = json!({
        "manifold": m,
        "tol": tol,
        "seed": seed,
        "budget": budget,
        "rows": rows,
        "ols_slope": rep.ols_slope,
        "ols_intercept": rep.ols_intercept,
        "zero_intercept_slope": rep.zero_intercept_slope,
    });
    let mut csv = String::from("L,n_star\n");
    for row in &rep.rows {
        csv.push_str(&format!("{},{}\n", fmt_f64(row.l), row.n_star));
    }
    let mut attempts = String::from("L,n,restarts,success,best_defect\n");
    for row in &rep.rows {
        for att in &row.attempts {
            attempts.push_str(&format!(
                "{},{},{},{},{}\n",
                fmt_f64(row.l),
                att.n,
                att.restarts,
                att.success,
                fmt_f64(att.best_defect)
            ));
        }
    }
    let n_stars: Vec<String> = rep.rows.iter().map(|r| r.n_star.to_string()).collect();
    let summary = format!(
        "manifold={} n_star={} zero_intercept_slope={} ols_slope={}",
        m.tag(),
        n_stars.join(","),
        fmt_f64(rep.zero_intercept_slope),
        fmt_f64(rep.ols_slope)
    );
    Ok(Emission {
        json: body,
        csv,
        extra_csv: vec![("attempts.csv", attempts)],
        summary,
        exit: 0,
    })
}

// ---------------------------------------------------------------------------
// wce
// ---------------------------------------------------------------------------

pub fn exec_wce(cfg: &mut RunConfig) -> Result<Emission, CliError> {
    let nodes = load_nodes(cfg)?;
    let m = nodes.manifold;
    let alpha = cfg.f64("alpha")?;
    let lambda_max = cfg.f64("lambda_max")?;

    let rep = designs::worst_case_error(&m, &nodes, alpha, lambda_max)?;
    let body = json!({
        "manifold": m,
        "alpha": alpha,
        "lambda_max": lambda_max,
        "N": rep.n,
        "band_sum": rep.band_sum,
        "tail_bound": rep.tail_bound,
        "wce": rep.wce,
    });
    let csv = format!(
        "alpha,lambda_max,N,band_sum,tail_bound,wce\n{},{},{},{},{},{}\n",
        fmt_f64(alpha),
        fmt_f64(lambda_max),
        rep.n,
        fmt_f64(rep.band_sum),
        fmt_f64(rep.tail_bound),
        fmt_f64(rep.wce)
    );
    let summary = format!(
        "manifold={} alpha={} lambda_max={} N={} wce={} band_sum={} tail_bound={}",
        m.tag(),
        cfg.str("alpha")?,
        cfg.str("lambda_max")?,
        rep.n,
        fmt_f64(rep.wce),
        fmt_f64(rep.band_sum),
        fmt_f64(rep.tail_bound)
    );
    Ok(Emission { json: body, csv, extra_csv: vec![], summary, exit: 0 })
}
