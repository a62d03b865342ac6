//! Command-line driver for the quadrature-design library.
//!
//! Grammar: `designforge <subcommand> [--config FILE] [--key value ...]`.
//! Every parameter is a flat `key = value` pair; values come from built-in
//! defaults, then the `--config` file, then flags (flags win). Long flag
//! names are exactly the config keys. Each run writes, atomically, into
//! the output directory:
//!
//! * `<subcommand>-<seed>.config` — the fully resolved configuration
//!   (re-runnable: `--config` on it reproduces the run byte-for-byte);
//! * `<subcommand>-<seed>.json` — the report (when `formats` has `json`);
//! * `<subcommand>-<seed>.csv` (+ extra `.*.csv` tables) — the data
//!   (when `formats` has `csv`);
//!
//! prints a one-line summary to stdout, and exits 0 on success, 2 when a
//! certification or positivity assertion failed, 1 on usage errors.

pub mod commands;
pub mod config;
pub mod output;

use clap::{Args, Parser, Subcommand};
use commands::Emission;
use config::{emit_config, key, load_config, resolve, CliError, KeySpec, RunConfig};
use output::{render_json, write_atomic};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "designforge",
    version,
    about = "Constructs and certifies equal-weight quadrature designs on model manifolds",
    after_help = "Manifold tags: torus1 (= circle), torus2, torus3, …, sphere2.\n\
        Config file: flat `key = value` lines (# comments); long flag names are exactly the\n\
        config keys and override the file. Randomized subcommands require `seed`.\n\
        Environment: DESIGNFORGE_THREADS caps internal parallelism (outputs do not depend on it).\n\
        Exit codes: 0 success; 1 usage error; 2 a certification/positivity assertion failed."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Flags shared by every subcommand.
#[derive(Args, Clone, Default)]
struct Common {
    /// Flat `key = value` config file; flags override its entries.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory (created if absent). Default ".".
    #[arg(long, value_name = "DIR")]
    out: Option<String>,
    /// Comma list of output formats to write, from: csv, json. Default both.
    #[arg(long, value_name = "LIST")]
    formats: Option<String>,
    /// RNG seed. Required for randomized subcommands; defaults to 0 for
    /// deterministic ones. Also names the output files `<subcommand>-<seed>.*`.
    #[arg(long, value_name = "U64")]
    seed: Option<String>,
}

#[derive(Args)]
#[command(after_help = "Outputs: design-<seed>.json (manifold, L, N, defect, certified, \
    converged, evaluations, iterations, tolerance, nodes); design-<seed>.csv — optimizer trace, \
    columns: iter,defect,step; design-<seed>.nodes.csv — final node coordinates, one point per row.\n\
    Exit 2 when the defect does not reach the tolerance within the budget.")]
struct DesignArgs {
    #[command(flatten)]
    common: Common,
    /// Manifold tag (torus1, torus2, …, sphere2).
    #[arg(long)]
    manifold: Option<String>,
    /// Bandwidth: the design must integrate every eigenfunction with λ ≤ L.
    #[arg(long = "L", value_name = "L")]
    l: Option<String>,
    /// Number of nodes.
    #[arg(long = "N", value_name = "N")]
    n: Option<String>,
    /// Initial configuration: centers (equal-area partition centers),
    /// random (seeded; requires seed), or file (requires nodes).
    #[arg(long)]
    init: Option<String>,
    /// Node-set file (.json or coordinate CSV) for init = file.
    #[arg(long, value_name = "FILE")]
    nodes: Option<String>,
    /// Certification tolerance on the defect. Default 1e-10.
    #[arg(long)]
    tol: Option<String>,
    /// Defect-evaluation budget for the optimizer. Default 20000.
    #[arg(long)]
    budget: Option<String>,
}

#[derive(Args)]
#[command(after_help = "Outputs: certify-<seed>.json (manifold, L, N, defect, certified, \
    tolerance, gram_defect_squared, nodes); certify-<seed>.csv — per-mode residuals, columns: \
    label,lambda,residual.\nExit 2 when the node set does not certify at the tolerance.")]
struct CertifyArgs {
    #[command(flatten)]
    common: Common,
    /// Node-set file: .json (self-describing) or coordinate CSV (needs manifold).
    #[arg(long, value_name = "FILE")]
    nodes: Option<String>,
    /// Manifold tag; required for CSV node files, checked against JSON ones.
    #[arg(long)]
    manifold: Option<String>,
    /// Bandwidth to certify against.
    #[arg(long = "L", value_name = "L")]
    l: Option<String>,
    /// Certification tolerance on the defect. Default 1e-10.
    #[arg(long)]
    tol: Option<String>,
}

#[derive(Args)]
#[command(after_help = "Outputs: partition-<seed>.json (c1, c2, c1_hat, c2_hat, ok, violations, \
    samples_per_region, rule); partition-<seed>.csv — per-region certificates, columns: \
    region,measure,inner_radius,outer_radius,samples,violations; partition-<seed>.nodes.csv — \
    one node per region picked by `rule`.\nExit 2 when sampling finds a ball-certificate violation.")]
struct PartitionArgs {
    #[command(flatten)]
    common: Common,
    /// Manifold tag.
    #[arg(long)]
    manifold: Option<String>,
    /// Number of equal-measure regions.
    #[arg(long = "N", value_name = "N")]
    n: Option<String>,
    /// Certification samples per region. Default 256.
    #[arg(long)]
    samples: Option<String>,
    /// Node rule: center, inner_center, random, corner. Default center.
    #[arg(long)]
    rule: Option<String>,
}

#[derive(Args)]
#[command(after_help = "Outputs: mz-survey-<seed>.json (c_hat, c3_hat, value_stability, \
    gradient_stability, corner_dominates_fraction, cells, rows); mz-survey-<seed>.csv — per-trial \
    sampling ratios, columns: L,N,rule,trial,ratio_value,ratio_grad.")]
struct MzSurveyArgs {
    #[command(flatten)]
    common: Common,
    /// Manifold tag.
    #[arg(long)]
    manifold: Option<String>,
    /// Comma list of bandwidths, e.g. 4,5,6.
    #[arg(long = "l_grid")]
    l_grid: Option<String>,
    /// Comma list of region counts, e.g. 20,24,28 (each cell needs L ≤ N^(1/d)).
    #[arg(long = "n_grid")]
    n_grid: Option<String>,
    /// Random bandlimited functions per cell. Default 100.
    #[arg(long)]
    trials: Option<String>,
}

#[derive(Args)]
#[command(after_help = "Outputs: kernel-decay-<seed>.json (per-bandwidth fitted decay exponent, \
    c9_hat, k_exponent, and their mean); kernel-decay-<seed>.csv — sampled kernel values, columns: \
    bandwidth,dist,value,bound,ratio.")]
struct KernelDecayArgs {
    #[command(flatten)]
    common: Common,
    /// Manifold tag.
    #[arg(long)]
    manifold: Option<String>,
    /// Comma list of kernel bandwidths, e.g. 8,16,32.
    #[arg(long = "l_grid")]
    l_grid: Option<String>,
    /// Cutoff smoothness order S (decay exponent target). Default 6.
    #[arg(long)]
    smoothness: Option<String>,
    /// Largest scaled distance L·dist sampled. Default 40.
    #[arg(long = "scaled_top")]
    scaled_top: Option<String>,
    /// Cutoff shape: plateau, annulus, mollifier_hat. Default plateau.
    #[arg(long)]
    cutoff: Option<String>,
    /// Left frame derivatives applied to the kernel (0–2). Default 0.
    #[arg(long)]
    ell: Option<String>,
    /// Right frame derivatives applied to the kernel (0–1). Default 0.
    #[arg(long)]
    em: Option<String>,
}

#[derive(Args)]
#[command(after_help = "Outputs: propagation-<seed>.json and propagation-<seed>.csv — columns: \
    window,r,dist,value,at_zero,tail_bound,terms. The kernel Σ G(λ_k) φ_k(x) φ_k(y) with Ĝ \
    supported in [−2r, 2r] is evaluated at |x − y| = dist; on the circle it vanishes exactly \
    for dist > 2r.")]
struct PropagationArgs {
    #[command(flatten)]
    common: Common,
    /// Manifold tag: torus1 or sphere2.
    #[arg(long)]
    manifold: Option<String>,
    /// Window: plateau (smooth, compactly supported Ĝ), fejer, zero. Default plateau.
    #[arg(long)]
    window: Option<String>,
    /// Half-support scale: Ĝ lives on [−2r, 2r].
    #[arg(long)]
    r: Option<String>,
    /// Geodesic distance between the two evaluation points.
    #[arg(long)]
    dist: Option<String>,
}

#[derive(Args)]
#[command(after_help = "Outputs: heat-fit-<seed>.json (Gaussian-model fit log|K| ≈ log c7 + \
    t_exponent·log t − c8·dist²/t over the (t, dist) grid, plus a pure power-law fit of the \
    on-diagonal value — or its off-diagonal envelope when ell+em is odd); heat-fit-<seed>.csv — \
    sampled heat sums, columns: t,dist,value.")]
struct HeatFitArgs {
    #[command(flatten)]
    common: Common,
    /// Manifold tag.
    #[arg(long)]
    manifold: Option<String>,
    /// Left frame derivatives (0–2). Default 0.
    #[arg(long)]
    ell: Option<String>,
    /// Right frame derivatives (0–1). Default 0.
    #[arg(long)]
    em: Option<String>,
    /// Smallest diffusion time (> 0). Default 0.02.
    #[arg(long = "t_min")]
    t_min: Option<String>,
    /// Largest diffusion time (≤ 1). Default 0.2.
    #[arg(long = "t_max")]
    t_max: Option<String>,
    /// Log-spaced time-grid size (≥ 2). Default 6.
    #[arg(long = "t_count")]
    t_count: Option<String>,
    /// Smallest pair distance. Default 0.4.
    #[arg(long = "dist_min")]
    dist_min: Option<String>,
    /// Largest pair distance. Default 2.8.
    #[arg(long = "dist_max")]
    dist_max: Option<String>,
    /// Distance-grid size (≥ 2). Default 7.
    #[arg(long = "dist_count")]
    dist_count: Option<String>,
}

#[derive(Args)]
#[command(after_help = "Outputs: flow-check-<seed>.json (c_hat, gate_satisfied, c2, horizon, \
    epsilon, min_functional); flow-check-<seed>.csv — per-trial flowed node averages of ±P, \
    columns: trial,functional_plus,functional_minus.\nExit 2 when min_functional ≤ 0.")]
struct FlowCheckArgs {
    #[command(flatten)]
    common: Common,
    /// Manifold tag.
    #[arg(long)]
    manifold: Option<String>,
    /// Bandwidth of the random mean-zero polynomials.
    #[arg(long = "L", value_name = "L")]
    l: Option<String>,
    /// Number of partition regions / flowed nodes.
    #[arg(long = "N", value_name = "N")]
    n: Option<String>,
    /// Random polynomials per sign. Default 20.
    #[arg(long)]
    trials: Option<String>,
}

#[derive(Args)]
#[command(after_help = "Outputs: scaling-<seed>.json (per-L minimal certified design size and \
    log-log slopes); scaling-<seed>.csv — columns: L,n_star; scaling-<seed>.attempts.csv — \
    search trace, columns: L,n,restarts,success,best_defect.")]
struct ScalingArgs {
    #[command(flatten)]
    common: Common,
    /// Manifold tag.
    #[arg(long)]
    manifold: Option<String>,
    /// Strictly ascending comma list of bandwidths, e.g. 4,8,16.
    #[arg(long = "l_grid")]
    l_grid: Option<String>,
    /// Certification tolerance. Default 1e-6.
    #[arg(long)]
    tol: Option<String>,
    /// Defect-evaluation budget per construction attempt. Default 4000.
    #[arg(long)]
    budget: Option<String>,
}

#[derive(Args)]
#[command(after_help = "Outputs: wce-<seed>.json and wce-<seed>.csv — columns: \
    alpha,lambda_max,N,band_sum,tail_bound,wce. The worst-case quadrature error over the unit \
    ball of the Sobolev-type space of order alpha (alpha > d/2): residuals summed to lambda_max \
    plus an analytic worst-case tail bound.")]
struct WceArgs {
    #[command(flatten)]
    common: Common,
    /// Node-set file: .json (self-describing) or coordinate CSV (needs manifold).
    #[arg(long, value_name = "FILE")]
    nodes: Option<String>,
    /// Manifold tag; required for CSV node files, checked against JSON ones.
    #[arg(long)]
    manifold: Option<String>,
    /// Sobolev smoothness order (must exceed d/2).
    #[arg(long)]
    alpha: Option<String>,
    /// Spectral cutoff between the computed band and the bounded tail.
    #[arg(long = "lambda_max")]
    lambda_max: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Construct an N-node design exact on the bandwidth-L eigenspace by
    /// defect minimization, and certify the result.
    Design(DesignArgs),
    /// Certify a node-set file as an L-design: per-mode residuals, defect,
    /// and the pairwise cross-check.
    Certify(CertifyArgs),
    /// Build the equal-measure partition and certify its inner/outer ball
    /// constants by sampling.
    Partition(PartitionArgs),
    /// Survey Marcinkiewicz–Zygmund value/gradient sampling ratios over an
    /// (L, N) grid with random bandlimited functions.
    #[command(name = "mz-survey")]
    MzSurvey(MzSurveyArgs),
    /// Sample localized-kernel decay profiles and fit the decay exponent
    /// per bandwidth.
    #[command(name = "kernel-decay")]
    KernelDecay(KernelDecayArgs),
    /// Evaluate a compactly-supported spectral multiplier at one pair of
    /// points (finite-propagation check).
    Propagation(PropagationArgs),
    /// Fit heat-type kernel magnitudes to the Gaussian bound model over a
    /// (t, distance) grid.
    #[command(name = "heat-fit")]
    HeatFit(HeatFitArgs),
    /// Flow partition nodes along ±P with the smoothed unit-speed ascent
    /// and check the flowed average of P stays positive.
    #[command(name = "flow-check")]
    FlowCheck(FlowCheckArgs),
    /// Find the minimal certified design size N*(L) over a bandwidth grid
    /// and fit the log-log growth slope.
    Scaling(ScalingArgs),
    /// Worst-case quadrature error of a node set in a Sobolev-type space.
    Wce(WceArgs),
}

const DESIGN_KEYS: &[KeySpec] = &[
    key("manifold", None, true),
    key("L", None, true),
    key("N", None, true),
    key("init", Some("centers"), false),
    key("nodes", None, false),
    key("tol", Some("1e-10"), false),
    key("budget", Some("20000"), false),
    key("seed", None, false),
    key("out", Some("."), false),
    key("formats", Some("csv,json"), false),
];

const CERTIFY_KEYS: &[KeySpec] = &[
    key("nodes", None, true),
    key("manifold", None, false),
    key("L", None, true),
    key("tol", Some("1e-10"), false),
    key("seed", Some("0"), false),
    key("out", Some("."), false),
    key("formats", Some("csv,json"), false),
];

const PARTITION_KEYS: &[KeySpec] = &[
    key("manifold", None, true),
    key("N", None, true),
    key("samples", Some("256"), false),
    key("rule", Some("center"), false),
    key("seed", None, true),
    key("out", Some("."), false),
    key("formats", Some("csv,json"), false),
];

const MZ_SURVEY_KEYS: &[KeySpec] = &[
    key("manifold", None, true),
    key("l_grid", None, true),
    key("n_grid", None, true),
    key("trials", Some("100"), false),
    key("seed", None, true),
    key("out", Some("."), false),
    key("formats", Some("csv,json"), false),
];

const KERNEL_DECAY_KEYS: &[KeySpec] = &[
    key("manifold", None, true),
    key("l_grid", None, true),
    key("smoothness", Some("6"), false),
    key("scaled_top", Some("40"), false),
    key("cutoff", Some("plateau"), false),
    key("ell", Some("0"), false),
    key("em", Some("0"), false),
    key("seed", Some("0"), false),
    key("out", Some("."), false),
    key("formats", Some("csv,json"), false),
];

const PROPAGATION_KEYS: &[KeySpec] = &[
    key("manifold", None, true),
    key("window", Some("plateau"), false),
    key("r", None, true),
    key("dist", None, true),
    key("seed", Some("0"), false),
    key("out", Some("."), false),
    key("formats", Some("csv,json"), false),
];

const HEAT_FIT_KEYS: &[KeySpec] = &[
    key("manifold", None, true),
    key("ell", Some("0"), false),
    key("em", Some("0"), false),
    key("t_min", Some("0.02"), false),
    key("t_max", Some("0.2"), false),
    key("t_count", Some("6"), false),
    key("dist_min", Some("0.4"), false),
    key("dist_max", Some("2.8"), false),
    key("dist_count", Some("7"), false),
    key("seed", Some("0"), false),
    key("out", Some("."), false),
    key("formats", Some("csv,json"), false),
];

const FLOW_CHECK_KEYS: &[KeySpec] = &[
    key("manifold", None, true),
    key("L", None, true),
    key("N", None, true),
    key("trials", Some("20"), false),
    key("seed", None, true),
    key("out", Some("."), false),
    key("formats", Some("csv,json"), false),
];

const SCALING_KEYS: &[KeySpec] = &[
    key("manifold", None, true),
    key("l_grid", None, true),
    key("tol", Some("1e-6"), false),
    key("budget", Some("4000"), false),
    key("seed", None, true),
    key("out", Some("."), false),
    key("formats", Some("csv,json"), false),
];

const WCE_KEYS: &[KeySpec] = &[
    key("nodes", None, true),
    key("manifold", None, false),
    key("alpha", None, true),
    key("lambda_max", None, true),
    key("seed", Some("0"), false),
    key("out", Some("."), false),
    key("formats", Some("csv,json"), false),
];

/// Entry point: parse, resolve, execute, emit. Returns the process exit
/// code (0 success, 1 usage error, 2 failed certification/assertion).
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    if let Err(msg) = apply_thread_cap() {
        eprintln!("error: {msg}");
        return 1;
    }
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.exit
        }
    }
}

fn apply_thread_cap() -> Result<(), String> {
    match std::env::var("DESIGNFORGE_THREADS") {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| format!("DESIGNFORGE_THREADS must be a positive integer, got `{v}`"))?;
            if n == 0 {
                return Err("DESIGNFORGE_THREADS must be a positive integer, got `0`".into());
            }
            // A second build in the same process keeps the first pool;
            // results do not depend on the thread count.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            Ok(())
        }
        Err(std::env::VarError::NotPresent) => Ok(()),
        Err(e) => Err(format!("DESIGNFORGE_THREADS: {e}")),
    }
}

fn dispatch(cmd: Cmd) -> Result<i32, CliError> {
    match cmd {
        Cmd::Design(a) => execute(
            "design",
            DESIGN_KEYS,
            &a.common,
            vec![
                ("manifold", a.manifold),
                ("L", a.l),
                ("N", a.n),
                ("init", a.init),
                ("nodes", a.nodes),
                ("tol", a.tol),
                ("budget", a.budget),
            ],
            commands::exec_design,
        ),
        Cmd::Certify(a) => execute(
            "certify",
            CERTIFY_KEYS,
            &a.common,
            vec![
                ("nodes", a.nodes),
                ("manifold", a.manifold),
                ("L", a.l),
                ("tol", a.tol),
            ],
            commands::exec_certify,
        ),
        Cmd::Partition(a) => execute(
            "partition",
            PARTITION_KEYS,
            &a.common,
            vec![
                ("manifold", a.manifold),
                ("N", a.n),
                ("samples", a.samples),
                ("rule", a.rule),
            ],
            commands::exec_partition,
        ),
        Cmd::MzSurvey(a) => execute(
            "mz-survey",
            MZ_SURVEY_KEYS,
            &a.common,
            vec![
                ("manifold", a.manifold),
                ("l_grid", a.l_grid),
                ("n_grid", a.n_grid),
                ("trials", a.trials),
            ],
            commands::exec_mz_survey,
        ),
        Cmd::KernelDecay(a) => execute(
            "kernel-decay",
            KERNEL_DECAY_KEYS,
            &a.common,
            vec![
                ("manifold", a.manifold),
                ("l_grid", a.l_grid),
                ("smoothness", a.smoothness),
                ("scaled_top", a.scaled_top),
                ("cutoff", a.cutoff),
                ("ell", a.ell),
                ("em", a.em),
            ],
            commands::exec_kernel_decay,
        ),
        Cmd::Propagation(a) => execute(
            "propagation",
            PROPAGATION_KEYS,
            &a.common,
            vec![
                ("manifold", a.manifold),
                ("window", a.window),
                ("r", a.r),
                ("dist", a.dist),
            ],
            commands::exec_propagation,
        ),
        Cmd::HeatFit(a) => execute(
            "heat-fit",
            HEAT_FIT_KEYS,
            &a.common,
            vec![
                ("manifold", a.manifold),
                ("ell", a.ell),
                ("em", a.em),
                ("t_min", a.t_min),
                ("t_max", a.t_max),
                ("t_count", a.t_count),
                ("dist_min", a.dist_min),
                ("dist_max", a.dist_max),
                ("dist_count", a.dist_count),
            ],
            commands::exec_heat_fit,
        ),
        Cmd::FlowCheck(a) => execute(
            "flow-check",
            FLOW_CHECK_KEYS,
            &a.common,
            vec![
                ("manifold", a.manifold),
                ("L", a.l),
                ("N", a.n),
                ("trials", a.trials),
            ],
            commands::exec_flow_check,
        ),
        Cmd::Scaling(a) => execute(
            "scaling",
            SCALING_KEYS,
            &a.common,
            vec![
                ("manifold", a.manifold),
                ("l_grid", a.l_grid),
                ("tol", a.tol),
                ("budget", a.budget),
            ],
            commands::exec_scaling,
        ),
        Cmd::Wce(a) => execute(
            "wce",
            WCE_KEYS,
            &a.common,
            vec![
                ("nodes", a.nodes),
                ("manifold", a.manifold),
                ("alpha", a.alpha),
                ("lambda_max", a.lambda_max),
            ],
            commands::exec_wce,
        ),
    }
}

fn execute(
    name: &'static str,
    keys: &'static [KeySpec],
    common: &Common,
    mut flags: Vec<(&'static str, Option<String>)>,
    exec: fn(&mut RunConfig) -> Result<Emission, CliError>,
) -> Result<i32, CliError> {
    let file_cfg = match &common.config {
        Some(path) => Some(load_config(path)?),
        None => None,
    };
    flags.push(("out", common.out.clone()));
    flags.push(("formats", common.formats.clone()));
    flags.push(("seed", common.seed.clone()));
    let mut cfg = resolve(name, keys, file_cfg, &flags)?;
    let emission = exec(&mut cfg)?;
    finish(name, &cfg, emission)
}

struct Formats {
    csv: bool,
    json: bool,
}

fn parse_formats(spec: &str) -> Result<Formats, CliError> {
    let mut f = Formats { csv: false, json: false };
    for tok in spec.split(',') {
        match tok.trim() {
            "csv" => f.csv = true,
            "json" => f.json = true,
            other => {
                return Err(CliError::usage(format!(
                    "key `formats`: expected a comma list drawn from csv, json — got `{other}`"
                )))
            }
        }
    }
    Ok(f)
}

fn write_file(
    dir: &Path,
    name: &str,
    content: &str,
    files: &mut Vec<String>,
) -> Result<(), CliError> {
    let path = write_atomic(dir, name, content)
        .map_err(|e| CliError::failure(format!("cannot write `{name}`: {e}")))?;
    files.push(path.display().to_string());
    Ok(())
}

/// Writes the config echo and the requested formats atomically, prints the
/// one-line summary, and returns the subcommand's exit code.
fn finish(name: &str, cfg: &RunConfig, em: Emission) -> Result<i32, CliError> {
    let out_dir = PathBuf::from(cfg.get("out").unwrap_or("."));
    fs::create_dir_all(&out_dir).map_err(|e| {
        CliError::failure(format!(
            "cannot create output directory `{}`: {e}",
            out_dir.display()
        ))
    })?;
    let formats = parse_formats(cfg.str("formats")?)?;
    let stem = format!("{name}-{}", cfg.get("seed").unwrap_or("0"));
    let mut files = Vec::new();
    write_file(&out_dir, &format!("{stem}.config"), &emit_config(cfg), &mut files)?;
    if formats.json {
        write_file(&out_dir, &format!("{stem}.json"), &render_json(&em.json), &mut files)?;
    }
    if formats.csv {
        write_file(&out_dir, &format!("{stem}.csv"), &em.csv, &mut files)?;
        for (suffix, content) in &em.extra_csv {
            write_file(&out_dir, &format!("{stem}.{suffix}"), content, &mut files)?;
        }
    }
    println!("{name} {} -> {}", em.summary, files.join(" "));
    Ok(em.exit)
}
