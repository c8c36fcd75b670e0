//! Experiment front end: load a config, run one stage, persist every
//! artifact with a content digest, and report pass/fail through the exit
//! status. All state flows through the config file and the `--seed`,
//! `--out`, and `--jobs` overrides; nothing is read from the environment.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use lpmanifold::coeffs::{self, Coefficients, SaturatingCoefficients};
use lpmanifold::config::ExperimentConfig;
use lpmanifold::integral::{beta_increment, k1, k2};
use lpmanifold::lp::{self, RadiusBudget};
use lpmanifold::mild::{self, ContractionBudget};
use lpmanifold::noise;
use lpmanifold::quad::beta_kernel_quadrature;
use lpmanifold::report::{matrix_csv, write_artifact, RunManifest};
use lpmanifold::seeds::{self, roles};
use lpmanifold::{accept, Error, Result};

#[derive(Parser)]
#[command(
    name = "lpmanifold",
    version,
    about = "Pathwise stable-manifold laboratory for spectral SPDE truncations \
             driven by fractional Brownian motion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (TOML); omitted means the built-in defaults
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the root seed from the config
    #[arg(long, global = true, value_name = "S")]
    seed: Option<u64>,

    /// Override the output directory from the config
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads (default: all cores)
    #[arg(long, global = true, value_name = "J")]
    jobs: Option<usize>,

    /// Also write intermediate dumps (increments, per-block solver reports)
    #[arg(long, global = true)]
    debug_dumps: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the driving noise and report its Hölder seminorms
    SimulateNoise,
    /// Integrate forward trajectories from the configured datum grid
    Solve,
    /// Construct the stable-manifold graph map and export it
    Manifold,
    /// Run the stable-manifold verification battery over the datum grid
    Verify,
    /// Replay the constants and inequality audits behind the contraction
    Audit,
    /// Run the full acceptance suite and write the run manifest
    Accept,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

struct Ctx {
    cfg: ExperimentConfig,
    out_dir: PathBuf,
    debug_dumps: bool,
    manifest: RunManifest,
}

impl Ctx {
    fn wants(&self, format: &str) -> bool {
        self.cfg.output.formats.iter().any(|f| f == format)
    }
}

fn flag(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn pretty(value: &serde_json::Value) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Parse(format!("json: {e}")))
}

fn run(cli: Cli) -> Result<bool> {
    let start = Instant::now();
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.noise.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::Config(format!("--jobs: {e}")))?;
    }
    let out_dir = cli
        .out
        .unwrap_or_else(|| PathBuf::from(&cfg.output.directory));
    fs::create_dir_all(&out_dir)?;

    let manifest = RunManifest::new(cfg.digest()?, cfg.noise.seed);
    let mut ctx = Ctx {
        cfg,
        out_dir,
        debug_dumps: cli.debug_dumps,
        manifest,
    };

    // the resolved config is itself an artifact of every run
    let resolved = ctx.cfg.to_toml_string()?;
    let cfg_rec = write_artifact(&ctx.out_dir, "config.toml", resolved.as_bytes())?;
    ctx.manifest.push_stage(
        "configure",
        format!("resolved config, root seed {}", ctx.cfg.noise.seed),
        vec![cfg_rec],
    );

    let ok = match cli.command {
        Command::SimulateNoise => cmd_simulate_noise(&mut ctx)?,
        Command::Solve => cmd_solve(&mut ctx)?,
        Command::Manifold => cmd_manifold(&mut ctx)?,
        Command::Verify => cmd_verify(&mut ctx)?,
        Command::Audit => cmd_audit(&mut ctx)?,
        Command::Accept => cmd_accept(&mut ctx)?,
    };

    ctx.manifest.wall_clock_secs = start.elapsed().as_secs_f64();
    let path = ctx.out_dir.join("manifest.json");
    ctx.manifest.write_json_file(&path)?;
    println!("manifest {} -> {}", ctx.manifest.digest()?, path.display());
    Ok(ok)
}

fn cmd_simulate_noise(ctx: &mut Ctx) -> Result<bool> {
    let cfg = &ctx.cfg;
    let model = cfg.model()?;
    let omega = cfg.sample_noise()?;
    let bp = cfg.noise.beta_prime;

    let seminorm = omega.holder_seminorm(bp);
    let temper = noise::temperedness_diagnostic(&omega, bp)?;
    let gauss = noise::gaussianity_diagnostic(&omega, cfg.noise.hurst, model.covariance(), 0.01)?;

    let mut outputs = Vec::new();
    if ctx.wants("csv") {
        let mut buf = Vec::new();
        omega.to_csv(&mut buf)?;
        outputs.push(write_artifact(&ctx.out_dir, "noise.csv", &buf)?);
    }
    if ctx.wants("json") {
        let doc = serde_json::json!({
            "hurst": cfg.noise.hurst,
            "n_modes": omega.n_modes(),
            "units": omega.units(),
            "n_per_unit": omega.n_per_unit(),
            "holder_seminorm": seminorm,
            "temperedness": temper,
            "gaussianity": gauss,
        });
        outputs.push(write_artifact(
            &ctx.out_dir,
            "noise_report.json",
            pretty(&doc)?.as_bytes(),
        )?);
    }
    if ctx.debug_dumps {
        let csv = matrix_csv(omega.increments().view(), omega.h(), "dw");
        outputs.push(write_artifact(&ctx.out_dir, "increments.csv", csv.as_bytes())?);
    }

    let summary = format!(
        "{} modes x {} units at n = {}: Hoelder({bp}) seminorm {:.4} ({:?}), \
         temperedness slope {:+.4}, KS statistic {:.4} (threshold {:.4})",
        omega.n_modes(),
        omega.units(),
        omega.n_per_unit(),
        seminorm.value,
        seminorm.mode,
        temper.log_slope,
        gauss.statistic,
        gauss.threshold
    );
    println!("simulate-noise: {summary}");
    ctx.manifest.push_stage("simulate-noise", summary, outputs);
    Ok(true)
}

fn cmd_solve(ctx: &mut Ctx) -> Result<bool> {
    let cfg = &ctx.cfg;
    let model = cfg.model()?;
    let coeffs = cfg.coefficients(&model)?;
    let omega = cfg.sample_noise()?;
    let grid = cfg.xi_grid(&model);
    let params = cfg.mild_params();
    let m_blocks = cfg.noise.m_blocks;

    let solved: Vec<(mild::StatePath, Vec<mild::PicardReport>)> = grid
        .par_iter()
        .map(|xi| mild::solve_forward(&model, &coeffs, &omega, xi.view(), m_blocks, &params))
        .collect::<Result<_>>()?;

    let mut outputs = Vec::new();
    let mut worst_factor = 0.0f64;
    let mut total_iters = 0usize;
    for (p, (path, reports)) in solved.iter().enumerate() {
        for r in reports {
            worst_factor = worst_factor.max(r.observed_factor);
            total_iters += r.iterations;
        }
        if ctx.wants("csv") {
            let csv = matrix_csv(path.values.view(), path.h(), "u");
            outputs.push(write_artifact(
                &ctx.out_dir,
                &format!("trajectory_{p:02}.csv"),
                csv.as_bytes(),
            )?);
        }
    }
    if ctx.debug_dumps {
        let reports: Vec<&Vec<mild::PicardReport>> = solved.iter().map(|(_, r)| r).collect();
        let doc = serde_json::json!({ "picard": reports });
        outputs.push(write_artifact(
            &ctx.out_dir,
            "picard_reports.json",
            pretty(&doc)?.as_bytes(),
        )?);
    }

    let summary = format!(
        "{} trajectories over {m_blocks} blocks; worst Picard factor {:.2e}, \
         {total_iters} iterations total",
        solved.len(),
        worst_factor
    );
    println!("solve: {summary}");
    ctx.manifest.push_stage("solve", summary, outputs);
    Ok(true)
}

fn cmd_manifold(ctx: &mut Ctx) -> Result<bool> {
    let cfg = &ctx.cfg;
    let model = cfg.model()?;
    let coeffs = cfg.coefficients(&model)?;
    let omega = cfg.sample_noise()?;

    let graph = lp::sample_graph(
        &model,
        &coeffs,
        &omega,
        cfg.noise.m_blocks,
        &cfg.lp_params()?,
        cfg.verify.radius,
        cfg.verify.n_xi,
        cfg.noise.seed,
    )?;
    let decay_count = graph.points.iter().filter(|p| p.decay_ok).count();
    let cert = graph.max_lipschitz <= graph.lipschitz_bound && decay_count == graph.points.len();

    let mut outputs = Vec::new();
    if ctx.wants("csv") {
        outputs.push(write_artifact(
            &ctx.out_dir,
            "graph.csv",
            graph.to_csv().as_bytes(),
        )?);
    }
    if ctx.wants("json") {
        let doc = serde_json::to_value(&graph)
            .map_err(|e| Error::Parse(format!("graph serialize: {e}")))?;
        outputs.push(write_artifact(
            &ctx.out_dir,
            "manifold_report.json",
            pretty(&doc)?.as_bytes(),
        )?);
    }

    let summary = format!(
        "{} graph points in radius {}: Lipschitz {:.3} (bound {:.3}), \
         decay envelope {decay_count}/{}",
        graph.points.len(),
        graph.radius,
        graph.max_lipschitz,
        graph.lipschitz_bound,
        graph.points.len()
    );
    println!("manifold: {summary} {}", flag(cert));
    ctx.manifest.push_stage("manifold", summary, outputs);
    Ok(cert)
}

fn cmd_verify(ctx: &mut Ctx) -> Result<bool> {
    let cfg = &ctx.cfg;
    let model = cfg.model()?;
    let coeffs = cfg.coefficients(&model)?;
    let omega = cfg.sample_noise()?;
    let grid = cfg.xi_grid(&model);

    let report = lp::verify_stable_manifold(&model, &coeffs, &omega, &grid, &cfg.verify_params()?)?;
    for (p, v) in report.per_xi.iter().enumerate() {
        let inv_ok = v
            .invariance_residuals
            .iter()
            .zip(&v.invariance_thresholds)
            .filter(|(r, t)| r <= t)
            .count();
        println!(
            "  xi {p:02}: |xi| = {:.4}, decay {:+.3} (need <= {:+.3}) {}, \
             invariance {inv_ok}/{}, control {}",
            v.xi_norm,
            v.decay_rate,
            v.decay_threshold,
            flag(v.decay_pass),
            v.invariance_residuals.len(),
            flag(v.control_pass)
        );
    }

    let mut outputs = Vec::new();
    if ctx.wants("json") {
        let doc = serde_json::to_value(&report)
            .map_err(|e| Error::Parse(format!("report serialize: {e}")))?;
        outputs.push(write_artifact(
            &ctx.out_dir,
            "verify_report.json",
            pretty(&doc)?.as_bytes(),
        )?);
    }

    let passed = report.per_xi.iter().filter(|v| v.pass()).count();
    let summary = format!(
        "{passed}/{} data pass decay, invariance, and control at kappa = {}",
        report.per_xi.len(),
        report.kappa
    );
    println!("verify: {summary} {}", flag(report.all_pass));
    ctx.manifest.push_stage("verify", summary, outputs);
    Ok(report.all_pass)
}

struct AuditRow {
    name: &'static str,
    pass: bool,
    details: String,
}

fn push_row(rows: &mut Vec<AuditRow>, name: &'static str, pass: bool, details: String) {
    println!("audit {name:<18} {} {details}", flag(pass));
    rows.push(AuditRow { name, pass, details });
}

fn cmd_audit(ctx: &mut Ctx) -> Result<bool> {
    let cfg = &ctx.cfg;
    let model = cfg.model()?;
    let coeffs = cfg.coefficients(&model)?;
    let omega = cfg.sample_noise()?;
    let seed = cfg.noise.seed;
    let beta = cfg.noise.beta;
    let bp = cfg.noise.beta_prime;
    let alpha = cfg.noise.alpha;
    let ap = cfg.alpha_prime();
    let mut rows = Vec::new();

    // dichotomy smoothing constants over a log-spaced time grid
    let t_grid: Vec<f64> = (0..=400)
        .map(|k| 1e-4 * 1e5f64.powf(k as f64 / 400.0))
        .collect();
    let s0 = model.smoothing_constant_audit(0.0, &t_grid);
    let sb = model.smoothing_constant_audit(beta, &t_grid);
    push_row(
        &mut rows,
        "smoothing",
        s0.passes() && sb.passes(),
        format!(
            "sup at sigma = 0: {:.4}, at sigma = {beta}: {:.4} (c_s = {})",
            s0.sup_power.max(s0.sup_difference),
            sb.sup_power.max(sb.sup_difference),
            model.c_s()
        ),
    );

    let mut rng = seeds::stream_rng(seed, seeds::stream(roles::AUDIT, 0));
    let diff = model.difference_bound_audit(4000, &mut rng);
    push_row(
        &mut rows,
        "difference bounds",
        diff.passes(),
        format!(
            "single {:.4}, double {:.4} (c_s = {})",
            diff.sup_single,
            diff.sup_double,
            model.c_s()
        ),
    );

    let gap = cfg.gap()?;
    let gap_values: Vec<f64> = [0.0, gap.gamma0, 2.0 * gap.gamma0]
        .iter()
        .map(|&g| gap.value(g))
        .collect();
    push_row(
        &mut rows,
        "spectral gap",
        gap.holds(),
        format!(
            "K = {:.3}, values {:.3}/{:.3}/{:.3} <= 0.5 at gamma = 0/{}/{}",
            gap.k_const, gap_values[0], gap_values[1], gap_values[2], gap.gamma0,
            2.0 * gap.gamma0
        ),
    );

    // closed-form Beta increment against the graded product quadrature at
    // the configured Weyl exponents
    let closed = beta_increment(-alpha, ap - 1.0, 0.25, 1.25);
    let quad = beta_kernel_quadrature(ap - 1.0, -alpha, 0.25, 1.25, 512, 2.0, |_| 1.0);
    let rel = (quad - closed).abs() / closed.abs();
    push_row(
        &mut rows,
        "beta quadrature",
        rel <= 1e-6,
        format!("relative error {rel:.2e} at exponents ({:.2}, {:.2})", -alpha, ap - 1.0),
    );

    let budget = ContractionBudget {
        c_s: model.c_s(),
        lip_f: coeffs.drift_lipschitz(f64::INFINITY),
        lip_g: coeffs.diffusion_lipschitz(f64::INFINITY),
        c_ab: 2.0,
        omega_norm: omega.block_seminorm(0, bp)?,
        path_radius: cfg.verify.radius,
        alpha,
        alpha_prime: ap,
        horizon: 1.0,
    };
    let (rho1, q1) = mild::choose_rho(&budget, 0.5)?;
    push_row(
        &mut rows,
        "picard budget",
        q1 <= 0.5,
        format!("factor {q1:.3} at rho = {rho1:.2}"),
    );

    let k1_0 = k1(0.0, -alpha, ap, 1.0);
    let k1_r = k1(rho1, -alpha, ap, 1.0);
    let k2_0 = k2(0.0, 1.0);
    let k2_r = k2(rho1, 1.0);
    let kernels_ok = k1_r <= k1_0
        && k2_r <= k2_0
        && (k2_0 - 1.0).abs() <= 1e-12
        && k1_0.is_finite()
        && k1_0 > 0.0;
    push_row(
        &mut rows,
        "weighted kernels",
        kernels_ok,
        format!("K1 {k1_0:.4} -> {k1_r:.4}, K2 {k2_0:.4} -> {k2_r:.4} as rho 0 -> {rho1:.2}"),
    );

    let mut rng = seeds::stream_rng(seed, seeds::stream(roles::AUDIT, 1));
    let la = coeffs::lipschitz_audit(
        &coeffs,
        model.lambda(),
        beta,
        cfg.verify.radius,
        800,
        &mut rng,
    );
    push_row(
        &mut rows,
        "lipschitz bounds",
        la.passes(),
        format!(
            "drift {:.4} <= {:.4}, diffusion {:.4} <= {:.4}",
            la.measured_drift, la.bound_drift, la.measured_diffusion, la.bound_diffusion
        ),
    );

    let radius_budget = RadiusBudget {
        k_scale: gap.k_const,
        c_s: model.c_s(),
        c_f: coeffs.drift_lipschitz(f64::INFINITY),
        c_ab: 2.0,
        c_g: coeffs.diffusion_lipschitz(f64::INFINITY),
        l_gamma: 2.0 * model.c_s(),
    };
    let radii = lp::tempered_radii(&omega, bp, gap.kappa, cfg.noise.m_blocks, &radius_budget)?;
    let radii_ok = radii.rho_bar > 0.0 && radii.r_hat.iter().all(|&r| r > 0.0);
    push_row(
        &mut rows,
        "tempered radii",
        radii_ok,
        format!(
            "rho_hat {:.4}, rho_bar {:.4} over {} shifts",
            radii.rho_hat,
            radii.rho_bar,
            radii.r_hat.len()
        ),
    );

    let rank = cfg.coefficients.rank.unwrap_or(model.n_modes());
    let unit = SaturatingCoefficients::new(model.lambda(), beta, 1.0, 1.0, rank)?;
    let block_norms: Vec<f64> = (0..omega.units())
        .map(|i| omega.block_seminorm(i, bp))
        .collect::<Result<_>>()?;
    let scaling = coeffs::auto_scale_amplitudes(
        cfg.coefficients.eps_f,
        cfg.coefficients.eps_g,
        unit.drift_lipschitz(f64::INFINITY),
        unit.diffusion_lipschitz(f64::INFINITY),
        gap.k_const,
        model.c_s(),
        2.0,
        &block_norms,
        cfg.verify.radius,
        40,
    );
    match &scaling {
        Ok(s) => push_row(
            &mut rows,
            "amplitude scaling",
            true,
            format!(
                "eps = ({:.4}, {:.4}) after {} halvings, min radius {:.4}",
                s.eps_f, s.eps_g, s.halvings, s.min_radius
            ),
        ),
        Err(e) => push_row(&mut rows, "amplitude scaling", false, format!("{e}")),
    }

    let all = rows.iter().all(|r| r.pass);
    let mut outputs = Vec::new();
    if ctx.wants("json") {
        let doc = serde_json::json!({
            "smoothing": { "sigma_0": s0, "sigma_beta": sb },
            "difference_bounds": diff,
            "gap": { "params": gap, "values": gap_values, "holds": gap.holds() },
            "beta_quadrature": { "closed": closed, "quadrature": quad, "rel_err": rel },
            "picard_budget": { "budget": budget, "rho": rho1, "factor": q1 },
            "kernels": { "k1_at_0": k1_0, "k1_at_rho": k1_r, "k2_at_0": k2_0, "k2_at_rho": k2_r },
            "lipschitz": la,
            "tempered_radii": radii,
            "amplitude_scaling": scaling.ok(),
            "rows": rows
                .iter()
                .map(|r| serde_json::json!({ "name": r.name, "pass": r.pass, "details": r.details }))
                .collect::<Vec<_>>(),
        });
        outputs.push(write_artifact(
            &ctx.out_dir,
            "audit.json",
            pretty(&doc)?.as_bytes(),
        )?);
    }

    let passed = rows.iter().filter(|r| r.pass).count();
    let summary = format!("{passed}/{} audits pass", rows.len());
    println!("audit: {summary} {}", flag(all));
    ctx.manifest.push_stage("audit", summary, outputs);
    Ok(all)
}

fn cmd_accept(ctx: &mut Ctx) -> Result<bool> {
    let outcomes = accept::run_all(ctx.cfg.noise.seed);
    for o in &outcomes {
        println!("{}", o.line());
    }
    let passed = outcomes.iter().filter(|o| !o.failed()).count();
    let summary = format!("{passed}/{} criteria pass", outcomes.len());
    println!("accept: {summary}");

    let mut outputs = Vec::new();
    if ctx.wants("json") {
        let doc = serde_json::to_value(&outcomes)
            .map_err(|e| Error::Parse(format!("outcomes serialize: {e}")))?;
        outputs.push(write_artifact(
            &ctx.out_dir,
            "acceptance.json",
            pretty(&doc)?.as_bytes(),
        )?);
    }
    ctx.manifest.acceptance = outcomes;
    ctx.manifest.push_stage("accept", summary, outputs);
    Ok(ctx.manifest.all_pass())
}
