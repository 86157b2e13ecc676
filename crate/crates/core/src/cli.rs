//! Command-line front end: config ingestion, subcommand dispatch, CSV
//! emission, and reproducible run manifests.
//!
//! Exit codes: 0 on success, 1 for invalid configuration or
//! parameters, 2 when a solver fails to converge or a verification
//! command reports FAIL.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::measure::{self, SampledWord};
use crate::oracle;
use crate::pressure;
use crate::report::{fmt_count, fmt_sig, render_csv, write_text, Manifest};
use crate::spectrum;
use crate::transfer::{self, MarkovKernel};
use crate::{Error, Result};

/// Grid half-width for pressure tabulation and verification commands.
const GRID_HALF_WIDTH: f64 = 3.0;
/// Points per axis of that grid.
const GRID_POINTS: usize = 9;
/// Step for the finite-difference cross-check of the exact gradient.
const GRADIENT_CHECK_STEP: f64 = 1e-5;
/// Largest tolerated relative gradient mismatch.
const GRADIENT_CHECK_REL_TOL: f64 = 1e-6;
/// Eigenvalue floor: convexity holds up to finite-difference noise.
const CONVEXITY_EIG_FLOOR: f64 = -1e-8;
/// Default support bisection resolution in alpha units.
const SUPPORT_RESOLUTION: f64 = 1e-4;
/// Width of the acceptance band around the expected mean, in standard
/// errors of the sample mean.
const LLN_SIGMA_BAND: f64 = 4.0;
/// Tolerated gap between the median dimension estimator and -r/q.
const LOCALDIM_TOL: f64 = 0.05;
/// Offsets from alpha_star probed by the sampling verifications.
const VERIFY_ALPHA_SHIFT: f64 = 0.05;

const TRANSFER_HEADER: &[&str] = &["s", "r", "i", "t", "log_t", "residual", "iterations"];
const PRESSURE_HEADER: &[&str] =
    &["s", "r", "P", "Pn", "dPn_ds", "dPn_dr", "hess_ss", "hess_sr", "hess_rr"];
const SPECTRUM_HEADER: &[&str] =
    &["alpha", "s", "r", "dim", "paper_dim", "converged", "newton_residual"];
const SUPPORT_HEADER: &[&str] =
    &["alpha_star", "a", "b", "r_a", "r_b", "achieved_a", "achieved_b"];
const SAMPLE_HEADER: &[&str] =
    &["sample_id", "n", "avg_phi", "expected", "log_measure", "log_length", "ratio", "predicted"];
const ORACLE_HEADER: &[&str] = &["n", "alpha", "eps", "count", "moran_dim", "mode"];

#[derive(Parser)]
#[command(
    name = "multifractal",
    version,
    about = "Level-set dimension spectra of multiple ergodic averages on linear cookie-cutter sets"
)]
pub struct Cli {
    /// Path to the JSON run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory override.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the transfer system at one (s, r) and print t with its residual.
    Transfer {
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        s: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        r: f64,
    },
    /// Tabulate pressure, gradient, and Hessian on a 9x9 grid over [-3,3]^2.
    PressureGrid,
    /// Trace the dimension spectrum over the configured alpha grid, or
    /// solve a single level with --alpha.
    Spectrum {
        #[arg(long, allow_negative_numbers = true)]
        alpha: Option<f64>,
    },
    /// Estimate the interval of alpha levels with nonempty level sets.
    Support {
        /// Bisection resolution in alpha units.
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Draw words from the Markov measure at (s, r) and tabulate their
    /// averages and cylinder statistics.
    Sample {
        #[arg(long, allow_negative_numbers = true)]
        s: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        r: Option<f64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check that sample means of the multiple average match
    /// expected_phi at three kernels.
    VerifyLln {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check the local dimension estimator against -r/q at alpha_star
    /// and two nearby levels.
    VerifyLocaldim {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check Hessian positive semidefiniteness over the standard grid.
    VerifyConvexity,
    /// Check the exact pressure gradient against central finite differences.
    VerifyGradient,
    /// Count level-set cylinders at a fixed depth and report Moran dimensions.
    Oracle {
        #[arg(long, allow_negative_numbers = true)]
        alpha: Option<f64>,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        eps: Option<f64>,
    },
}

/// Parses arguments, runs the command, and returns the process exit code.
pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// 1 for configuration and parameter problems, 2 for solver failures.
fn exit_code(e: &Error) -> i32 {
    match e {
        Error::SolverDiverged { .. } | Error::SingularSystem(_) | Error::BracketFailed(_) => 2,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<i32> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("--config PATH is required".into()))?;
    let cfg = RunConfig::load(path)?;
    // --out picks the destination without touching the config, so the
    // manifest and its hash stay identical across scratch directories.
    let out_dir = cli.out.unwrap_or_else(|| cfg.output_dir.clone());
    let ctx = Ctx { cfg, out_dir };
    match cli.command {
        Command::Transfer { s, r } => cmd_transfer(&ctx, s, r),
        Command::PressureGrid => cmd_pressure_grid(&ctx),
        Command::Spectrum { alpha } => cmd_spectrum(&ctx, alpha),
        Command::Support { eps } => cmd_support(&ctx, eps),
        Command::Sample { s, r, n, samples, seed } => cmd_sample(&ctx, s, r, n, samples, seed),
        Command::VerifyLln { n, samples, seed } => cmd_verify_lln(&ctx, n, samples, seed),
        Command::VerifyLocaldim { n, samples, seed } => {
            cmd_verify_localdim(&ctx, n, samples, seed)
        }
        Command::VerifyConvexity => cmd_verify_convexity(&ctx),
        Command::VerifyGradient => cmd_verify_gradient(&ctx),
        Command::Oracle { alpha, depth, eps } => cmd_oracle(&ctx, alpha, depth, eps),
    }
}

/// A loaded configuration plus the directory this run writes into.
struct Ctx {
    cfg: RunConfig,
    out_dir: PathBuf,
}

/// Writes `<command>.csv` and `<command>.manifest.json` into the
/// output directory and returns the CSV path.
fn emit(
    ctx: &Ctx,
    command: &str,
    seed: u64,
    parameters: Value,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<PathBuf> {
    let csv_name = format!("{command}.csv");
    let csv_path = ctx.out_dir.join(&csv_name);
    write_text(&csv_path, &render_csv(header, rows))?;
    let manifest =
        Manifest { command, seed, config: &ctx.cfg, parameters, outputs: vec![csv_name] };
    manifest.write(&ctx.out_dir)?;
    Ok(csv_path)
}

fn linspace(a: f64, b: f64, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![a];
    }
    (0..k).map(|i| a + (b - a) * i as f64 / (k - 1) as f64).collect()
}

fn grid_axis() -> Vec<f64> {
    linspace(-GRID_HALF_WIDTH, GRID_HALF_WIDTH, GRID_POINTS)
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / k;
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let k = xs.len();
    if k % 2 == 1 {
        xs[k / 2]
    } else {
        0.5 * (xs[k / 2 - 1] + xs[k / 2])
    }
}

fn cmd_transfer(ctx: &Ctx, s: f64, r: f64) -> Result<i32> {
    let cfg = &ctx.cfg;
    let sol = transfer::solve_transfer_capped(&cfg.spec, s, r, cfg.solver.tol, cfg.solver.max_iter)?;
    let rows: Vec<Vec<String>> = (0..sol.t.len())
        .map(|i| {
            vec![
                fmt_sig(s),
                fmt_sig(r),
                i.to_string(),
                fmt_sig(sol.t[i]),
                fmt_sig(sol.log_t[i]),
                fmt_sig(sol.residual),
                sol.iterations.to_string(),
            ]
        })
        .collect();
    let path = emit(
        ctx,
        "transfer",
        cfg.montecarlo.seed,
        json!({ "s": s, "r": r, "iterations": sol.iterations }),
        TRANSFER_HEADER,
        &rows,
    )?;
    let t_list: Vec<String> = sol.t.iter().map(|&v| fmt_sig(v)).collect();
    println!("t = ({})", t_list.join(", "));
    println!("residual = {}", fmt_sig(sol.residual));
    println!("wrote {}", path.display());
    Ok(0)
}

fn pressure_row(pt: &pressure::PressurePoint) -> Vec<String> {
    vec![
        fmt_sig(pt.s),
        fmt_sig(pt.r),
        fmt_sig(pt.p),
        fmt_sig(pt.pn),
        fmt_sig(pt.dpn_ds),
        fmt_sig(pt.dpn_dr),
        fmt_sig(pt.hessian[0][0]),
        fmt_sig(pt.hessian[0][1]),
        fmt_sig(pt.hessian[1][1]),
    ]
}

/// Solves every grid point in parallel, preserving row order.
fn pressure_grid_points(cfg: &RunConfig) -> Result<Vec<pressure::PressurePoint>> {
    let axis = grid_axis();
    let coords: Vec<(f64, f64)> =
        axis.iter().flat_map(|&s| axis.iter().map(move |&r| (s, r))).collect();
    coords
        .into_par_iter()
        .map(|(s, r)| pressure::pressure_point(&cfg.spec, s, r, cfg.solver.tol))
        .collect()
}

fn cmd_pressure_grid(ctx: &Ctx) -> Result<i32> {
    let cfg = &ctx.cfg;
    let points = pressure_grid_points(cfg)?;
    let rows: Vec<Vec<String>> = points.iter().map(pressure_row).collect();
    let path = emit(
        ctx,
        "pressure-grid",
        cfg.montecarlo.seed,
        json!({ "grid_points": GRID_POINTS, "half_width": GRID_HALF_WIDTH }),
        PRESSURE_HEADER,
        &rows,
    )?;
    println!("pressure-grid: {} rows", rows.len());
    println!("wrote {}", path.display());
    Ok(0)
}

fn spectrum_row(pt: &spectrum::SpectrumPoint) -> Vec<String> {
    vec![
        fmt_sig(pt.alpha),
        fmt_sig(pt.s),
        fmt_sig(pt.r),
        fmt_sig(pt.dim),
        fmt_sig(pt.paper_dim),
        pt.converged.to_string(),
        fmt_sig(pt.newton_residual),
    ]
}

fn cmd_spectrum(ctx: &Ctx, alpha: Option<f64>) -> Result<i32> {
    let cfg = &ctx.cfg;
    let points = match alpha {
        Some(a) => vec![spectrum::solve_critical(&cfg.spec, a, cfg.solver.tol)?],
        None => spectrum::spectrum_curve(
            &cfg.spec,
            cfg.spectrum.alpha_min,
            cfg.spectrum.alpha_max,
            cfg.spectrum.steps,
            cfg.solver.tol,
        )?,
    };
    let astar = spectrum::alpha_star(&cfg.spec, cfg.solver.tol)?;
    let rows: Vec<Vec<String>> = points.iter().map(spectrum_row).collect();
    let path = emit(
        ctx,
        "spectrum",
        cfg.montecarlo.seed,
        json!({ "alpha": alpha, "alpha_star": astar }),
        SPECTRUM_HEADER,
        &rows,
    )?;
    let flagged = points.iter().filter(|p| !p.converged).count();
    println!("alpha_star = {}", fmt_sig(astar));
    println!("spectrum: {} rows, {} outside the attainable range", rows.len(), flagged);
    println!("wrote {}", path.display());
    Ok(0)
}

fn cmd_support(ctx: &Ctx, eps: Option<f64>) -> Result<i32> {
    let cfg = &ctx.cfg;
    let resolution = eps.unwrap_or(SUPPORT_RESOLUTION);
    let est = spectrum::estimate_support(&cfg.spec, resolution, cfg.solver.tol)?;
    let rows = vec![vec![
        fmt_sig(est.alpha_star),
        fmt_sig(est.a),
        fmt_sig(est.b),
        fmt_sig(est.r_a),
        fmt_sig(est.r_b),
        fmt_sig(est.achieved_alphas.0),
        fmt_sig(est.achieved_alphas.1),
    ]];
    let path = emit(
        ctx,
        "support",
        cfg.montecarlo.seed,
        json!({ "resolution": resolution }),
        SUPPORT_HEADER,
        &rows,
    )?;
    println!(
        "support = [{}, {}], alpha_star = {}",
        fmt_sig(est.a),
        fmt_sig(est.b),
        fmt_sig(est.alpha_star)
    );
    println!("wrote {}", path.display());
    Ok(0)
}

/// Per-word statistics for one kernel batch.
struct KernelBatch {
    expected: f64,
    predicted: f64,
    avgs: Vec<f64>,
    ratios: Vec<f64>,
    rows: Vec<Vec<String>>,
}

/// Samples `samples` words of length `n` from the kernel at (s, r),
/// using generator streams `base..base+samples` so distinct batches
/// never share randomness.
fn sample_batch(
    cfg: &RunConfig,
    s: f64,
    r: f64,
    n: usize,
    samples: usize,
    seed: u64,
    base: u64,
    first_id: usize,
) -> Result<KernelBatch> {
    let spec = &cfg.spec;
    let sol = transfer::solve_transfer(spec, s, r, cfg.solver.tol)?;
    let kernel: MarkovKernel = transfer::transition_kernel(spec, &sol);
    let layout = measure::chain_layout(n, spec.q)?;
    let expected = measure::expected_phi(&kernel, spec, cfg.solver.tol);
    let predicted = measure::predicted_local_dimension(spec, s, r, cfg.solver.tol)?;

    let words: Vec<SampledWord> = (0..samples)
        .into_par_iter()
        .map(|i| measure::sample_word_indexed(&kernel, &layout, seed, base + i as u64))
        .collect();
    let stats: Vec<(f64, f64, f64)> = words
        .par_iter()
        .map(|w| -> Result<(f64, f64, f64)> {
            let avg = measure::multiple_average(w, spec)?;
            let log_mass = measure::cylinder_measure(&kernel, &layout, w)?;
            let log_len = measure::log_cylinder_length(spec, w)?;
            Ok((avg, log_mass, log_len))
        })
        .collect::<Result<_>>()?;

    let mut avgs = Vec::with_capacity(samples);
    let mut ratios = Vec::with_capacity(samples);
    let mut rows = Vec::with_capacity(samples);
    for (i, &(avg, log_mass, log_len)) in stats.iter().enumerate() {
        let ratio = log_mass / log_len;
        avgs.push(avg);
        ratios.push(ratio);
        rows.push(vec![
            (first_id + i).to_string(),
            n.to_string(),
            fmt_sig(avg),
            fmt_sig(expected),
            fmt_sig(log_mass),
            fmt_sig(log_len),
            fmt_sig(ratio),
            fmt_sig(predicted),
        ]);
    }
    Ok(KernelBatch { expected, predicted, avgs, ratios, rows })
}

fn cmd_sample(
    ctx: &Ctx,
    s: Option<f64>,
    r: Option<f64>,
    n: Option<usize>,
    samples: Option<usize>,
    seed: Option<u64>,
) -> Result<i32> {
    let cfg = &ctx.cfg;
    let center = spectrum::spectrum_center(&cfg.spec, cfg.solver.tol)?;
    let s = s.unwrap_or(0.0);
    let r = r.unwrap_or(center.r);
    let n = n.unwrap_or(cfg.montecarlo.n);
    let samples = samples.unwrap_or(cfg.montecarlo.samples);
    let seed = seed.unwrap_or(cfg.montecarlo.seed);

    let batch = sample_batch(cfg, s, r, n, samples, seed, 0, 0)?;
    let (mean, se) = mean_and_se(&batch.avgs);
    let path = emit(
        ctx,
        "sample",
        seed,
        json!({
            "s": s, "r": r, "n": n, "samples": samples,
            "expected_phi": batch.expected,
            "predicted_local_dimension": batch.predicted,
        }),
        SAMPLE_HEADER,
        &batch.rows,
    )?;
    println!(
        "sample: mean avg_phi = {} (se {}), expected_phi = {}",
        fmt_sig(mean),
        fmt_sig(se),
        fmt_sig(batch.expected)
    );
    println!("wrote {}", path.display());
    Ok(0)
}

/// Kernel parameters probed by the sampling verifications: the
/// dimension-maximizing measure, plus critical kernels at alpha_star
/// +- a shift when the average is not degenerate.
fn verification_levels(cfg: &RunConfig) -> Result<Vec<(f64, f64, f64)>> {
    let spec = &cfg.spec;
    let center = spectrum::spectrum_center(spec, cfg.solver.tol)?;
    let mut out = vec![(center.alpha, 0.0, center.r)];
    let shift = VERIFY_ALPHA_SHIFT.min((spec.phi_max() - spec.phi_min()) / 8.0);
    if shift > 0.0 {
        let mut solver = spectrum::CriticalSolver::new(spec, cfg.solver.tol)?;
        for alpha in [center.alpha - shift, center.alpha + shift] {
            let pt = solver.solve(alpha)?;
            if !pt.converged {
                return Err(Error::SolverDiverged {
                    s: pt.s,
                    r: pt.r,
                    detail: format!("critical point at alpha = {alpha} did not converge"),
                });
            }
            out.push((alpha, pt.s, pt.r));
            solver.reset();
        }
    }
    Ok(out)
}

fn cmd_verify_lln(
    ctx: &Ctx,
    n: Option<usize>,
    samples: Option<usize>,
    seed: Option<u64>,
) -> Result<i32> {
    let cfg = &ctx.cfg;
    let n = n.unwrap_or(cfg.montecarlo.n);
    let samples = samples.unwrap_or(cfg.montecarlo.samples);
    let seed = seed.unwrap_or(cfg.montecarlo.seed);
    if samples < 2 {
        return Err(Error::InvalidParameter("verify-lln needs at least 2 samples".into()));
    }

    let levels = verification_levels(cfg)?;
    let mut rows = Vec::new();
    let mut verdicts = Vec::new();
    let mut all_pass = true;
    for (k, &(alpha, s, r)) in levels.iter().enumerate() {
        let batch =
            sample_batch(cfg, s, r, n, samples, seed, (k * samples) as u64, k * samples)?;
        let (mean, se) = mean_and_se(&batch.avgs);
        let band = LLN_SIGMA_BAND * se;
        let pass = (mean - batch.expected).abs() <= band;
        all_pass &= pass;
        println!(
            "verify-lln at (s,r)=({}, {}): mean = {}, expected = {}, band = {}: {}",
            fmt_sig(s),
            fmt_sig(r),
            fmt_sig(mean),
            fmt_sig(batch.expected),
            fmt_sig(band),
            if pass { "PASS" } else { "FAIL" }
        );
        verdicts.push(json!({
            "alpha": alpha, "s": s, "r": r,
            "mean": mean, "expected": batch.expected, "band": band, "pass": pass,
        }));
        rows.extend(batch.rows);
    }
    emit(
        ctx,
        "verify-lln",
        seed,
        json!({ "n": n, "samples": samples, "levels": verdicts, "pass": all_pass }),
        SAMPLE_HEADER,
        &rows,
    )?;
    println!("verify-lln: {}", if all_pass { "PASS" } else { "FAIL" });
    Ok(if all_pass { 0 } else { 2 })
}

fn cmd_verify_localdim(
    ctx: &Ctx,
    n: Option<usize>,
    samples: Option<usize>,
    seed: Option<u64>,
) -> Result<i32> {
    let cfg = &ctx.cfg;
    let n = n.unwrap_or(cfg.montecarlo.n);
    let samples = samples.unwrap_or(cfg.montecarlo.samples);
    let seed = seed.unwrap_or(cfg.montecarlo.seed);

    let levels = verification_levels(cfg)?;
    let mut rows = Vec::new();
    let mut verdicts = Vec::new();
    let mut all_pass = true;
    for (k, &(alpha, s, r)) in levels.iter().enumerate() {
        let mut batch =
            sample_batch(cfg, s, r, n, samples, seed, (k * samples) as u64, k * samples)?;
        let target = -r / cfg.spec.q as f64;
        let med = median(&mut batch.ratios);
        let pass = (med - target).abs() <= LOCALDIM_TOL;
        all_pass &= pass;
        println!(
            "verify-localdim at alpha = {}: median = {}, -r/q = {}: {}",
            fmt_sig(alpha),
            fmt_sig(med),
            fmt_sig(target),
            if pass { "PASS" } else { "FAIL" }
        );
        verdicts.push(json!({
            "alpha": alpha, "s": s, "r": r,
            "median": med, "target": target, "pass": pass,
        }));
        rows.extend(batch.rows);
    }
    emit(
        ctx,
        "verify-localdim",
        seed,
        json!({ "n": n, "samples": samples, "levels": verdicts, "pass": all_pass }),
        SAMPLE_HEADER,
        &rows,
    )?;
    println!("verify-localdim: {}", if all_pass { "PASS" } else { "FAIL" });
    Ok(if all_pass { 0 } else { 2 })
}

fn cmd_verify_convexity(ctx: &Ctx) -> Result<i32> {
    let cfg = &ctx.cfg;
    let points = pressure_grid_points(cfg)?;
    let rows: Vec<Vec<String>> = points.iter().map(pressure_row).collect();
    let min_eig = points.iter().map(|p| p.min_eigenvalue()).fold(f64::INFINITY, f64::min);
    let pass = min_eig >= CONVEXITY_EIG_FLOOR;
    emit(
        ctx,
        "verify-convexity",
        cfg.montecarlo.seed,
        json!({ "min_eigenvalue": min_eig, "floor": CONVEXITY_EIG_FLOOR, "pass": pass }),
        PRESSURE_HEADER,
        &rows,
    )?;
    println!(
        "verify-convexity: min Hessian eigenvalue = {} (floor {}): {}",
        fmt_sig(min_eig),
        fmt_sig(CONVEXITY_EIG_FLOOR),
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(if pass { 0 } else { 2 })
}

fn cmd_verify_gradient(ctx: &Ctx) -> Result<i32> {
    let cfg = &ctx.cfg;
    let points = pressure_grid_points(cfg)?;
    let rows: Vec<Vec<String>> = points.iter().map(pressure_row).collect();

    let h = GRADIENT_CHECK_STEP;
    let pn_at = |s: f64, r: f64| -> Result<f64> {
        let sol = transfer::solve_transfer(&cfg.spec, s, r, cfg.solver.tol)?;
        Ok(pressure::pressure(&cfg.spec, &sol).1)
    };
    let rel_errs: Vec<f64> = points
        .par_iter()
        .map(|pt| -> Result<f64> {
            let fd_s = (pn_at(pt.s + h, pt.r)? - pn_at(pt.s - h, pt.r)?) / (2.0 * h);
            let fd_r = (pn_at(pt.s, pt.r + h)? - pn_at(pt.s, pt.r - h)?) / (2.0 * h);
            let rel_s = (pt.dpn_ds - fd_s).abs() / fd_s.abs().max(1e-12);
            let rel_r = (pt.dpn_dr - fd_r).abs() / fd_r.abs().max(1e-12);
            Ok(rel_s.max(rel_r))
        })
        .collect::<Result<_>>()?;
    let worst = rel_errs.iter().copied().fold(0.0, f64::max);
    let pass = worst <= GRADIENT_CHECK_REL_TOL;
    emit(
        ctx,
        "verify-gradient",
        cfg.montecarlo.seed,
        json!({
            "fd_step": h,
            "max_relative_error": worst,
            "tolerance": GRADIENT_CHECK_REL_TOL,
            "pass": pass,
        }),
        PRESSURE_HEADER,
        &rows,
    )?;
    println!(
        "verify-gradient: max relative error = {} (tolerance {}): {}",
        fmt_sig(worst),
        fmt_sig(GRADIENT_CHECK_REL_TOL),
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(if pass { 0 } else { 2 })
}

fn cmd_oracle(
    ctx: &Ctx,
    alpha: Option<f64>,
    depth: Option<usize>,
    eps: Option<f64>,
) -> Result<i32> {
    let cfg = &ctx.cfg;
    let depth = depth.unwrap_or(cfg.oracle.depth);
    let eps = eps.unwrap_or(cfg.oracle.eps);
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps = {eps} must be positive")));
    }
    let mode = cfg.oracle.mode;
    let table = oracle::count_table(&cfg.spec, depth, mode)?;
    let alphas = match alpha {
        Some(a) => vec![a],
        None => linspace(cfg.spectrum.alpha_min, cfg.spectrum.alpha_max, cfg.spectrum.steps),
    };
    let mut rows = Vec::with_capacity(alphas.len());
    for &a in &alphas {
        let level = oracle::level_set_from_table(&table, a, eps, mode)?;
        rows.push(vec![
            level.n.to_string(),
            fmt_sig(a),
            fmt_sig(eps),
            fmt_count(level.count_ln, level.count_exact),
            fmt_sig(level.moran_dim),
            level.mode.to_string(),
        ]);
    }
    let path = emit(
        ctx,
        "oracle",
        cfg.montecarlo.seed,
        json!({ "alpha": alpha, "depth": depth, "eps": eps, "mode": mode.to_string() }),
        ORACLE_HEADER,
        &rows,
    )?;
    println!("oracle: depth {} in {} mode, {} levels", depth, mode, rows.len());
    println!("wrote {}", path.display());
    Ok(0)
}
