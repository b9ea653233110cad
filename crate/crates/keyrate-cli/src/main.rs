//! Batch front end for the key-rate solver: solve single instances, sweep
//! parameter grids, dump per-iteration traces.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use keyrate_core::fr::{build_reduced_model, ProblemInstance};
use keyrate_core::instance_io::load_instance;
use keyrate_core::protocols::ProtocolParams;
use keyrate_core::solver::{solve, SolveResult, SolverConfig, TerminationReason};

/// Exit codes are a stable contract for harnesses.
const EXIT_GAP_MET: u8 = 0;
const EXIT_MAX_ITERS: u8 = 2;
const EXIT_INSTANCE_ERROR: u8 = 3;
const EXIT_NUMERICAL_FAILURE: u8 = 4;

#[derive(Parser)]
#[command(name = "keyrate", about = "QKD key-rate SDP solver", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a single instance and print a report.
    Solve(SolveArgs),
    /// Solve a grid of protocol parameters and print a table.
    Sweep(SweepArgs),
    /// Solve an instance and emit the per-iteration trace.
    Trace(SolveArgs),
}

#[derive(Args, Clone)]
struct SolveArgs {
    /// Built-in protocol: ebBB84, pmBB84, mdiBB84, TFQKD.
    #[arg(long, conflicts_with = "file")]
    protocol: Option<String>,
    /// Comma-separated protocol parameters, e.g. 0.5,0.05.
    #[arg(long, requires = "protocol", allow_hyphen_values = true)]
    params: Option<String>,
    /// Instance file path (see data/instances for the format).
    #[arg(long)]
    file: Option<PathBuf>,
    /// Stop once relstopgap falls below this tolerance.
    #[arg(long, default_value_t = 1e-12)]
    epsilon: f64,
    #[arg(long, default_value_t = 80)]
    max_iters: usize,
    /// Barrier reduction factor in (0,1).
    #[arg(long, default_value_t = 0.5)]
    eta: f64,
    /// Relative rank tolerance for the facial-reduction pipeline.
    #[arg(long, default_value_t = 1e-10)]
    rank_tol: f64,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Error-correction leakage to subtract from the reported key rate.
    #[arg(long)]
    leakage: Option<f64>,
    /// Write the per-iteration trace as line-delimited JSON.
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    protocol: String,
    /// Parameter grid: positions separated by commas, alternatives by '|',
    /// e.g. "0.5|0.7|0.9,0.01|0.03". Rows run leftmost-slowest. An empty
    /// grid yields a header-only table.
    #[arg(long, default_value = "", allow_hyphen_values = true)]
    grid: String,
    #[arg(long, default_value_t = 1e-12)]
    epsilon: f64,
    #[arg(long, default_value_t = 80)]
    max_iters: usize,
    #[arg(long, default_value_t = 0.5)]
    eta: f64,
    #[arg(long, default_value_t = 1e-10)]
    rank_tol: f64,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Parallel rows (output order stays the input order).
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    leakage: Option<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Csv,
    Json,
}

fn parse_params(protocol: &str, params: &str) -> Result<ProtocolParams> {
    let vals: Vec<f64> = if params.trim().is_empty() {
        vec![]
    } else {
        params
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| anyhow!("bad parameter '{t}': {e}")))
            .collect::<Result<_>>()?
    };
    let need = |k: usize| -> Result<()> {
        if vals.len() == k {
            Ok(())
        } else {
            bail!("{protocol} takes {k} parameters, got {}", vals.len())
        }
    };
    let p = match protocol.to_ascii_lowercase().as_str() {
        "ebbb84" => {
            need(2)?;
            ProtocolParams::EbBB84 { p_z: vals[0], q: vals[1] }
        }
        "pmbb84" => {
            need(2)?;
            ProtocolParams::PmBB84 { p_z: vals[0], q: vals[1] }
        }
        "mdibb84" => {
            need(2)?;
            ProtocolParams::MdiBB84 { p_z: vals[0], p: vals[1] }
        }
        "tfqkd" => {
            need(3)?;
            ProtocolParams::Tfqkd { q: vals[0], l_km: vals[1], p_x: vals[2] }
        }
        other => bail!("unknown protocol '{other}' (ebBB84, pmBB84, mdiBB84, TFQKD)"),
    };
    Ok(p)
}

struct RunOutcome {
    protocol: String,
    parameter: String,
    size: (usize, usize),
    reduced: (usize, usize),
    result: SolveResult,
    seconds: f64,
}

fn run_instance(instance: &ProblemInstance, cfg: &SolverConfig) -> Result<RunOutcome> {
    let t0 = Instant::now();
    let model = build_reduced_model(instance, cfg.rank_tol)?;
    let result = solve(&model, cfg)?;
    let seconds = t0.elapsed().as_secs_f64();
    let (protocol, parameter) = split_label(&instance.label);
    Ok(RunOutcome {
        protocol,
        parameter,
        size: (instance.n, instance.k()),
        reduced: (model.n_rho, model.m_v()),
        result,
        seconds,
    })
}

/// "ebBB84(0.50,0.05)" → ("ebBB84", "(0.50,0.05)"); flat labels pass through.
fn split_label(label: &str) -> (String, String) {
    match label.find('(') {
        Some(i) => (label[..i].to_string(), label[i..].to_string()),
        None => (label.to_string(), String::new()),
    }
}

fn config_from(epsilon: f64, max_iters: usize, eta: f64, rank_tol: f64) -> SolverConfig {
    SolverConfig { epsilon, max_iters, eta, rank_tol, ..SolverConfig::default() }
}

fn exit_code_for(result: &SolveResult) -> u8 {
    match result.termination {
        TerminationReason::GapMet => EXIT_GAP_MET,
        TerminationReason::MaxIters => EXIT_MAX_ITERS,
        TerminationReason::NumericalFailure => EXIT_NUMERICAL_FAILURE,
    }
}

fn print_solve_report(out: &RunOutcome, format: Format, leakage: Option<f64>) {
    let r = &out.result;
    let gap = r.rel_gap();
    match format {
        Format::Table => {
            println!("protocol            {}", out.protocol);
            println!("parameter           {}", out.parameter);
            println!("size (n,k)          ({},{})", out.size.0, out.size.1);
            println!("reduced (n_rho,m_V) ({},{})", out.reduced.0, out.reduced.1);
            println!("gap                 {gap:.3e}");
            println!("time                {:.2}", out.seconds);
            println!("bestub              {:.12e}", r.best_upper);
            println!("bestlb              {:.12e}", r.best_lower);
            println!("lower_valid         {}", r.lower_valid);
            println!("termination         {}", r.termination);
            println!("iterations          {}", r.iterations);
            if let Some(leak) = leakage {
                if r.lower_valid {
                    println!("key rate (lb - leakage) {:.12e}", r.best_lower - leak);
                }
            }
        }
        Format::Csv => {
            println!(
                "protocol,parameter,size,reduced,gap,time,bestub,bestlb,lower_valid,termination"
            );
            println!(
                "{},\"{}\",\"({},{})\",\"({},{})\",{:.3e},{:.2},{:.12e},{:.12e},{},{}",
                out.protocol,
                out.parameter,
                out.size.0,
                out.size.1,
                out.reduced.0,
                out.reduced.1,
                gap,
                out.seconds,
                r.best_upper,
                r.best_lower,
                r.lower_valid,
                r.termination
            );
        }
        Format::Json => {
            let mut doc = serde_json::json!({
                "protocol": out.protocol,
                "parameter": out.parameter,
                "size": [out.size.0, out.size.1],
                "reduced_size": [out.reduced.0, out.reduced.1],
                "gap": gap,
                "time": out.seconds,
                "bestub": r.best_upper,
                "bestlb": r.best_lower,
                "lower_valid": r.lower_valid,
                "termination": r.termination,
                "iterations": r.iterations,
            });
            if let Some(leak) = leakage {
                if r.lower_valid {
                    doc["key_rate"] = serde_json::json!(r.best_lower - leak);
                }
            }
            println!("{}", serde_json::to_string_pretty(&doc).unwrap());
        }
    }
}

fn write_trace(result: &SolveResult, mut sink: impl Write) -> Result<()> {
    for rec in &result.history {
        writeln!(sink, "{}", serde_json::to_string(rec)?)?;
    }
    Ok(())
}

fn load_or_generate(args: &SolveArgs) -> Result<ProblemInstance> {
    match (&args.protocol, &args.file) {
        (Some(p), None) => {
            let params = args.params.as_deref().unwrap_or("");
            Ok(parse_params(p, params)?.generate()?.instance)
        }
        (None, Some(path)) => {
            load_instance(path).with_context(|| format!("loading {}", path.display()))
        }
        _ => bail!("exactly one of --protocol or --file is required"),
    }
}

fn cmd_solve(args: &SolveArgs) -> Result<u8> {
    let instance = load_or_generate(args).map_err(|e| e.context("instance"))?;
    let cfg = config_from(args.epsilon, args.max_iters, args.eta, args.rank_tol);
    let out = run_instance(&instance, &cfg)?;
    if let Some(path) = &args.trace_out {
        let f = std::fs::File::create(path)?;
        write_trace(&out.result, std::io::BufWriter::new(f))?;
    }
    print_solve_report(&out, args.format, args.leakage);
    Ok(exit_code_for(&out.result))
}

fn cmd_trace(args: &SolveArgs) -> Result<u8> {
    let instance = load_or_generate(args)?;
    let cfg = config_from(args.epsilon, args.max_iters, args.eta, args.rank_tol);
    let out = run_instance(&instance, &cfg)?;
    match args.format {
        Format::Json => write_trace(&out.result, std::io::stdout().lock())?,
        _ => {
            println!(
                "{:>4} {:>12} {:>12} {:>12} {:>12} {:>7} {:>7} {:>14} {:>14} {:>12}",
                "iter", "mu", "|Fd|", "|Fp|", "|Fc|", "a_p", "a_d", "ub", "lb", "relstopgap"
            );
            for rec in &out.result.history {
                println!(
                    "{:>4} {:>12.3e} {:>12.3e} {:>12.3e} {:>12.3e} {:>7.3} {:>7.3} {:>14.6e} {:>14.6e} {:>12.3e}",
                    rec.iteration,
                    rec.mu,
                    rec.norm_fd,
                    rec.norm_fp,
                    rec.norm_fc,
                    rec.alpha_p,
                    rec.alpha_d,
                    rec.best_ub.unwrap_or(f64::INFINITY),
                    rec.best_lb.unwrap_or(f64::NEG_INFINITY),
                    rec.relstopgap
                );
            }
        }
    }
    if let Some(path) = &args.trace_out {
        let f = std::fs::File::create(path)?;
        write_trace(&out.result, std::io::BufWriter::new(f))?;
    }
    Ok(exit_code_for(&out.result))
}

/// Cartesian product of the grid positions, leftmost slowest.
fn expand_grid(grid: &str) -> Result<Vec<String>> {
    let trimmed = grid.trim();
    if trimmed.is_empty() {
        return Ok(vec![]);
    }
    let positions: Vec<Vec<String>> = trimmed
        .split(',')
        .map(|pos| pos.split('|').map(|v| v.trim().to_string()).collect())
        .collect();
    let mut rows: Vec<String> = vec![String::new()];
    for pos in &positions {
        let mut next = Vec::with_capacity(rows.len() * pos.len());
        for prefix in &rows {
            for v in pos {
                if prefix.is_empty() {
                    next.push(v.clone());
                } else {
                    next.push(format!("{prefix},{v}"));
                }
            }
        }
        rows = next;
    }
    Ok(rows)
}

fn cmd_sweep(args: &SweepArgs) -> Result<u8> {
    let rows = expand_grid(&args.grid)?;
    let cfg = config_from(args.epsilon, args.max_iters, args.eta, args.rank_tol);

    let run_row = |row: &String| -> (String, Result<RunOutcome>) {
        let res = parse_params(&args.protocol, row)
            .and_then(|p| Ok(p.generate()?.instance))
            .and_then(|inst| run_instance(&inst, &cfg));
        (row.clone(), res)
    };
    let outcomes: Vec<(String, Result<RunOutcome>)> = if args.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(args.jobs)
            .build()
            .context("thread pool")?;
        pool.install(|| {
            use rayon::prelude::*;
            rows.par_iter().map(run_row).collect()
        })
    } else {
        rows.iter().map(run_row).collect()
    };

    let header = "protocol,parameter,size,gap,time,bestub,bestlb";
    match args.format {
        Format::Table => {
            println!(
                "{:<10} {:<22} {:<10} {:>10} {:>8} {:>16} {:>16}",
                "protocol", "parameter", "size", "gap", "time", "bestub", "bestlb"
            );
        }
        _ => println!("{header}"),
    }
    let mut worst = EXIT_GAP_MET;
    for (row, outcome) in &outcomes {
        match outcome {
            Ok(out) => {
                let r = &out.result;
                let gap = r.rel_gap();
                match args.format {
                    Format::Table => println!(
                        "{:<10} {:<22} {:<10} {:>10.3e} {:>8.2} {:>16.9e} {:>16.9e}",
                        out.protocol,
                        out.parameter,
                        format!("({},{})", out.size.0, out.size.1),
                        gap,
                        out.seconds,
                        r.best_upper,
                        r.best_lower
                    ),
                    _ => println!(
                        "{},\"{}\",\"({},{})\",{:.3e},{:.2},{:.12e},{:.12e}",
                        out.protocol,
                        out.parameter,
                        out.size.0,
                        out.size.1,
                        gap,
                        out.seconds,
                        r.best_upper,
                        r.best_lower
                    ),
                }
                worst = worst.max(exit_code_for(r));
            }
            Err(e) => {
                // Per-row failures stay in-row; the sweep continues.
                match args.format {
                    Format::Table => println!("{:<10} {row:<22} failed: {e}", args.protocol),
                    _ => println!("{},\"({row})\",,error: {e},,,", args.protocol),
                }
                worst = worst.max(EXIT_INSTANCE_ERROR);
            }
        }
    }
    Ok(worst)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Trace(args) => cmd_trace(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INSTANCE_ERROR)
        }
    }
}
