//! Argument handling and the `run` / `compare` / `validate` commands behind
//! the `dcbf` binary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dcbf_core::planner::PlannerKind;
use dcbf_core::scenario::{crossing, Scenario};
use dcbf_core::sim::{run_with, write_atomic, Outcome, RunMetrics, RunOptions, ScenarioRun, METRICS_HEADER};
use rayon::prelude::*;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_COLLISION: u8 = 2;
pub const EXIT_TIMEOUT: u8 = 3;
/// Solver or I/O failure after the configuration was accepted.
pub const EXIT_RUNTIME: u8 = 4;

/// Environment variable holding an `env_logger` filter.
pub const LOG_ENV: &str = "DCBF_LOG";

#[derive(Debug, Parser)]
#[command(name = "dcbf", version, about = "Closed-loop D-CBF MPC benchmark runner")]
pub struct Cli {
    /// More log output (-v info, -vv debug). DCBF_LOG overrides this.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one planner on one scenario and write its logs.
    Run(RunArgs),
    /// Run several planners over several seeds and tabulate the metrics.
    Compare(CompareArgs),
    /// Parse a scenario and its overrides without running it.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    /// Scenario TOML file; the built-in crossing scenario when omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Override a scenario field, e.g. `planner.gamma_cbf=0.15`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, default_value = "mpc-dcbf")]
    pub planner: PlannerKind,
    /// Replaces the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Keep the local map at this time (s) in grid.ndjson. Repeatable.
    #[arg(long = "grid-at", value_name = "T")]
    pub grid_at: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Comma-separated planner kinds.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "mpc-euclid,mpc-cbf,mpc-kf,mpc-cbf-curvefit,mpc-dcbf"
    )]
    pub planners: Vec<PlannerKind>,
    /// Comma-separated seeds; the scenario seed when omitted.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Print the resolved scenario as TOML.
    #[arg(long)]
    pub print: bool,
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }
}

pub fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, default)).try_init();
}

pub fn load_scenario(args: &ScenarioArgs) -> Result<Scenario, CliError> {
    let base = match &args.scenario {
        Some(path) => Scenario::load(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?,
        None => crossing(),
    };
    base.with_overrides(&args.overrides)
        .map_err(|e| CliError::config(e.to_string()))
}

/// Runs the parsed command; returns the process exit code.
pub fn execute(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::Validate(a) => cmd_validate(&a),
    }
}

pub fn cmd_run(args: &RunArgs) -> Result<u8, CliError> {
    let mut scenario = load_scenario(&args.scenario)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let opts = RunOptions {
        grid_at: args.grid_at.clone(),
    };
    log::info!(
        "running {} on `{}` with seed {}",
        args.planner,
        scenario.name,
        scenario.seed
    );
    let result = run_with(&scenario, args.planner, &opts).map_err(|e| CliError::runtime(e.to_string()))?;
    result
        .write_to(&args.out)
        .map_err(|e| CliError::runtime(format!("{}: {e}", args.out.display())))?;
    println!("{METRICS_HEADER}");
    println!("{}", result.metrics_row());
    Ok(match result.metrics.outcome {
        Outcome::Goal => EXIT_OK,
        Outcome::Collision => EXIT_COLLISION,
        Outcome::Timeout => EXIT_TIMEOUT,
    })
}

pub fn cmd_validate(args: &ValidateArgs) -> Result<u8, CliError> {
    let scenario = load_scenario(&args.scenario)?;
    if args.print {
        print!("{}", scenario.to_toml_string());
    } else {
        println!(
            "ok: `{}`, {} obstacles, {} s, seed {}",
            scenario.name,
            scenario.obstacles.len(),
            scenario.duration,
            scenario.seed
        );
    }
    Ok(EXIT_OK)
}

pub fn parse_seeds(raw: &str) -> Result<Vec<u64>, CliError> {
    let seeds: Vec<u64> = raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| CliError::config(format!("bad seed `{s}`"))))
        .collect::<Result<_, _>>()?;
    if seeds.is_empty() {
        return Err(CliError::config("seed list is empty"));
    }
    Ok(seeds)
}

/// Outcome of one `(planner, seed)` pair in a sweep.
#[derive(Debug, Clone)]
pub struct SweepRun {
    pub planner: PlannerKind,
    pub seed: u64,
    pub result: Result<RunMetrics, String>,
}

/// Seed-averaged metrics for one planner.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub planner: PlannerKind,
    pub runs: usize,
    pub failed: usize,
    pub collided: usize,
    /// Collided runs count as zero.
    pub min_dist: Option<f64>,
    /// Over runs that reached the goal.
    pub cons_time: Option<f64>,
    pub reac_time: Option<f64>,
    pub speed_var: Option<f64>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, s) = xs.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    (n > 0).then(|| s / n as f64)
}

pub fn summarize(runs: &[SweepRun], planners: &[PlannerKind]) -> Vec<SummaryRow> {
    planners
        .iter()
        .map(|&planner| {
            let mine: Vec<&SweepRun> = runs.iter().filter(|r| r.planner == planner).collect();
            let ok: Vec<&RunMetrics> = mine.iter().filter_map(|r| r.result.as_ref().ok()).collect();
            SummaryRow {
                planner,
                runs: mine.len(),
                failed: mine.len() - ok.len(),
                collided: ok.iter().filter(|m| m.collided).count(),
                min_dist: mean(ok.iter().map(|m| m.min_dist)),
                cons_time: mean(ok.iter().filter_map(|m| m.cons_time)),
                reac_time: mean(ok.iter().filter_map(|m| m.reac_time)),
                speed_var: mean(ok.iter().filter_map(|m| m.speed_var)),
            }
        })
        .collect()
}

pub const SUMMARY_HEADER: &str = "planner,runs,failed,collided,min_dist,cons_time,reac_time,speed_var";

fn csv_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.planner,
            r.runs,
            r.failed,
            r.collided,
            csv_opt(r.min_dist),
            csv_opt(r.cons_time),
            csv_opt(r.reac_time),
            csv_opt(r.speed_var)
        );
    }
    out
}

/// Min-distance cell: `0(collided)` when every run collided.
pub fn min_dist_cell(r: &SummaryRow) -> String {
    let ok = r.runs - r.failed;
    match r.min_dist {
        None => "-".into(),
        Some(_) if r.collided == ok => "0(collided)".into(),
        Some(d) if r.collided > 0 => format!("{d:.3}({}/{ok} collided)", r.collided),
        Some(d) => format!("{d:.3}"),
    }
}

pub fn summary_table(rows: &[SummaryRow]) -> String {
    let cell = |x: Option<f64>, digits: usize| x.map(|v| format!("{v:.digits$}")).unwrap_or_else(|| "-".into());
    let header = ["Method", "Min dist (m)", "Cons time (s)", "Reac time (s)", "Speed var"];
    let body: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            let mut name = r.planner.to_string();
            if r.failed > 0 {
                name.push_str(&format!(" [{} failed]", r.failed));
            }
            [
                name,
                min_dist_cell(r),
                cell(r.cons_time, 1),
                cell(r.reac_time, 1),
                cell(r.speed_var, 4),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[&str]| -> String {
        let parts: Vec<String> = cells.iter().zip(widths).map(|(c, w)| format!("{c:<w$}")).collect();
        format!("| {} |\n", parts.join(" | "))
    };
    let mut out = line(&header);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&format!("|-{}-|\n", rule.join("-|-")));
    for row in &body {
        out.push_str(&line(&row.each_ref().map(String::as_str)));
    }
    out
}

fn runs_csv(runs: &[SweepRun], results: &[Option<ScenarioRun>]) -> String {
    let mut out = format!("{METRICS_HEADER},error\n");
    for (r, full) in runs.iter().zip(results) {
        match (&r.result, full) {
            (Ok(_), Some(full)) => {
                let _ = writeln!(out, "{},", full.metrics_row());
            }
            (Err(e), _) => {
                let blanks = ",".repeat(METRICS_HEADER.split(',').count() - 2);
                let _ = writeln!(out, "{},{}{blanks},{}", r.planner, r.seed, e.replace([',', '\n'], ";"));
            }
            (Ok(_), None) => unreachable!("successful runs keep their log"),
        }
    }
    out
}

pub fn run_dir(out: &Path, planner: PlannerKind, seed: u64) -> PathBuf {
    out.join(planner.name()).join(format!("seed-{seed}"))
}

pub fn cmd_compare(args: &CompareArgs) -> Result<u8, CliError> {
    let scenario = load_scenario(&args.scenario)?;
    if args.planners.is_empty() {
        return Err(CliError::config("planner list is empty"));
    }
    let seeds = match &args.seeds {
        Some(raw) => parse_seeds(raw)?,
        None => vec![scenario.seed],
    };
    let pairs: Vec<(PlannerKind, u64)> = args
        .planners
        .iter()
        .flat_map(|&p| seeds.iter().map(move |&s| (p, s)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| CliError::runtime(e.to_string()))?;
    let outcomes: Vec<(SweepRun, Option<ScenarioRun>)> = pool.install(|| {
        pairs
            .par_iter()
            .map(|&(planner, seed)| {
                let mut s = scenario.clone();
                s.seed = seed;
                let attempt = run_with(&s, planner, &RunOptions::default())
                    .map_err(|e| e.to_string())
                    .and_then(|r| {
                        r.write_to(&run_dir(&args.out, planner, seed))
                            .map_err(|e| format!("writing logs: {e}"))?;
                        Ok(r)
                    });
                match attempt {
                    Ok(r) => {
                        log::info!("{planner} seed {seed}: {:?}", r.metrics.outcome);
                        (
                            SweepRun {
                                planner,
                                seed,
                                result: Ok(r.metrics),
                            },
                            Some(r),
                        )
                    }
                    Err(e) => {
                        log::warn!("{planner} seed {seed} failed: {e}");
                        (
                            SweepRun {
                                planner,
                                seed,
                                result: Err(e),
                            },
                            None,
                        )
                    }
                }
            })
            .collect()
    });
    let (runs, results): (Vec<SweepRun>, Vec<Option<ScenarioRun>>) = outcomes.into_iter().unzip();

    let rows = summarize(&runs, &args.planners);
    let table = summary_table(&rows);
    let write = |name: &str, body: &str| {
        write_atomic(&args.out.join(name), body.as_bytes()).map_err(|e| CliError::runtime(format!("{name}: {e}")))
    };
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::runtime(format!("{}: {e}", args.out.display())))?;
    write("runs.csv", &runs_csv(&runs, &results))?;
    write("summary.csv", &summary_csv(&rows))?;
    write("summary.txt", &table)?;
    print!("{table}");
    for r in &runs {
        if let Err(e) = &r.result {
            println!("{} seed {}: {e}", r.planner, r.seed);
        }
    }
    Ok(EXIT_OK)
}
