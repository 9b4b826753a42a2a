use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use safe_crl::config::RunConfig;
use safe_crl::experiment::{train, train_seeds};
use safe_crl::io::{self, CsvKind};
use safe_crl::learner::Mode;
use safe_crl::par::Execution;
use safe_crl::report::{safety_series, summarize_run, summarize_trajectory, write_series, ReportOptions};
use safe_crl::tabular::suites::{run_suite, Suite, SuiteOptions};

#[derive(Parser)]
#[command(name = "crl", version, about = "Safe primal-dual RL for continuing tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write trajectory.csv, run.csv, theta.ckpt and report.txt.
    Train(TrainArgs),
    /// Run a tabular verification suite; exits 1 on any violation.
    Verify(VerifyArgs),
    /// Summarize a trajectory.csv or run.csv.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Continuing,
    Episodic,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value = "continuing")]
    mode: ModeArg,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Independent runs for seeds a..b (exclusive), written to <out>/seed-<n>.
    #[arg(long, conflicts_with = "seed", value_parser = parse_range)]
    seeds: Option<(u64, u64)>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_parser = parse_suite)]
    suite: Suite,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Tolerance for prop2/prop3; repeatable.
    #[arg(long = "epsilon")]
    epsilons: Vec<f64>,
    /// Monte Carlo samples per check (estimators).
    #[arg(long)]
    samples: Option<usize>,
    /// Run trials on one thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long, default_value_t = 200)]
    burnin: u64,
    #[arg(long, default_value_t = 1.0)]
    goal_radius: f64,
    /// Goal position as x,y.
    #[arg(long, value_parser = parse_point, default_value = "9,1.5")]
    goal: [f64; 2],
    /// Where report.txt and safety.csv go; defaults to the log's directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    s.parse().map_err(|_| {
        let names: Vec<_> = Suite::ALL.iter().map(|s| s.name()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

fn parse_range(s: &str) -> Result<(u64, u64), String> {
    let (a, b) = s.split_once("..").ok_or("expected a..b")?;
    let a: u64 = a.parse().map_err(|_| format!("bad start `{a}`"))?;
    let b: u64 = b.parse().map_err(|_| format!("bad end `{b}`"))?;
    if a >= b {
        return Err("empty seed range".into());
    }
    Ok((a, b))
}

fn parse_point(s: &str) -> Result<[f64; 2], String> {
    let (x, y) = s.split_once(',').ok_or("expected x,y")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("bad coordinate `{v}`"));
    Ok([p(x)?, p(y)?])
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode> {
    let cfg = RunConfig::load(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    let mode = match args.mode {
        ModeArg::Continuing => Mode::Continuing,
        ModeArg::Episodic => Mode::Episodic,
    };
    let out = args
        .out
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("runs"));
    if let Some((a, b)) = args.seeds {
        let seeds: Vec<u64> = (a..b).collect();
        let results = train_seeds(&cfg, mode, &seeds, Execution::Parallel)?;
        for (seed, res) in seeds.iter().zip(&results) {
            let dir = out.join(format!("seed-{seed}"));
            res.write(&dir)?;
            println!("seed {seed}: {}", one_line(&res.summary().render(&res.report_options)));
        }
        return Ok(ExitCode::SUCCESS);
    }
    let seed = args.seed.unwrap_or(cfg.seed);
    let res = train(&cfg, mode, seed)?;
    res.write(&out)?;
    print!("{}", res.summary().render(&res.report_options));
    println!("artifacts written to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn one_line(text: &str) -> String {
    text.lines().collect::<Vec<_>>().join(", ")
}

fn cmd_verify(args: VerifyArgs) -> Result<ExitCode> {
    let mut opts = SuiteOptions::for_suite(args.suite, args.seed);
    if let Some(t) = args.trials {
        opts.trials = t;
    }
    if !args.epsilons.is_empty() {
        opts.epsilons = args.epsilons;
    }
    if let Some(n) = args.samples {
        opts.samples = n;
    }
    if args.sequential {
        opts.execution = Execution::Sequential;
    }
    if args.suite == Suite::Prop2 {
        if let Some(e) = opts.epsilons.iter().find(|e| !(**e > 0.25)) {
            return Err(UsageError(format!("--epsilon must exceed 1/4 for prop2, got {e}")).into());
        }
    }
    let report = run_suite(args.suite, &opts)?;
    fs::create_dir_all(&args.out)?;
    let path = args.out.join(format!("verify-{}.csv", args.suite));
    report.write_csv(fs::File::create(&path)?)?;
    println!(
        "{}: {} trials, {} violations, worst slack {:e} -> {}",
        args.suite,
        report.records.len(),
        report.violations(),
        report.worst_slack(),
        path.display()
    );
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_report(args: ReportArgs) -> Result<ExitCode> {
    let text = fs::read_to_string(&args.log)
        .with_context(|| format!("reading {}", args.log.display()))?;
    let header = text.lines().next().unwrap_or("");
    let opts = ReportOptions {
        burnin: args.burnin,
        goal: args.goal,
        goal_radius: args.goal_radius,
    };
    let dir = args
        .out
        .unwrap_or_else(|| args.log.parent().unwrap_or(Path::new(".")).to_path_buf());
    fs::create_dir_all(&dir)?;
    let summary = match io::sniff_kind(header) {
        Some(CsvKind::Trajectory) => {
            let rows = io::read_trajectory(text.as_bytes())?;
            let sibling = args.log.with_file_name("run.csv");
            let run = sibling.exists().then(|| io::load_run(&sibling)).transpose()?;
            let series = safety_series(rows.iter().map(|r| r.safe));
            write_series(fs::File::create(dir.join("safety.csv"))?, &series)?;
            summarize_trajectory(&rows, run.as_ref(), &opts)
        }
        Some(CsvKind::Run) => summarize_run(&io::read_run(text.as_bytes())?, &opts),
        None => bail!("{}: not a trajectory or run CSV (header `{header}`)", args.log.display()),
    };
    let rendered = summary.render(&opts);
    fs::write(dir.join("report.txt"), &rendered)?;
    print!("{rendered}");
    Ok(ExitCode::SUCCESS)
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
