use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use cssl_cli::checks;
use cssl_core::cssl::{cross_validate, evaluate, save_checkpoint, train, CsslError, CvParam, Mode};
use cssl_core::datagen::DataError;
use cssl_core::experiment::{
    audit_rows, cell_dataset, run, shift_test_sets, train_seed, write_outputs, AuditRow, ExpError, ExperimentKind,
    LambdaChoice, RunConfig,
};
use cssl_core::infobounds::{InfoError, ToyProblem};
use cssl_core::seeding;

/// `println!` that stays quiet when stdout is a closed pipe.
macro_rules! out {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Exp(#[from] ExpError),
    #[error(transparent)]
    Cssl(#[from] CsslError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Info(#[from] InfoError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0} check(s) failed")]
    ChecksFailed(usize),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Parser)]
#[command(name = "cssl", version, about = "Semi-supervised training under covariate shift, and exact checks of its generalization bounds")]
struct Cli {
    /// Global seed. Overrides the config file; falls back to CSSL_SEED.
    #[arg(long, global = true, env = "CSSL_SEED")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Clone)]
struct CellArgs {
    /// Index into the experiment grid (`m_grid`).
    #[arg(long, default_value_t = 0)]
    cell: usize,
    #[arg(long, default_value_t = 0)]
    repeat: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Draw the dataset of one experiment cell and write it as CSV.
    GenData {
        #[arg(long, default_value = "fig2a")]
        experiment: ExperimentKind,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        cell: CellArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on one experiment cell and report test accuracy.
    Train {
        #[arg(long, default_value = "fig2a")]
        experiment: ExperimentKind,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        cell: CellArgs,
        #[arg(long, default_value = "cssl")]
        mode: Mode,
        /// Record test accuracy every N epochs.
        #[arg(long, default_value_t = 0)]
        eval_every: usize,
        /// Per-epoch risk breakdown as CSV.
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate every bound on a toy world by exact enumeration; CSV to stdout.
    Bounds {
        /// World description file (`key = value` lines).
        world: Option<PathBuf>,
        /// Draw random worlds instead of reading a file.
        #[arg(long, conflicts_with = "world")]
        random: bool,
        /// Number of random worlds.
        #[arg(long, default_value_t = 1, requires = "random")]
        count: usize,
        /// Print the text description of each random world to stderr.
        #[arg(long)]
        show_world: bool,
    },
    /// Run the invariant suites.
    Verify,
    /// Run a full experiment and write its CSV files.
    Reproduce {
        target: ExperimentKind,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Run a single mode and repeat, e.g. `CSSL,2`.
        #[arg(long, value_name = "MODE,REPEAT")]
        only: Option<String>,
        /// Concurrent training jobs.
        #[arg(long)]
        jobs: Option<usize>,
    },
}

/// Defaults of `kind`, then the file, then `--set`, then the seed.
fn load_config(kind: ExperimentKind, args: &ConfigArgs, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut c = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            let c = RunConfig::parse(&text)?;
            if c.experiment != kind {
                return Err(CliError::Usage(format!(
                    "{} configures experiment '{}', not '{kind}'",
                    path.display(),
                    c.experiment
                )));
            }
            c
        }
        None => RunConfig::defaults(kind),
    };
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        c.set(k, v)?;
    }
    if let Some(s) = seed {
        c.seed = s;
    }
    c.validate()?;
    Ok(c)
}

fn parse_only(s: &str) -> Result<(Mode, usize), CliError> {
    let bad = || CliError::Usage(format!("--only expects MODE,REPEAT, got '{s}'"));
    let (mode, rep) = s.split_once(',').ok_or_else(bad)?;
    Ok((mode.trim().parse()?, rep.trim().parse().map_err(|_| bad())?))
}

fn cmd_gen_data(c: &RunConfig, cell: &CellArgs, out: &Path) -> Result<(), CliError> {
    let (data, seed) = cell_dataset(c, cell.cell, cell.repeat)?;
    data.write_csv(out)?;
    if c.experiment == ExperimentKind::Table1 {
        for (k, (a1, x, y)) in shift_test_sets(c, seed)?.into_iter().enumerate() {
            let path = out.join(format!("test_{k}.csv"));
            let mut s = String::new();
            for (row, label) in x.row_iter().zip(&y) {
                let cols: Vec<String> = row.iter().map(f64::to_string).collect();
                s.push_str(&format!("{},{label}\n", cols.join(",")));
            }
            fs::write(&path, s).map_err(io_err(&path))?;
            out!("test set {k}: a1 = {a1}, {} rows -> {}", y.len(), path.display());
        }
    }
    out!(
        "labeled {} / unlabeled {} / test {} rows, seed {seed} -> {}",
        data.n_labeled(),
        data.n_unlabeled(),
        data.test_y.len(),
        out.display()
    );
    Ok(())
}

fn cmd_train(
    c: &RunConfig,
    cell: &CellArgs,
    mode: Mode,
    eval_every: usize,
    history: Option<&Path>,
    checkpoint: Option<&Path>,
) -> Result<(), CliError> {
    let (data, seed) = cell_dataset(c, cell.cell, cell.repeat)?;
    let lambda = match c.em_lambda {
        LambdaChoice::Fixed(v) => v,
        LambdaChoice::Cv if mode == Mode::Em => {
            let cfg = c.train_config(Mode::Em, c.beta, 0.0, seed);
            let (best, scores) = cross_validate(CvParam::EmLambda, &c.lambda_grid, c.folds, &cfg, &data)?;
            for (v, acc) in scores {
                out!("cv lambda {v}: {acc:.4}");
            }
            best
        }
        LambdaChoice::Cv => 0.0,
    };
    let mut cfg = c.train_config(mode, c.beta, lambda, train_seed(seed, mode));
    cfg.eval_every = eval_every;
    let start = Instant::now();
    let out = train(&cfg, &data)?;
    let secs = start.elapsed().as_secs_f64();

    if let Some(path) = history {
        let mut s = String::from("epoch,supervised,unsup_labeled,unsup_unlabeled,total,test_accuracy\n");
        for r in &out.history {
            let acc = r.test_accuracy.map(|a| a.to_string()).unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{},{},{acc}\n",
                r.epoch, r.risk.supervised, r.risk.unsupervised_labeled, r.risk.unsupervised_unlabeled, r.risk.total
            ));
        }
        fs::write(path, s).map_err(io_err(path))?;
    }
    if let Some(path) = checkpoint {
        save_checkpoint(&out.model, path)?;
    }
    if c.experiment == ExperimentKind::Table1 {
        for (a1, x, y) in shift_test_sets(c, seed)? {
            out!("{mode} test a1 = {a1}: accuracy {:.4}", evaluate(&out.model, &x, &y, cfg.eval_path)?);
        }
    } else if let Some(acc) = out.final_accuracy() {
        out!("{mode} accuracy {acc:.4}");
    }
    out!("trained {} epochs in {secs:.2}s (data seed {seed})", cfg.epochs);
    Ok(())
}

fn cmd_bounds(world: Option<&Path>, random: bool, count: usize, show: bool, seed: u64) -> Result<(), CliError> {
    let mut rows: Vec<AuditRow> = Vec::new();
    if random {
        for w in 0..count {
            let s = seeding::derive(seed, &[w as u64]);
            let p = ToyProblem::random(s);
            if show {
                eprintln!("# world {w} (seed {s})\n{}", p.to_text());
            }
            rows.extend(audit_rows(w, s, &p.enumerate()?));
        }
    } else {
        let path = world.ok_or_else(|| CliError::Usage("give a world file or --random".into()))?;
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        rows.extend(audit_rows(0, 0, &ToyProblem::parse(&text)?.enumerate()?));
    }
    let mut stdout = std::io::stdout().lock();
    let mut emit = || -> std::io::Result<()> {
        writeln!(stdout, "{}", AuditRow::csv_header())?;
        for r in &rows {
            writeln!(stdout, "{}", r.csv())?;
        }
        Ok(())
    };
    match emit() {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(io_err(Path::new("<stdout>"))(e)),
        _ => Ok(()),
    }
}

fn cmd_verify(seed: u64) -> Result<(), CliError> {
    let outcomes = checks::quick_suite(seed);
    for o in &outcomes {
        out!("{}", o.line());
    }
    match outcomes.iter().filter(|o| !o.passed).count() {
        0 => Ok(()),
        n => Err(CliError::ChecksFailed(n)),
    }
}

fn cmd_reproduce(c: &RunConfig, only: Option<(Mode, usize)>) -> Result<(), CliError> {
    let start = Instant::now();
    let out = run(c, only)?;
    let paths = write_outputs(c, &out, &c.output_dir)?;
    if c.experiment == ExperimentKind::BoundsAudit {
        let failed = out.audit.iter().filter(|r| r.report.holds(1e-9) == Some(false)).count();
        out!("{} bound evaluations, {failed} violations", out.audit.len());
    } else {
        out!("{:<6} {:>10} {:>8} {:>8}", "mode", c.experiment.x_name(), "mean", "std");
        for s in &out.summary {
            out!("{:<6} {:>10} {:>8.4} {:>8.4}", s.mode.name(), s.x, s.mean, s.std);
        }
        if let Some(l) = out.em_lambda {
            out!("EM lambda {l}");
        }
    }
    out!(
        "wrote {} files to {} in {:.1}s",
        paths.len(),
        c.output_dir.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData {
            experiment,
            cfg,
            cell,
            out,
        } => cmd_gen_data(&load_config(experiment, &cfg, cli.seed)?, &cell, &out),
        Command::Train {
            experiment,
            cfg,
            cell,
            mode,
            eval_every,
            history,
            checkpoint,
        } => cmd_train(
            &load_config(experiment, &cfg, cli.seed)?,
            &cell,
            mode,
            eval_every,
            history.as_deref(),
            checkpoint.as_deref(),
        ),
        Command::Bounds {
            world,
            random,
            count,
            show_world,
        } => cmd_bounds(world.as_deref(), random, count, show_world, cli.seed.unwrap_or(0)),
        Command::Verify => cmd_verify(cli.seed.unwrap_or(0)),
        Command::Reproduce {
            target,
            cfg,
            output_dir,
            only,
            jobs,
        } => {
            let mut c = load_config(target, &cfg, cli.seed)?;
            if let Some(d) = output_dir {
                c.output_dir = d;
            }
            if let Some(j) = jobs {
                c.jobs = j;
            }
            let only = only.as_deref().map(parse_only).transpose()?;
            cmd_reproduce(&c, only)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
