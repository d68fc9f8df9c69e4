use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use super::{emit_plotdata, summarize, summary_csv, ExpError, ExperimentKind, LambdaChoice, ResultRow, RunConfig, SummaryRow};
use crate::cssl::{cross_validate, evaluate, train, CvParam, Mode, TrainConfig};
use crate::datagen::{gen_synthetic, mnist_bias_sample, mnist_load_idx, synthetic_dataset, Dataset};
use crate::infobounds::{BoundReport, ExtReal, ToyAnalysis, ToyProblem};
use crate::nn::Matrix;
use crate::seeding;

const TAG_TRAIN: u64 = 11;
const TAG_TEST: u64 = 12;
const TAG_CV: u64 = 13;

/// One bound evaluated on one random toy world.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditRow {
    pub world: usize,
    pub seed: u64,
    pub bound: &'static str,
    pub report: BoundReport,
}

impl AuditRow {
    pub fn csv_header() -> String {
        format!("world,seed,bound,{},holds", BoundReport::CSV_HEADER)
    }

    pub fn csv(&self) -> String {
        let holds = match self.report.holds(1e-9) {
            Some(true) => "true",
            Some(false) => "false",
            None => "",
        };
        format!("{},{},{},{},{holds}", self.world, self.seed, self.bound, self.report.csv_row())
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
    /// Entropy weight used by the EM baseline, when it ran.
    pub em_lambda: Option<f64>,
    pub beta: f64,
    pub audit: Vec<AuditRow>,
}

/// Runs `f` over `items` on `jobs` threads; results come back in input order.
fn par_map<T: Sync, R: Send>(jobs: usize, items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap_or_else(|e| e.into_inner()).expect("every job ran"))
        .collect()
}

fn mnist_paths(dir: &Path) -> (PathBuf, PathBuf) {
    let plain = (dir.join("images.idx3-ubyte"), dir.join("labels.idx1-ubyte"));
    if plain.0.exists() {
        plain
    } else {
        (dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"))
    }
}

impl RunConfig {
    /// Training settings of one run in `mode`.
    pub fn train_config(&self, mode: Mode, beta: f64, em_lambda: f64, seed: u64) -> TrainConfig {
        let c = self;
        TrainConfig {
            beta,
            loss: c.loss.clone(),
            epochs: c.epochs,
            batch_size: c.batch_size,
            lr: c.lr,
            seed,
            mode,
            hidden: c.hidden.clone(),
            eval_path: c.eval_path,
            em_lambda,
            eval_every: 0,
            warmup_epochs: c.warmup_epochs,
        }
    }
}

fn mode_tag(mode: Mode) -> u64 {
    Mode::ALL.iter().position(|&m| m == mode).unwrap_or(0) as u64
}

/// Initialization and shuffling seed of a `mode` run on the data of `data_seed`.
pub fn train_seed(data_seed: u64, mode: Mode) -> u64 {
    seeding::derive(data_seed, &[TAG_TRAIN, mode_tag(mode)])
}

/// One `(a1, features, labels)` test set per entry of `test_a1_grid`.
pub fn shift_test_sets(config: &RunConfig, data_seed: u64) -> Result<Vec<(f64, Matrix, Vec<usize>)>, ExpError> {
    config
        .test_a1_grid
        .iter()
        .enumerate()
        .map(|(k, &a1)| {
            let (x, y) = gen_synthetic(
                &config.labeled.with_a1(a1),
                config.test_size,
                seeding::derive(data_seed, &[TAG_TEST, k as u64]),
            )?;
            Ok((a1, x, y))
        })
        .collect()
}

/// Builds the training set of one cell. Test sets of the shift table are
/// drawn separately.
struct DataSource<'a> {
    config: &'a RunConfig,
    mnist: Option<(Matrix, Vec<usize>)>,
}

impl DataSource<'_> {
    fn dataset(&self, m: usize, seed: u64) -> Result<Dataset, ExpError> {
        let c = self.config;
        if let Some((x, y)) = &self.mnist {
            return Ok(mnist_bias_sample(x, y, c.n, m, c.test_size, c.low_frac, seed)?);
        }
        let target = c.labeled.with_a1(c.unlabeled_a1);
        let n_test = if c.experiment == ExperimentKind::Table1 { 0 } else { c.test_size };
        Ok(synthetic_dataset(c.labeled, target, target, c.n, m, n_test, seed)?)
    }

    fn x_values(&self) -> Vec<f64> {
        let c = self.config;
        match c.experiment {
            ExperimentKind::Table1 => c.test_a1_grid.clone(),
            _ => c.m_grid.iter().map(|&m| m as f64).collect(),
        }
    }

    /// Unlabeled count and data seed of grid cell `xi`.
    fn cell(&self, xi: usize, repeat: usize) -> (usize, u64) {
        let c = self.config;
        if c.experiment == ExperimentKind::Table1 {
            (c.m, seeding::derive(c.seed, &[repeat as u64]))
        } else {
            (c.m_grid[xi], seeding::derive(c.seed, &[xi as u64, repeat as u64]))
        }
    }
}

/// Dataset of grid cell `xi` in `repeat` and its seed, built exactly as
/// [`run`] builds it. The shift table has no test split here; its test sets
/// are drawn per `a1`.
pub fn cell_dataset(config: &RunConfig, xi: usize, repeat: usize) -> Result<(Dataset, u64), ExpError> {
    config.validate()?;
    let mnist = match config.experiment {
        ExperimentKind::Mnist => {
            let (img, lbl) = mnist_paths(&config.mnist_dir);
            Some(mnist_load_idx(&img, &lbl)?)
        }
        ExperimentKind::BoundsAudit => return Err(ExpError::Config("a bounds audit has no datasets".into())),
        _ => None,
    };
    let src = DataSource { config, mnist };
    if xi >= src.x_values().len() {
        return Err(ExpError::Config(format!("grid index {xi} out of range")));
    }
    let (m, seed) = src.cell(xi, repeat);
    Ok((src.dataset(m, seed)?, seed))
}

/// Runs every (mode, x, repeat) cell of `config`, or only those of one mode
/// and repeat. Each row's `seed` fixes its data and initialization, so the
/// filtered run reproduces the matching rows of the full run exactly.
pub fn run(config: &RunConfig, only: Option<(Mode, usize)>) -> Result<RunOutput, ExpError> {
    config.validate()?;
    if let Some((mode, repeat)) = only {
        if repeat >= config.repeats {
            return Err(ExpError::Config(format!("repeat {repeat} out of range (repeats = {})", config.repeats)));
        }
        if !config.modes.contains(&mode) {
            return Err(ExpError::Config(format!("mode {mode} is not enabled")));
        }
    }
    match config.experiment {
        ExperimentKind::BoundsAudit => run_audit(config),
        _ => run_training(config, only),
    }
}

fn run_training(config: &RunConfig, only: Option<(Mode, usize)>) -> Result<RunOutput, ExpError> {
    let mnist = if config.experiment == ExperimentKind::Mnist {
        let (img, lbl) = mnist_paths(&config.mnist_dir);
        Some(mnist_load_idx(&img, &lbl)?)
    } else {
        None
    };
    let src = DataSource { config, mnist };
    let xs = src.x_values();
    if xs.is_empty() {
        return Err(ExpError::Config("empty experiment grid".into()));
    }

    // Hyperparameter searches run once, on the first cell of repeat 0, and
    // only when a selected mode uses the result.
    let uses = |mode: Mode| config.modes.contains(&mode) && only.is_none_or(|(om, _)| om == mode);
    let needs_cv = |p: CvParam| match p {
        CvParam::Beta => config.cv_beta && uses(Mode::Cssl),
        CvParam::EmLambda => config.em_lambda == LambdaChoice::Cv && uses(Mode::Em),
    };
    let cv_data = if needs_cv(CvParam::Beta) || needs_cv(CvParam::EmLambda) {
        let (m, seed) = src.cell(0, 0);
        Some(src.dataset(m, seed)?)
    } else {
        None
    };
    let cv_seed = seeding::derive(config.seed, &[TAG_CV]);
    let beta = match &cv_data {
        Some(d) if needs_cv(CvParam::Beta) => {
            let cfg = config.train_config(Mode::Cssl, config.beta, 0.0, cv_seed);
            cross_validate(CvParam::Beta, &config.beta_grid, config.folds, &cfg, d)?.0
        }
        _ => config.beta,
    };
    let em_lambda = match (config.em_lambda, &cv_data) {
        (LambdaChoice::Fixed(v), _) => v,
        (LambdaChoice::Cv, Some(d)) if needs_cv(CvParam::EmLambda) => {
            let cfg = config.train_config(Mode::Em, beta, 0.0, cv_seed);
            cross_validate(CvParam::EmLambda, &config.lambda_grid, config.folds, &cfg, d)?.0
        }
        _ => 0.0,
    };

    struct Job {
        mode: Mode,
        xi: usize,
        repeat: usize,
    }
    let table = config.experiment == ExperimentKind::Table1;
    let mut jobs = Vec::new();
    for repeat in 0..config.repeats {
        for xi in 0..if table { 1 } else { xs.len() } {
            for &mode in &config.modes {
                if only.is_none_or(|(om, or)| om == mode && or == repeat) {
                    jobs.push(Job { mode, xi, repeat });
                }
            }
        }
    }

    let results = par_map(config.jobs, &jobs, |job| -> Result<Vec<ResultRow>, ExpError> {
        let (m, seed) = src.cell(job.xi, job.repeat);
        let data = src.dataset(m, seed)?;
        let cfg = config.train_config(job.mode, beta, em_lambda, train_seed(seed, job.mode));
        let start = Instant::now();
        let out = train(&cfg, &data)?;
        let wall = start.elapsed().as_secs_f64();
        let row = |x: f64, accuracy: f64| ResultRow {
            experiment: config.experiment,
            mode: job.mode,
            x,
            repeat: job.repeat,
            seed,
            accuracy,
            wall_secs: wall,
        };
        if !table {
            let acc = out
                .final_accuracy()
                .ok_or_else(|| ExpError::Config("test_size must be positive".into()))?;
            return Ok(vec![row(xs[job.xi], acc)]);
        }
        shift_test_sets(config, seed)?
            .into_iter()
            .map(|(a1, tx, ty)| Ok(row(a1, evaluate(&out.model, &tx, &ty, cfg.eval_path)?)))
            .collect()
    });

    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    // Canonical order: repeat-major for sweeps, then mode, then x.
    rows.sort_by(|a, b| {
        (a.repeat, mode_tag(a.mode))
            .cmp(&(b.repeat, mode_tag(b.mode)))
            .then(a.x.total_cmp(&b.x))
    });
    Ok(RunOutput {
        summary: summarize(&rows),
        rows,
        em_lambda: uses(Mode::Em).then_some(em_lambda),
        beta,
        audit: Vec::new(),
    })
}

/// One row per bound of an enumerated world. The KL and TV bounds on the
/// estimation gap report `|Δ|` as `exact_gen`; the finite-class bound appears
/// only for worlds without shift.
pub fn audit_rows(world: usize, seed: u64, a: &ToyAnalysis) -> Vec<AuditRow> {
    let single = |value: ExtReal, exact: f64, delta: bool| BoundReport {
        supervised_term: if delta { ExtReal::ZERO } else { value },
        labeled_unsup_term: ExtReal::ZERO,
        unlabeled_term: ExtReal::ZERO,
        delta_term: if delta { value } else { ExtReal::ZERO },
        total: value,
        exact_gen: Some(exact),
    };
    let mut rows = vec![
        ("mi_shift", a.mi_shift.clone()),
        ("estimation_gap", a.estimation_gap.clone()),
        ("tv_shift", a.tv_shift_bound.clone()),
        ("delta_kl", single(a.delta_kl, a.delta_ssl.abs(), true)),
        ("delta_tv", single(ExtReal::Finite(a.delta_tv), a.delta_ssl.abs(), true)),
    ];
    if let Some(b) = a.finite_class {
        rows.push(("finite_class", single(ExtReal::Finite(b), a.gen_u, false)));
    }
    rows.into_iter()
        .map(|(bound, report)| AuditRow {
            world,
            seed,
            bound,
            report,
        })
        .collect()
}

fn run_audit(config: &RunConfig) -> Result<RunOutput, ExpError> {
    let worlds: Vec<usize> = (0..config.worlds).collect();
    let results = par_map(config.jobs, &worlds, |&w| -> Result<Vec<AuditRow>, ExpError> {
        let seed = seeding::derive(config.seed, &[w as u64]);
        Ok(audit_rows(w, seed, &ToyProblem::random(seed).enumerate()?))
    });
    let mut audit = Vec::new();
    for r in results {
        audit.extend(r?);
    }
    Ok(RunOutput {
        beta: config.beta,
        audit,
        ..RunOutput::default()
    })
}

fn write(path: &Path, text: String) -> Result<(), ExpError> {
    std::fs::write(path, text).map_err(|e| ExpError::io(path, e))
}

/// Writes `results.csv`, `summary.csv`, `timings.csv`, the per-mode plot
/// series and `config.txt` into `dir`; a bounds audit writes `audit.csv`
/// instead of the training files. Returns the written paths.
pub fn write_outputs(config: &RunConfig, out: &RunOutput, dir: &Path) -> Result<Vec<PathBuf>, ExpError> {
    std::fs::create_dir_all(dir).map_err(|e| ExpError::io(dir, e))?;
    let mut paths = Vec::new();
    let mut put = |name: &str, text: String| -> Result<(), ExpError> {
        let p = dir.join(name);
        write(&p, text)?;
        paths.push(p);
        Ok(())
    };

    let mut cfg_text = config.to_text();
    cfg_text.push_str(&format!("# beta used: {}\n", out.beta));
    if let Some(l) = out.em_lambda {
        cfg_text.push_str(&format!("# em_lambda used: {l}\n"));
    }
    put("config.txt", cfg_text)?;

    if config.experiment == ExperimentKind::BoundsAudit {
        let mut s = AuditRow::csv_header() + "\n";
        for r in &out.audit {
            s.push_str(&r.csv());
            s.push('\n');
        }
        put("audit.csv", s)?;
        return Ok(paths);
    }

    let mut results = String::from(ResultRow::CSV_HEADER) + "\n";
    let mut timings = String::from("experiment,mode,x,repeat,wall_secs\n");
    for r in &out.rows {
        results.push_str(&r.csv());
        results.push('\n');
        timings.push_str(&format!("{},{},{},{},{:.3}\n", r.experiment, r.mode.name(), r.x, r.repeat, r.wall_secs));
    }
    put("results.csv", results)?;
    put("summary.csv", summary_csv(&out.summary))?;
    put("timings.csv", timings)?;
    drop(put);
    paths.extend(emit_plotdata(&out.rows, dir)?);
    Ok(paths)
}
