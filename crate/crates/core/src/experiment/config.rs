use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use super::ExpError;
use crate::cssl::{Branch, Mode, DEFAULT_BETA_GRID, DEFAULT_LAMBDA_GRID};
use crate::datagen::SynthParams;
use crate::losses::LossSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentKind {
    Fig2a,
    Fig2b,
    Table1,
    Mnist,
    BoundsAudit,
    Custom,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::Fig2a,
        ExperimentKind::Fig2b,
        ExperimentKind::Table1,
        ExperimentKind::Mnist,
        ExperimentKind::BoundsAudit,
        ExperimentKind::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Fig2a => "fig2a",
            ExperimentKind::Fig2b => "fig2b",
            ExperimentKind::Table1 => "table1",
            ExperimentKind::Mnist => "mnist",
            ExperimentKind::BoundsAudit => "bounds_audit",
            ExperimentKind::Custom => "custom",
        }
    }

    /// What the `x` column of a result row holds.
    pub fn x_name(self) -> &'static str {
        match self {
            ExperimentKind::Table1 => "test_a1",
            ExperimentKind::BoundsAudit => "world",
            _ => "m",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = ExpError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| ExpError::Config(format!("unknown experiment '{}'", s.trim())))
    }
}

/// Entropy weight of the EM baseline: fixed, or chosen by cross-validation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaChoice {
    Cv,
    Fixed(f64),
}

impl fmt::Display for LambdaChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LambdaChoice::Cv => f.write_str("cv"),
            LambdaChoice::Fixed(v) => write!(f, "{v}"),
        }
    }
}

/// One experiment, fully specified. Every field has a `key = value` line in
/// the config format; see [`RunConfig::KEYS`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    pub repeats: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Concurrent training jobs.
    pub jobs: usize,
    pub modes: Vec<Mode>,
    pub n: usize,
    /// Unlabeled counts for sweeps over `m`.
    pub m_grid: Vec<usize>,
    /// Unlabeled count for the test-shift table.
    pub m: usize,
    pub test_a1_grid: Vec<f64>,
    /// Labeled-side generator parameters.
    pub labeled: SynthParams,
    /// `a1` of the unlabeled and test features.
    pub unlabeled_a1: f64,
    pub test_size: usize,
    pub beta: f64,
    pub cv_beta: bool,
    pub beta_grid: Vec<f64>,
    pub em_lambda: LambdaChoice,
    pub lambda_grid: Vec<f64>,
    pub folds: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub loss: LossSpec,
    pub eval_path: Branch,
    pub mnist_dir: PathBuf,
    pub low_frac: f64,
    /// Random toy worlds in a bounds audit.
    pub worlds: usize,
}

fn list<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>, ExpError> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| ExpError::Config(format!("{key}: cannot parse '{}'", s.trim())))
        })
        .collect()
}

fn parse_one<T: FromStr>(key: &str, v: &str) -> Result<T, ExpError> {
    v.trim()
        .parse()
        .map_err(|_| ExpError::Config(format!("{key}: cannot parse '{}'", v.trim())))
}

impl RunConfig {
    pub const KEYS: [&'static str; 32] = [
        "experiment",
        "repeats",
        "seed",
        "output_dir",
        "jobs",
        "modes",
        "n",
        "m_grid",
        "m",
        "test_a1_grid",
        "a1",
        "s1",
        "a2",
        "s2",
        "unlabeled_a1",
        "test_size",
        "beta",
        "cv_beta",
        "beta_grid",
        "em_lambda",
        "lambda_grid",
        "folds",
        "epochs",
        "warmup_epochs",
        "batch_size",
        "lr",
        "hidden",
        "loss",
        "eval_path",
        "mnist_dir",
        "low_frac",
        "worlds",
    ];

    /// Defaults for `kind`. Synthetic settings use the reference parameters
    /// of each experiment; MNIST uses the desk-scale MLP settings.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let fig2a = SynthParams {
            a1: 0.01,
            s1: 0.05,
            a2: 0.01,
            s2: 2.0,
        };
        let mut c = RunConfig {
            experiment: kind,
            repeats: 5,
            seed: 0,
            output_dir: PathBuf::from(format!("runs/{kind}")),
            jobs: 1,
            modes: Mode::ALL.to_vec(),
            n: 300,
            m_grid: vec![300, 600, 1500, 3000, 6000],
            m: 3000,
            test_a1_grid: vec![0.9, 0.6, 0.4],
            labeled: fig2a,
            unlabeled_a1: 0.8,
            test_size: 2000,
            beta: 0.02,
            cv_beta: false,
            beta_grid: DEFAULT_BETA_GRID.to_vec(),
            em_lambda: LambdaChoice::Cv,
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            folds: 10,
            epochs: 200,
            warmup_epochs: 20,
            batch_size: 32,
            lr: 1e-3,
            hidden: vec![10],
            loss: LossSpec::log_loss(),
            eval_path: Branch::Unlabeled,
            mnist_dir: PathBuf::from("data/mnist"),
            low_frac: 0.9,
            worlds: 200,
        };
        match kind {
            ExperimentKind::Fig2b => {
                c.labeled = SynthParams {
                    a1: 0.03,
                    s2: 0.2,
                    ..fig2a
                };
                c.unlabeled_a1 = 0.3;
            }
            ExperimentKind::Mnist => {
                c.repeats = 3;
                c.n = 1000;
                c.m_grid = vec![1000, 2000, 3000, 4000];
                c.m = 3000;
                c.test_size = 1000;
                c.beta = 0.9;
                c.em_lambda = LambdaChoice::Fixed(0.1);
                c.epochs = 30;
                c.warmup_epochs = 10;
                c.hidden = vec![64];
            }
            _ => {}
        }
        c
    }

    /// Parses a flat `key = value` file. `experiment` selects the defaults
    /// the remaining keys override; unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self, ExpError> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ExpError::Parse {
                line: i + 1,
                msg: format!("expected key = value, got '{line}'"),
            })?;
            pairs.push((i + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let kind = pairs
            .iter()
            .find(|(_, k, _)| k == "experiment")
            .map(|(_, _, v)| v.parse::<ExperimentKind>())
            .transpose()?
            .ok_or_else(|| ExpError::Config("missing key 'experiment'".into()))?;
        let mut c = RunConfig::defaults(kind);
        for (line, k, v) in pairs {
            c.set(&k, &v).map_err(|e| ExpError::Parse {
                line,
                msg: e.to_string(),
            })?;
        }
        c.validate()?;
        Ok(c)
    }

    /// Applies one `key = value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ExpError> {
        let v = value.trim();
        match key.trim() {
            "experiment" => {
                let kind: ExperimentKind = v.parse()?;
                if kind != self.experiment {
                    return Err(ExpError::Config(format!(
                        "experiment is {}; start from that experiment's defaults instead of switching to {kind}",
                        self.experiment
                    )));
                }
            }
            "repeats" => self.repeats = parse_one(key, v)?,
            "seed" => self.seed = parse_one(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "jobs" => self.jobs = parse_one(key, v)?,
            "modes" => {
                self.modes = parse_list::<String>(key, v)?
                    .iter()
                    .map(|s| s.parse::<Mode>().map_err(|e| ExpError::Config(format!("modes: {e}"))))
                    .collect::<Result<_, _>>()?
            }
            "n" => self.n = parse_one(key, v)?,
            "m_grid" => self.m_grid = parse_list(key, v)?,
            "m" => self.m = parse_one(key, v)?,
            "test_a1_grid" => self.test_a1_grid = parse_list(key, v)?,
            "a1" => self.labeled.a1 = parse_one(key, v)?,
            "s1" => self.labeled.s1 = parse_one(key, v)?,
            "a2" => self.labeled.a2 = parse_one(key, v)?,
            "s2" => self.labeled.s2 = parse_one(key, v)?,
            "unlabeled_a1" => self.unlabeled_a1 = parse_one(key, v)?,
            "test_size" => self.test_size = parse_one(key, v)?,
            "beta" => self.beta = parse_one(key, v)?,
            "cv_beta" => self.cv_beta = parse_one(key, v)?,
            "beta_grid" => self.beta_grid = parse_list(key, v)?,
            "em_lambda" => {
                self.em_lambda = if v == "cv" {
                    LambdaChoice::Cv
                } else {
                    LambdaChoice::Fixed(parse_one(key, v)?)
                }
            }
            "lambda_grid" => self.lambda_grid = parse_list(key, v)?,
            "folds" => self.folds = parse_one(key, v)?,
            "epochs" => self.epochs = parse_one(key, v)?,
            "warmup_epochs" => self.warmup_epochs = parse_one(key, v)?,
            "batch_size" => self.batch_size = parse_one(key, v)?,
            "lr" => self.lr = parse_one(key, v)?,
            "hidden" => self.hidden = parse_list(key, v)?,
            "loss" => self.loss = v.parse().map_err(|e| ExpError::Config(format!("loss: {e}")))?,
            "eval_path" => self.eval_path = v.parse().map_err(|e| ExpError::Config(format!("eval_path: {e}")))?,
            "mnist_dir" => self.mnist_dir = PathBuf::from(v),
            "low_frac" => self.low_frac = parse_one(key, v)?,
            "worlds" => self.worlds = parse_one(key, v)?,
            other => return Err(ExpError::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ExpError> {
        let bad = |m: String| Err(ExpError::Config(m));
        if self.repeats == 0 {
            return bad("repeats must be at least 1".into());
        }
        if self.jobs == 0 {
            return bad("jobs must be at least 1".into());
        }
        if self.modes.is_empty() {
            return bad("modes must name at least one mode".into());
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta must lie in [0,1], got {}", self.beta));
        }
        if !(0.0..=1.0).contains(&self.low_frac) {
            return bad(format!("low_frac must lie in [0,1], got {}", self.low_frac));
        }
        if self.test_size == 0 {
            return bad("test_size must be at least 1".into());
        }
        match self.experiment {
            ExperimentKind::Table1 if self.test_a1_grid.is_empty() => bad("test_a1_grid is empty".into()),
            ExperimentKind::Fig2a | ExperimentKind::Fig2b | ExperimentKind::Custom | ExperimentKind::Mnist
                if self.m_grid.is_empty() =>
            {
                bad("m_grid is empty".into())
            }
            ExperimentKind::BoundsAudit if self.worlds == 0 => bad("worlds must be at least 1".into()),
            _ => self.labeled.validate().map_err(|e| ExpError::Config(e.to_string())),
        }
    }

    /// Serializes every key; [`RunConfig::parse`] inverts it exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("experiment", self.experiment.to_string());
        kv("repeats", self.repeats.to_string());
        kv("seed", self.seed.to_string());
        kv("output_dir", self.output_dir.display().to_string());
        kv("jobs", self.jobs.to_string());
        kv("modes", list(&self.modes.iter().map(|m| m.name()).collect::<Vec<_>>()));
        kv("n", self.n.to_string());
        kv("m_grid", list(&self.m_grid));
        kv("m", self.m.to_string());
        kv("test_a1_grid", list(&self.test_a1_grid));
        kv("a1", self.labeled.a1.to_string());
        kv("s1", self.labeled.s1.to_string());
        kv("a2", self.labeled.a2.to_string());
        kv("s2", self.labeled.s2.to_string());
        kv("unlabeled_a1", self.unlabeled_a1.to_string());
        kv("test_size", self.test_size.to_string());
        kv("beta", self.beta.to_string());
        kv("cv_beta", self.cv_beta.to_string());
        kv("beta_grid", list(&self.beta_grid));
        kv("em_lambda", self.em_lambda.to_string());
        kv("lambda_grid", list(&self.lambda_grid));
        kv("folds", self.folds.to_string());
        kv("epochs", self.epochs.to_string());
        kv("warmup_epochs", self.warmup_epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("lr", self.lr.to_string());
        kv("hidden", list(&self.hidden));
        kv("loss", self.loss.to_string());
        kv("eval_path", self.eval_path.to_string());
        kv("mnist_dir", self.mnist_dir.display().to_string());
        kv("low_frac", self.low_frac.to_string());
        kv("worlds", self.worlds.to_string());
        s
    }
}
