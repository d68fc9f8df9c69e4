use super::{objective, Branch, CsslError, CsslGrad, CsslModel, Mode, Objective, RiskBreakdown, RiskInputs};
use crate::datagen::Dataset;
use crate::losses::LossSpec;
use crate::nn::{Adam, AdamConfig, Matrix};
use crate::seeding;
use rand::seq::SliceRandom;

/// Grid searched for β by [`cross_validate_beta`].
pub const DEFAULT_BETA_GRID: [f64; 6] = [0.01, 0.02, 0.05, 0.1, 0.2, 0.5];
/// Grid searched for the entropy weight of [`Mode::Em`].
pub const DEFAULT_LAMBDA_GRID: [f64; 5] = [0.01, 0.03, 0.1, 0.3, 1.0];

// Seed-derivation tags.
const TAG_INIT: u64 = 1;
const TAG_SHUFFLE: u64 = 2;
const TAG_FOLDS: u64 = 3;
const TAG_FOLD_RUN: u64 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub beta: f64,
    pub loss: LossSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub mode: Mode,
    /// Widths of the ReLU layers inside each feature block.
    pub hidden: Vec<usize>,
    /// Branch used for test accuracy and cross-validation scores.
    pub eval_path: Branch,
    /// Weight of the unlabeled penalty in [`Mode::Em`].
    pub em_lambda: f64,
    /// Record test accuracy every this many epochs (0: final epoch only).
    pub eval_every: usize,
    /// Initial epochs during which the unlabeled terms are switched off.
    pub warmup_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            beta: 0.02,
            loss: LossSpec::log_loss(),
            epochs: 200,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            mode: Mode::Cssl,
            hidden: vec![10],
            eval_path: Branch::Unlabeled,
            em_lambda: 0.1,
            eval_every: 0,
            warmup_epochs: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CsslError> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(CsslError::Config(format!("beta must lie in [0,1], got {}", self.beta)));
        }
        if self.batch_size == 0 {
            return Err(CsslError::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(CsslError::Config("epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(CsslError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.em_lambda >= 0.0 && self.em_lambda.is_finite()) {
            return Err(CsslError::Config(format!("em_lambda must be non-negative, got {}", self.em_lambda)));
        }
        Ok(())
    }

    /// Weight of the unlabeled terms during `epoch` (zero-based): 0 during
    /// warm-up, 1 afterwards.
    pub fn ramp(&self, epoch: usize) -> f64 {
        if epoch < self.warmup_epochs {
            0.0
        } else {
            1.0
        }
    }

    fn objective(&self, epoch: usize) -> Objective {
        let ramp = self.ramp(epoch);
        match self.mode {
            Mode::Lower | Mode::Upper => Objective::Supervised,
            Mode::Em => Objective::Entropy {
                lambda: ramp * self.em_lambda,
            },
            Mode::Cssl => Objective::Ssl { beta: self.beta, ramp },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the per-batch breakdowns over the epoch.
    pub risk: RiskBreakdown,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: CsslModel,
    pub history: Vec<EpochRecord>,
}

impl TrainOutcome {
    /// Test accuracy recorded at the last epoch, if the dataset had a test split.
    pub fn final_accuracy(&self) -> Option<f64> {
        self.history.last().and_then(|r| r.test_accuracy)
    }
}

/// Fraction of rows whose argmax prediction through `branch` equals the label.
pub fn evaluate(model: &CsslModel, x: &Matrix, y: &[usize], branch: Branch) -> Result<f64, CsslError> {
    if y.is_empty() || x.rows() != y.len() {
        return Err(CsslError::Config(format!(
            "cannot evaluate {} rows against {} labels",
            x.rows(),
            y.len()
        )));
    }
    let pred = model.predict(branch, x)?.argmax_rows();
    let hits = pred.iter().zip(y).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / y.len() as f64)
}

/// Trains a fresh model on `data` in the configured mode.
///
/// Each epoch visits the labeled set once in batches of `batch_size`; the
/// unlabeled set is split into the same number of proportionally sized
/// batches, so it is also visited once. The unlabeled terms (CSSL and EM)
/// stay off for the first `warmup_epochs` epochs; started from a random
/// initialization, the unsupervised loss otherwise locks in whichever
/// labeling the untrained network happens to favor. Single-chain modes finish
/// by copying `w_l` into `w_lu`, so both branches predict identically.
pub fn train(config: &TrainConfig, data: &Dataset) -> Result<TrainOutcome, CsslError> {
    config.validate()?;
    let mut init_rng = seeding::rng(seeding::derive(config.seed, &[TAG_INIT]));
    let mut model = CsslModel::new(data.feature_dim(), &config.hidden, data.num_classes, &mut init_rng)?;

    let upper_x;
    let upper_y;
    let empty = Matrix::zeros(0, data.feature_dim());
    let (xl, yl, xu): (&Matrix, &[usize], &Matrix) = match config.mode {
        Mode::Lower => (&data.labeled_x, &data.labeled_y, &empty),
        Mode::Upper => {
            if data.unlabeled_y.len() != data.n_unlabeled() {
                return Err(CsslError::Config("upper-bound mode needs the hidden unlabeled labels".into()));
            }
            upper_x = data.labeled_x.vstack(&data.unlabeled_x)?;
            upper_y = [data.labeled_y.as_slice(), data.unlabeled_y.as_slice()].concat();
            (&upper_x, &upper_y, &empty)
        }
        Mode::Em | Mode::Cssl => (&data.labeled_x, &data.labeled_y, &data.unlabeled_x),
    };
    let (n, m) = (yl.len(), xu.rows());
    if n == 0 && !(config.mode == Mode::Cssl && config.beta == 0.0) {
        return Err(CsslError::Config(format!("mode {} needs labeled data", config.mode)));
    }
    if n + m == 0 {
        return Err(CsslError::Config("no training data".into()));
    }

    let adam_cfg = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };
    let mut opt_l = Adam::new(&model.w_l, adam_cfg);
    let mut opt_lu = Adam::new(&model.w_lu, adam_cfg);
    let mut opt_g = Adam::new(&model.w_gamma, adam_cfg);
    let mut shuffle_rng = seeding::rng(seeding::derive(config.seed, &[TAG_SHUFFLE]));

    let bs = config.batch_size;
    let steps = if n > 0 { n.div_ceil(bs) } else { m.div_ceil(bs) };
    let bu = m.div_ceil(steps);
    let mut perm_l: Vec<usize> = (0..n).collect();
    let mut perm_u: Vec<usize> = (0..m).collect();
    let mut grads = CsslGrad::zeros_for(&model);
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let obj = config.objective(epoch);
        perm_l.shuffle(&mut shuffle_rng);
        perm_u.shuffle(&mut shuffle_rng);
        let mut acc = [0.0f64; 4];
        let mut weights = [0.0; 3];
        for step in 0..steps {
            let li = &perm_l[(step * bs).min(n)..((step + 1) * bs).min(n)];
            let ui = &perm_u[(step * bu).min(m)..((step + 1) * bu).min(m)];
            let bx = xl.select_rows(li);
            let by: Vec<usize> = li.iter().map(|&i| yl[i]).collect();
            let bux = xu.select_rows(ui);
            let inputs = RiskInputs {
                labeled_x: &bx,
                labeled_y: &by,
                unlabeled_x: &bux,
                n,
                m,
            };
            grads.w_l.zero();
            grads.w_lu.zero();
            grads.w_gamma.zero();
            let r = objective(&model, inputs, obj, &config.loss, Some(&mut grads))?;
            if !r.is_finite() || !grads.is_finite() {
                return Err(CsslError::Diverged {
                    epoch,
                    step,
                    detail: format!(
                        "non-finite loss or gradient (supervised={}, unsup_labeled={}, unsup_unlabeled={})",
                        r.supervised, r.unsupervised_labeled, r.unsupervised_unlabeled
                    ),
                });
            }
            opt_l.step(&mut model.w_l, &grads.w_l)?;
            opt_g.step(&mut model.w_gamma, &grads.w_gamma)?;
            if config.mode == Mode::Cssl {
                opt_lu.step(&mut model.w_lu, &grads.w_lu)?;
            }
            acc[0] += r.supervised;
            acc[1] += r.unsupervised_labeled;
            acc[2] += r.unsupervised_unlabeled;
            acc[3] += r.total;
            weights = r.weights;
        }
        if config.mode.single_chain() {
            model.w_lu = model.w_l.clone();
        }
        let k = steps as f64;
        let risk = RiskBreakdown {
            supervised: acc[0] / k,
            unsupervised_labeled: acc[1] / k,
            unsupervised_unlabeled: acc[2] / k,
            total: acc[3] / k,
            weights,
        };
        let last = epoch + 1 == config.epochs;
        let due = last || (config.eval_every > 0 && (epoch + 1) % config.eval_every == 0);
        let test_accuracy = if due && !data.test_y.is_empty() {
            Some(evaluate(&model, &data.test_x, &data.test_y, config.eval_path)?)
        } else {
            None
        };
        history.push(EpochRecord {
            epoch,
            risk,
            test_accuracy,
        });
    }
    Ok(TrainOutcome { model, history })
}

/// Entropy-regularized single-chain baseline; `config.mode` is overridden.
pub fn em_baseline_train(config: &TrainConfig, data: &Dataset) -> Result<TrainOutcome, CsslError> {
    let cfg = TrainConfig {
        mode: Mode::Em,
        ..config.clone()
    };
    train(&cfg, data)
}

/// Hyperparameter searched by [`cross_validate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvParam {
    Beta,
    EmLambda,
}

/// K-fold search over the labeled set; every fold keeps the full unlabeled set.
///
/// Returns the grid value with the best mean held-out accuracy (ties go to the
/// smaller value) and the mean accuracy of every grid value, in ascending order.
pub fn cross_validate(
    param: CvParam,
    grid: &[f64],
    folds: usize,
    config: &TrainConfig,
    data: &Dataset,
) -> Result<(f64, Vec<(f64, f64)>), CsslError> {
    if grid.is_empty() {
        return Err(CsslError::Config("empty search grid".into()));
    }
    let n = data.n_labeled();
    if folds < 2 || folds > n {
        return Err(CsslError::Config(format!("need 2 <= folds <= {n}, got {folds}")));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeding::rng(seeding::derive(config.seed, &[TAG_FOLDS])));
    let fold_data: Vec<(Dataset, Matrix, Vec<usize>)> = (0..folds)
        .map(|k| {
            let (mut held, mut kept) = (Vec::new(), Vec::new());
            for (pos, &i) in order.iter().enumerate() {
                if pos % folds == k {
                    held.push(i);
                } else {
                    kept.push(i);
                }
            }
            let train = Dataset {
                labeled_x: data.labeled_x.select_rows(&kept),
                labeled_y: kept.iter().map(|&i| data.labeled_y[i]).collect(),
                test_x: Matrix::zeros(0, data.feature_dim()),
                test_y: Vec::new(),
                ..data.clone()
            };
            let vx = data.labeled_x.select_rows(&held);
            let vy = held.iter().map(|&i| data.labeled_y[i]).collect();
            (train, vx, vy)
        })
        .collect();

    let mut scores = Vec::with_capacity(grid.len());
    for &value in &grid {
        let mut total = 0.0;
        for (k, (train_set, vx, vy)) in fold_data.iter().enumerate() {
            let mut cfg = config.clone();
            cfg.seed = seeding::derive(config.seed, &[TAG_FOLD_RUN, k as u64]);
            cfg.eval_every = 0;
            match param {
                CvParam::Beta => cfg.beta = value,
                CvParam::EmLambda => cfg.em_lambda = value,
            }
            let out = train(&cfg, train_set)?;
            total += evaluate(&out.model, vx, vy, cfg.eval_path)?;
        }
        scores.push((value, total / folds as f64));
    }
    let mut best = scores[0];
    for &s in &scores[1..] {
        if s.1 > best.1 {
            best = s;
        }
    }
    Ok((best.0, scores))
}

/// β with the best mean held-out accuracy of the CSSL objective.
pub fn cross_validate_beta(
    grid: &[f64],
    folds: usize,
    config: &TrainConfig,
    data: &Dataset,
) -> Result<f64, CsslError> {
    let cfg = TrainConfig {
        mode: Mode::Cssl,
        ..config.clone()
    };
    Ok(cross_validate(CvParam::Beta, grid, folds, &cfg, data)?.0)
}
