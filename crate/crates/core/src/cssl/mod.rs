//! The three-block semi-supervised model and its empirical risks.
//!
//! Two disjoint feature blocks, `w_l` and `w_lu`, feed one shared softmax
//! head `w_gamma`. Labeled features run through both branches; unlabeled
//! features only through `w_lu`.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use train::{
    cross_validate, cross_validate_beta, em_baseline_train, evaluate, train, CvParam, EpochRecord,
    TrainConfig, TrainOutcome, DEFAULT_BETA_GRID, DEFAULT_LAMBDA_GRID,
};

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::losses::{logit_loss_grad, LossSpec, Target};
use crate::nn::{Activation, GradTape, Matrix, NnError, ParamBlock, Trace};

#[derive(Debug, thiserror::Error)]
pub enum CsslError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Diverged {
        epoch: usize,
        step: usize,
        detail: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },
}

/// Which feature block feeds the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    /// `w_l → w_gamma`
    Labeled,
    /// `w_lu → w_gamma`
    Unlabeled,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Labeled => "labeled",
            Branch::Unlabeled => "unlabeled",
        })
    }
}

impl FromStr for Branch {
    type Err = CsslError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "labeled" | "labeled_branch" => Ok(Branch::Labeled),
            "unlabeled" | "unlabeled_branch" => Ok(Branch::Unlabeled),
            other => Err(CsslError::Config(format!("unknown branch '{other}'"))),
        }
    }
}

/// Training regime. The first three mirror the usual baselines; `Cssl` is
/// the full three-block objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    /// Single chain, labeled data only.
    Lower,
    /// Single chain, labeled loss plus an entropy-style penalty on unlabeled features.
    Em,
    Cssl,
    /// Single chain trained on labeled and unlabeled data with the true labels.
    Upper,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Lower, Mode::Em, Mode::Cssl, Mode::Upper];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Lower => "Lower",
            Mode::Em => "EM",
            Mode::Cssl => "CSSL",
            Mode::Upper => "Upper",
        }
    }

    /// Lower, EM and Upper train `w_l → w_gamma` only.
    pub fn single_chain(self) -> bool {
        self != Mode::Cssl
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = CsslError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lower" => Ok(Mode::Lower),
            "em" => Ok(Mode::Em),
            "cssl" => Ok(Mode::Cssl),
            "upper" => Ok(Mode::Upper),
            _ => Err(CsslError::Config(format!("unknown mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsslModel {
    pub w_l: ParamBlock,
    pub w_lu: ParamBlock,
    pub w_gamma: ParamBlock,
}

/// Gradients for the three blocks of a [`CsslModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct CsslGrad {
    pub w_l: GradTape,
    pub w_lu: GradTape,
    pub w_gamma: GradTape,
}

impl CsslGrad {
    pub fn zeros_for(model: &CsslModel) -> Self {
        CsslGrad {
            w_l: GradTape::zeros_for(&model.w_l),
            w_lu: GradTape::zeros_for(&model.w_lu),
            w_gamma: GradTape::zeros_for(&model.w_gamma),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w_l.is_finite() && self.w_lu.is_finite() && self.w_gamma.is_finite()
    }
}

struct Pass {
    feat: Trace,
    head: Trace,
}

impl CsslModel {
    /// Feature blocks `in_dim → hidden[0] → … → hidden[last]` with ReLU, and
    /// a single softmax layer `hidden[last] → classes` as the head.
    pub fn new<R: Rng + ?Sized>(
        in_dim: usize,
        hidden: &[usize],
        classes: usize,
        rng: &mut R,
    ) -> Result<Self, CsslError> {
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(CsslError::Config("hidden widths must be non-empty and positive".into()));
        }
        if classes < 2 {
            return Err(CsslError::Config(format!("need at least 2 classes, got {classes}")));
        }
        let mut shape = Vec::with_capacity(hidden.len());
        let mut prev = in_dim;
        for &h in hidden {
            shape.push((prev, h, Activation::ReLU));
            prev = h;
        }
        let w_l = ParamBlock::init(&shape, rng)?;
        let w_lu = ParamBlock::init(&shape, rng)?;
        let w_gamma = ParamBlock::init(&[(prev, classes, Activation::Softmax)], rng)?;
        Self::from_blocks(w_l, w_lu, w_gamma)
    }

    pub fn from_blocks(w_l: ParamBlock, w_lu: ParamBlock, w_gamma: ParamBlock) -> Result<Self, CsslError> {
        let same = w_l.layers().len() == w_lu.layers().len()
            && w_l
                .layers()
                .iter()
                .zip(w_lu.layers())
                .all(|(a, b)| a.weight.shape() == b.weight.shape() && a.activation == b.activation);
        if !same {
            return Err(CsslError::Config("w_l and w_lu must have identical shapes".into()));
        }
        if w_gamma.in_dim() != w_l.out_dim() {
            return Err(CsslError::Config(format!(
                "head expects {} features, blocks produce {}",
                w_gamma.in_dim(),
                w_l.out_dim()
            )));
        }
        if w_gamma.layers().last().map(|l| l.activation) != Some(Activation::Softmax) {
            return Err(CsslError::Config("head must end in softmax".into()));
        }
        if w_l.layers().iter().any(|l| l.activation == Activation::Softmax) {
            return Err(CsslError::Config("feature blocks may not use softmax".into()));
        }
        Ok(CsslModel { w_l, w_lu, w_gamma })
    }

    pub fn in_dim(&self) -> usize {
        self.w_l.in_dim()
    }

    pub fn classes(&self) -> usize {
        self.w_gamma.out_dim()
    }

    pub fn block(&self, branch: Branch) -> &ParamBlock {
        match branch {
            Branch::Labeled => &self.w_l,
            Branch::Unlabeled => &self.w_lu,
        }
    }

    /// Class probabilities, one row per input row.
    pub fn predict(&self, branch: Branch, x: &Matrix) -> Result<Matrix, CsslError> {
        let h = self.block(branch).forward_trace(x)?;
        Ok(self.w_gamma.forward_trace(h.output())?.output().clone())
    }

    pub fn predict_labeled(&self, x: &Matrix) -> Result<Matrix, CsslError> {
        self.predict(Branch::Labeled, x)
    }

    pub fn predict_unlabeled(&self, x: &Matrix) -> Result<Matrix, CsslError> {
        self.predict(Branch::Unlabeled, x)
    }

    fn pass(&self, branch: Branch, x: &Matrix) -> Result<Pass, CsslError> {
        let feat = self.block(branch).forward_trace(x)?;
        let head = self.w_gamma.forward_trace(feat.output())?;
        Ok(Pass { feat, head })
    }

    /// Mean supervised and unsupervised losses of `x` through one branch.
    ///
    /// When `grads` is given, adds the gradient of
    /// `w_sup·mean ℓ + w_unsup·mean ℓ_u` into it. Without labels the
    /// supervised mean is reported as 0.
    fn branch_terms(
        &self,
        branch: Branch,
        x: &Matrix,
        labels: Option<&[usize]>,
        weights: (f64, f64),
        loss: &LossSpec,
        grads: Option<&mut CsslGrad>,
    ) -> Result<(f64, f64), CsslError> {
        let rows = x.rows();
        if rows == 0 {
            return Ok((0.0, 0.0));
        }
        if let Some(y) = labels {
            if y.len() != rows {
                return Err(CsslError::Config(format!("{} labels for {rows} rows", y.len())));
            }
            if let Some(&bad) = y.iter().find(|&&c| c >= self.classes()) {
                return Err(CsslError::Config(format!(
                    "label {bad} outside {} classes",
                    self.classes()
                )));
            }
        }
        let pass = self.pass(branch, x)?;
        let q = self.classes();
        let logits = pass.head.logits();
        let want_grad = grads.is_some();
        let mut dlogits = Matrix::zeros(rows, q);
        let mut g = vec![0.0; q];
        let (mut sup, mut unsup) = (0.0, 0.0);
        let scale = 1.0 / rows as f64;
        for r in 0..rows {
            let z = logits.row(r);
            if let Some(y) = labels {
                sup += logit_loss_grad(loss, z, Target::Label(y[r]), &mut g);
                if want_grad && weights.0 != 0.0 {
                    for (d, gi) in dlogits.row_mut(r).iter_mut().zip(&g) {
                        *d += weights.0 * scale * gi;
                    }
                }
            }
            unsup += logit_loss_grad(loss, z, Target::Unsupervised, &mut g);
            if want_grad && weights.1 != 0.0 {
                for (d, gi) in dlogits.row_mut(r).iter_mut().zip(&g) {
                    *d += weights.1 * scale * gi;
                }
            }
        }
        if let Some(grads) = grads {
            if weights != (0.0, 0.0) {
                let head = self.w_gamma.backward_pre(&pass.head, &dlogits)?;
                grads.w_gamma.add_scaled(&head.tape, 1.0)?;
                let feat = self.block(branch).backward_output(&pass.feat, &head.input_grad)?;
                match branch {
                    Branch::Labeled => grads.w_l.add_scaled(&feat.tape, 1.0)?,
                    Branch::Unlabeled => grads.w_lu.add_scaled(&feat.tape, 1.0)?,
                }
            }
        }
        Ok((sup * scale, unsup * scale))
    }
}

/// Per-term values of one empirical-risk evaluation.
///
/// `weights` are the coefficients that recombine the three terms into
/// `total`; for the semi-supervised objective they are
/// `(β, (1−β)n/(n+m), (1−β)m/(n+m))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskBreakdown {
    /// Supervised risk; for the two-branch objective, the sum over both branches.
    pub supervised: f64,
    /// Mean unsupervised loss of labeled features through `w_l`.
    pub unsupervised_labeled: f64,
    /// Mean unsupervised loss of unlabeled features (through `w_lu` for the
    /// two-branch objective).
    pub unsupervised_unlabeled: f64,
    pub total: f64,
    pub weights: [f64; 3],
}

impl RiskBreakdown {
    pub fn recombine(&self) -> f64 {
        self.weights[0] * self.supervised
            + self.weights[1] * self.unsupervised_labeled
            + self.weights[2] * self.unsupervised_unlabeled
    }

    pub fn is_finite(&self) -> bool {
        self.supervised.is_finite()
            && self.unsupervised_labeled.is_finite()
            && self.unsupervised_unlabeled.is_finite()
            && self.total.is_finite()
    }
}

/// Labeled/unlabeled inputs to a risk evaluation, plus the dataset sizes
/// that set the term weights. Mini-batches pass their full-data sizes here so
/// a batch risk is an unbiased estimate of the full one.
#[derive(Debug, Clone, Copy)]
pub struct RiskInputs<'a> {
    pub labeled_x: &'a Matrix,
    pub labeled_y: &'a [usize],
    pub unlabeled_x: &'a Matrix,
    pub n: usize,
    pub m: usize,
}

impl<'a> RiskInputs<'a> {
    pub fn full(labeled_x: &'a Matrix, labeled_y: &'a [usize], unlabeled_x: &'a Matrix) -> Self {
        RiskInputs {
            labeled_x,
            labeled_y,
            unlabeled_x,
            n: labeled_y.len(),
            m: unlabeled_x.rows(),
        }
    }
}

/// What is being minimized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// `β·L^SL + ramp·(1−β)·L^UL` over both branches; `ramp` is 1 outside
    /// the ramp-up phase of training.
    Ssl { beta: f64, ramp: f64 },
    /// Mean supervised loss through `w_l` only.
    Supervised,
    /// Mean supervised loss plus `λ ×` mean unsupervised loss of unlabeled
    /// features, all through `w_l`.
    Entropy { lambda: f64 },
}

/// The semi-supervised empirical risk and its per-term breakdown.
pub fn ssl_empirical_risk(
    model: &CsslModel,
    labeled_x: &Matrix,
    labeled_y: &[usize],
    unlabeled_x: &Matrix,
    beta: f64,
    loss: &LossSpec,
) -> Result<RiskBreakdown, CsslError> {
    objective(
        model,
        RiskInputs::full(labeled_x, labeled_y, unlabeled_x),
        Objective::Ssl { beta, ramp: 1.0 },
        loss,
        None,
    )
}

/// [`ssl_empirical_risk`] together with its gradient.
pub fn ssl_risk_grad(
    model: &CsslModel,
    inputs: RiskInputs<'_>,
    beta: f64,
    loss: &LossSpec,
) -> Result<(RiskBreakdown, CsslGrad), CsslError> {
    let mut g = CsslGrad::zeros_for(model);
    let r = objective(model, inputs, Objective::Ssl { beta, ramp: 1.0 }, loss, Some(&mut g))?;
    Ok((r, g))
}

/// Evaluates `obj`, accumulating its gradient into `grads` when given.
pub fn objective(
    model: &CsslModel,
    inp: RiskInputs<'_>,
    obj: Objective,
    loss: &LossSpec,
    mut grads: Option<&mut CsslGrad>,
) -> Result<RiskBreakdown, CsslError> {
    let xl = inp.labeled_x;
    let xu = inp.unlabeled_x;
    let yl = Some(inp.labeled_y);
    let n_batch = inp.labeled_y.len();
    if xl.rows() != n_batch {
        return Err(CsslError::Config(format!(
            "{} labeled rows but {n_batch} labels",
            xl.rows()
        )));
    }
    let r = match obj {
        Objective::Ssl { beta, ramp } => {
            if !(0.0..=1.0).contains(&beta) {
                return Err(CsslError::Config(format!("beta must lie in [0,1], got {beta}")));
            }
            if n_batch == 0 && beta > 0.0 {
                return Err(CsslError::Config("empty labeled set with beta > 0".into()));
            }
            let (n, m) = (inp.n as f64, inp.m as f64);
            let (wl, wu) = if n + m > 0.0 {
                (ramp * (1.0 - beta) * n / (n + m), ramp * (1.0 - beta) * m / (n + m))
            } else {
                (0.0, 0.0)
            };
            let (sup_l, ul) = model.branch_terms(Branch::Labeled, xl, yl, (beta, wl), loss, grads.as_deref_mut())?;
            let (sup_lu, _) = model.branch_terms(Branch::Unlabeled, xl, yl, (beta, 0.0), loss, grads.as_deref_mut())?;
            let (_, uu) = model.branch_terms(Branch::Unlabeled, xu, None, (0.0, wu), loss, grads)?;
            RiskBreakdown {
                supervised: sup_l + sup_lu,
                unsupervised_labeled: ul,
                unsupervised_unlabeled: uu,
                total: beta * (sup_l + sup_lu) + wl * ul + wu * uu,
                weights: [beta, wl, wu],
            }
        }
        Objective::Supervised => {
            if n_batch == 0 {
                return Err(CsslError::Config("supervised objective needs labeled data".into()));
            }
            let (sup, ul) = model.branch_terms(Branch::Labeled, xl, yl, (1.0, 0.0), loss, grads)?;
            RiskBreakdown {
                supervised: sup,
                unsupervised_labeled: ul,
                unsupervised_unlabeled: 0.0,
                total: sup,
                weights: [1.0, 0.0, 0.0],
            }
        }
        Objective::Entropy { lambda } => {
            if n_batch == 0 {
                return Err(CsslError::Config("entropy objective needs labeled data".into()));
            }
            if !(lambda >= 0.0 && lambda.is_finite()) {
                return Err(CsslError::Config(format!("lambda must be non-negative, got {lambda}")));
            }
            let (sup, ul) = model.branch_terms(Branch::Labeled, xl, yl, (1.0, 0.0), loss, grads.as_deref_mut())?;
            let (_, uu) = model.branch_terms(Branch::Labeled, xu, None, (0.0, lambda), loss, grads)?;
            RiskBreakdown {
                supervised: sup,
                unsupervised_labeled: ul,
                unsupervised_unlabeled: uu,
                total: sup + lambda * uu,
                weights: [1.0, 0.0, lambda],
            }
        }
    };
    Ok(r)
}
