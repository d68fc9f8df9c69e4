//! Supervised loss families and the unsupervised losses derived from them.
//!
//! Every supervised loss `ℓ(p̂, y)` depends on the predicted probability of
//! the labelled class only. The unsupervised loss is its expectation under the
//! model's own prediction, `ℓ_u(p̂) = Σ_j p̂_j ℓ(p̂, j)`; with the log loss this
//! is the Shannon entropy of `p̂`. The pseudo-label family instead scores only
//! the most confident class, `−ln max_j p̂_j`, and uses the log loss as its
//! supervised loss.
//!
//! The squared log loss is `(−ln p̂_y)²`, which is non-negative.
//!
//! All logarithms are natural. Probabilities inside logarithms are clamped
//! from below at [`P_MIN`], which keeps every loss finite.

use std::fmt;
use std::str::FromStr;

/// Lower clamp applied to probabilities inside log terms.
pub const P_MIN: f64 = 1e-12;

fn ln_p_min() -> f64 {
    P_MIN.ln()
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LossError {
    #[error("alpha-loss needs alpha in (0, inf) and alpha != 1, got {0}")]
    BadAlpha(f64),
    #[error("invalid probability vector: {0}")]
    BadProbs(String),
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("unknown loss family '{0}'")]
    UnknownFamily(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossFamily {
    LogLoss,
    SquaredLogLoss,
    AlphaLoss,
    PseudoLabel,
}

/// A loss family and its parameter.
#[derive(Debug, Clone, Copy)]
pub struct LossSpec {
    family: LossFamily,
    alpha: f64,
}

impl PartialEq for LossSpec {
    fn eq(&self, other: &Self) -> bool {
        self.family == other.family && self.alpha() == other.alpha()
    }
}

impl LossSpec {
    pub const fn log_loss() -> Self {
        LossSpec {
            family: LossFamily::LogLoss,
            alpha: f64::NAN,
        }
    }

    pub const fn squared_log_loss() -> Self {
        LossSpec {
            family: LossFamily::SquaredLogLoss,
            alpha: f64::NAN,
        }
    }

    pub const fn pseudo_label() -> Self {
        LossSpec {
            family: LossFamily::PseudoLabel,
            alpha: f64::NAN,
        }
    }

    /// α-loss. α = 1 is the log loss in the limit and is rejected; use
    /// [`LossSpec::log_loss`] instead.
    pub fn alpha_loss(alpha: f64) -> Result<Self, LossError> {
        if !(alpha > 0.0 && alpha.is_finite()) || alpha == 1.0 {
            return Err(LossError::BadAlpha(alpha));
        }
        Ok(LossSpec {
            family: LossFamily::AlphaLoss,
            alpha,
        })
    }

    pub fn family(&self) -> LossFamily {
        self.family
    }

    pub fn alpha(&self) -> Option<f64> {
        (self.family == LossFamily::AlphaLoss).then_some(self.alpha)
    }

    /// Value and derivative of the per-class loss as a function of `ln p̂`.
    /// The derivative is zero where the clamp is active.
    fn pointwise(&self, lp: f64) -> (f64, f64) {
        let floor = ln_p_min();
        let (lpc, active) = if lp < floor { (floor, false) } else { (lp, true) };
        let (v, d) = match self.family {
            LossFamily::LogLoss | LossFamily::PseudoLabel => (-lpc, -1.0),
            LossFamily::SquaredLogLoss => (lpc * lpc, 2.0 * lpc),
            LossFamily::AlphaLoss => {
                let a = self.alpha;
                let e = ((1.0 - 1.0 / a) * lpc).exp();
                // d/dlp [a/(a−1)·(1 − e^{(1−1/a)lp})] = −e^{(1−1/a)lp}
                ((a / (a - 1.0)) * (1.0 - e), -e)
            }
        };
        (v.max(0.0), if active { d } else { 0.0 })
    }
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec::log_loss()
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            LossFamily::LogLoss => write!(f, "log"),
            LossFamily::SquaredLogLoss => write!(f, "squared_log"),
            LossFamily::PseudoLabel => write!(f, "pseudo_label"),
            LossFamily::AlphaLoss => write!(f, "alpha:{}", self.alpha),
        }
    }
}

impl FromStr for LossSpec {
    type Err = LossError;

    /// Accepts `log`, `squared_log`, `pseudo_label` and `alpha:<value>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "log" => Ok(LossSpec::log_loss()),
            "squared_log" => Ok(LossSpec::squared_log_loss()),
            "pseudo_label" => Ok(LossSpec::pseudo_label()),
            _ => match s.strip_prefix("alpha:") {
                Some(a) => {
                    let a: f64 = a
                        .parse()
                        .map_err(|_| LossError::UnknownFamily(s.to_string()))?;
                    LossSpec::alpha_loss(a)
                }
                None => Err(LossError::UnknownFamily(s.to_string())),
            },
        }
    }
}

/// Predicted class distribution `P̂(·|w, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self, LossError> {
        if probs.len() < 2 {
            return Err(LossError::BadProbs(format!(
                "need at least two classes, got {}",
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(LossError::BadProbs(format!("entry {p} is not a probability")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(LossError::BadProbs(format!("entries sum to {sum}")));
        }
        Ok(ProbVector(probs))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }

    fn check_label(&self, label: usize) -> Result<(), LossError> {
        if label >= self.0.len() {
            return Err(LossError::BadLabel {
                label,
                classes: self.0.len(),
            });
        }
        Ok(())
    }
}

fn clamped_ln(p: f64) -> f64 {
    p.max(P_MIN).ln()
}

/// `ℓ(p̂, y)`. The pseudo-label family scores labels with the log loss.
pub fn supervised_loss(spec: &LossSpec, p_hat: &ProbVector, label: usize) -> Result<f64, LossError> {
    p_hat.check_label(label)?;
    Ok(spec.pointwise(clamped_ln(p_hat.0[label])).0)
}

/// `ℓ_u(p̂)`: the expectation of `ℓ` under `p̂`, or `−ln max p̂` for pseudo-labels.
pub fn unsupervised_loss(spec: &LossSpec, p_hat: &ProbVector) -> f64 {
    match spec.family {
        LossFamily::PseudoLabel => {
            let max = p_hat.0.iter().copied().fold(0.0, f64::max);
            -clamped_ln(max)
        }
        _ => p_hat
            .0
            .iter()
            .map(|&p| p * spec.pointwise(clamped_ln(p)).0)
            .sum(),
    }
}

/// `ℓ_c = Σ_j P(y_j|x) ℓ(p̂, y_j)`: expected loss under the true conditional.
/// Only computable with oracle access to `p_true`.
pub fn conditional_expected_loss(
    spec: &LossSpec,
    p_true: &ProbVector,
    p_hat: &ProbVector,
) -> Result<f64, LossError> {
    if p_true.classes() != p_hat.classes() {
        return Err(LossError::BadProbs(format!(
            "class count mismatch: {} vs {}",
            p_true.classes(),
            p_hat.classes()
        )));
    }
    Ok(p_true
        .0
        .iter()
        .zip(&p_hat.0)
        .map(|(&t, &p)| t * spec.pointwise(clamped_ln(p)).0)
        .sum())
}

/// What a logit row is scored against.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    /// Supervised loss on a known label.
    Label(usize),
    /// The unsupervised loss of the prediction itself.
    Unsupervised,
    /// Expected supervised loss under a given distribution (ℓ_c with oracle probabilities).
    Expected(&'a [f64]),
}

/// Loss of one row of logits and its gradient w.r.t. those logits.
///
/// Log-probabilities come from log-sum-exp, never from the log of a softmax.
/// `grad` must have the same length as `logits` and is overwritten.
pub fn logit_loss_grad(spec: &LossSpec, logits: &[f64], target: Target<'_>, grad: &mut [f64]) -> f64 {
    debug_assert_eq!(logits.len(), grad.len());
    let lp = crate::nn::log_softmax(logits);
    let p: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
    // First accumulate dℓ/d(ln p̂), then map through d ln p̂_i / dz_k = δ_ik − p̂_k.
    grad.iter_mut().for_each(|g| *g = 0.0);
    let value = match target {
        Target::Label(y) => {
            let (v, d) = spec.pointwise(lp[y]);
            grad[y] = d;
            v
        }
        Target::Expected(t) => {
            let mut v = 0.0;
            for j in 0..lp.len() {
                let (f, d) = spec.pointwise(lp[j]);
                v += t[j] * f;
                grad[j] = t[j] * d;
            }
            v
        }
        Target::Unsupervised => match spec.family {
            LossFamily::PseudoLabel => {
                let j = crate::nn::argmax(&lp);
                let (v, d) = spec.pointwise(lp[j]);
                grad[j] = d;
                v
            }
            _ => {
                let mut v = 0.0;
                for j in 0..lp.len() {
                    let (f, d) = spec.pointwise(lp[j]);
                    v += p[j] * f;
                    grad[j] = p[j] * (f + d);
                }
                v
            }
        },
    };
    let total: f64 = grad.iter().sum();
    for (g, pk) in grad.iter_mut().zip(&p) {
        *g -= pk * total;
    }
    value
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn shannon_entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn perfect_prediction_costs_nothing() {
        assert_eq!(supervised_loss(&LossSpec::log_loss(), &pv(&[0.0, 1.0]), 1).unwrap(), 0.0);
        assert_eq!(unsupervised_loss(&LossSpec::log_loss(), &pv(&[1.0, 0.0])), 0.0);
    }

    #[test]
    fn alpha_two_at_quarter() {
        let s = LossSpec::alpha_loss(2.0).unwrap();
        let l = supervised_loss(&s, &pv(&[0.75, 0.25]), 1).unwrap();
        assert!((l - 1.0).abs() < 1e-15);
    }

    #[test]
    fn alpha_near_one_approaches_log_loss() {
        let s = LossSpec::alpha_loss(1.0 + 1e-6).unwrap();
        for i in 1..=9 {
            let p = i as f64 / 10.0;
            let probs = pv(&[p, 1.0 - p]);
            let a = supervised_loss(&s, &probs, 0).unwrap();
            assert!((a + p.ln()).abs() < 1e-4, "p={p}: {a} vs {}", -p.ln());
        }
    }

    #[test]
    fn entropy_examples() {
        let s = LossSpec::log_loss();
        assert!((unsupervised_loss(&s, &pv(&[0.5, 0.5])) - 2f64.ln()).abs() < 1e-15);
        // −(0.5 ln 0.5 + 0.3 ln 0.3 + 0.2 ln 0.2) = 1.0296530140645737
        let h = unsupervised_loss(&s, &pv(&[0.5, 0.3, 0.2]));
        assert!((h - 1.0296530140645737).abs() < 1e-12);
        assert!((h - 1.0297).abs() < 5e-5);
    }

    #[test]
    fn pseudo_label_uses_max_class() {
        let l = unsupervised_loss(&LossSpec::pseudo_label(), &pv(&[0.9, 0.1]));
        assert_eq!(l, -(0.9f64).ln());
        assert!((l - 0.1054).abs() < 1e-4);
    }

    #[test]
    fn conditional_expectation_examples() {
        let s = LossSpec::log_loss();
        let hat = pv(&[0.5, 0.5]);
        let l = conditional_expected_loss(&s, &pv(&[0.7, 0.3]), &hat).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        let p = pv(&[0.2, 0.3, 0.5]);
        assert_eq!(
            conditional_expected_loss(&s, &p, &p).unwrap(),
            unsupervised_loss(&s, &p)
        );
        let one_hot = pv(&[0.0, 0.0, 1.0]);
        assert_eq!(
            conditional_expected_loss(&s, &one_hot, &p).unwrap(),
            supervised_loss(&s, &p, 2).unwrap()
        );
    }

    #[test]
    fn zero_probability_is_clamped_not_infinite() {
        let l = supervised_loss(&LossSpec::log_loss(), &pv(&[1.0, 0.0]), 1).unwrap();
        assert_eq!(l, -P_MIN.ln());
        let sq = supervised_loss(&LossSpec::squared_log_loss(), &pv(&[1.0, 0.0]), 1).unwrap();
        assert!(sq.is_finite());
    }

    #[test]
    fn construction_errors() {
        assert_eq!(LossSpec::alpha_loss(1.0), Err(LossError::BadAlpha(1.0)));
        assert!(LossSpec::alpha_loss(0.0).is_err());
        assert!(LossSpec::alpha_loss(-2.0).is_err());
        assert!(ProbVector::new(vec![1.0]).is_err());
        assert!(ProbVector::new(vec![0.6, 0.6]).is_err());
        assert!(ProbVector::new(vec![-0.1, 1.1]).is_err());
        assert!(matches!(
            supervised_loss(&LossSpec::log_loss(), &pv(&[0.5, 0.5]), 2),
            Err(LossError::BadLabel { .. })
        ));
    }

    #[test]
    fn spec_strings_round_trip() {
        for s in ["log", "squared_log", "pseudo_label", "alpha:2.5", "alpha:0.5"] {
            let spec: LossSpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
        }
        assert!("hinge".parse::<LossSpec>().is_err());
        assert!("alpha:1".parse::<LossSpec>().is_err());
    }

    fn specs() -> Vec<LossSpec> {
        vec![
            LossSpec::log_loss(),
            LossSpec::squared_log_loss(),
            LossSpec::alpha_loss(0.5).unwrap(),
            LossSpec::alpha_loss(3.0).unwrap(),
            LossSpec::pseudo_label(),
        ]
    }

    #[test]
    fn logit_gradients_match_central_differences() {
        let logits = [0.3, -1.2, 0.8, 0.1];
        let truth = [0.1, 0.2, 0.3, 0.4];
        for spec in specs() {
            for target in [Target::Label(2), Target::Unsupervised, Target::Expected(&truth)] {
                let mut g = vec![0.0; 4];
                logit_loss_grad(&spec, &logits, target, &mut g);
                let mut scratch = vec![0.0; 4];
                for k in 0..4 {
                    let h = 1e-6;
                    let mut up = logits;
                    up[k] += h;
                    let mut dn = logits;
                    dn[k] -= h;
                    let fd = (logit_loss_grad(&spec, &up, target, &mut scratch)
                        - logit_loss_grad(&spec, &dn, target, &mut scratch))
                        / (2.0 * h);
                    assert!((fd - g[k]).abs() < 1e-7, "{spec} {target:?} k={k}: {fd} vs {}", g[k]);
                }
            }
        }
    }

    #[test]
    fn logit_values_agree_with_probability_api() {
        let logits = [0.5, -0.5, 1.5];
        let lp = crate::nn::log_softmax(&logits);
        let p = pv(&lp.iter().map(|v| v.exp()).collect::<Vec<_>>());
        let mut g = vec![0.0; 3];
        for spec in specs() {
            let u = logit_loss_grad(&spec, &logits, Target::Unsupervised, &mut g);
            assert!((u - unsupervised_loss(&spec, &p)).abs() < 1e-12);
            let s = logit_loss_grad(&spec, &logits, Target::Label(1), &mut g);
            assert!((s - supervised_loss(&spec, &p, 1).unwrap()).abs() < 1e-12);
        }
    }

    fn prob_vec() -> impl Strategy<Value = ProbVector> {
        prop::collection::vec(0.0f64..1.0, 2..8).prop_filter_map("positive mass", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-6).then(|| ProbVector::new(v.iter().map(|x| x / s).collect()).ok())?
        })
    }

    proptest! {
        #[test]
        fn entropy_reduction_identity(p in prob_vec()) {
            let u = unsupervised_loss(&LossSpec::log_loss(), &p);
            prop_assert!((u - shannon_entropy(p.as_slice())).abs() <= 1e-12);
        }

        #[test]
        fn unsupervised_is_expected_supervised(p in prob_vec(), alpha in 0.1f64..5.0) {
            let mut fams = vec![LossSpec::log_loss(), LossSpec::squared_log_loss()];
            if (alpha - 1.0).abs() > 1e-3 {
                fams.push(LossSpec::alpha_loss(alpha).unwrap());
            }
            for spec in fams {
                let direct: f64 = (0..p.classes())
                    .map(|j| p.as_slice()[j] * supervised_loss(&spec, &p, j).unwrap())
                    .sum();
                prop_assert!((unsupervised_loss(&spec, &p) - direct).abs() <= 1e-12);
            }
        }

        #[test]
        fn losses_are_non_negative(p in prob_vec(), alpha in 0.1f64..5.0) {
            let mut fams = specs();
            if (alpha - 1.0).abs() > 1e-3 {
                fams.push(LossSpec::alpha_loss(alpha).unwrap());
            }
            for spec in fams {
                prop_assert!(unsupervised_loss(&spec, &p) >= 0.0);
                for j in 0..p.classes() {
                    prop_assert!(supervised_loss(&spec, &p, j).unwrap() >= 0.0);
                }
            }
        }

        #[test]
        fn delta_structure(seed_hat in prob_vec(), noise in prop::collection::vec(0.0f64..1.0, 8)) {
            let q = seed_hat.classes();
            let raw: Vec<f64> = noise[..q].iter().map(|x| x + 1e-3).collect();
            let s: f64 = raw.iter().sum();
            let truth = ProbVector::new(raw.iter().map(|x| x / s).collect()).unwrap();
            for spec in [LossSpec::log_loss(), LossSpec::squared_log_loss(), LossSpec::alpha_loss(2.0).unwrap()] {
                let gap = conditional_expected_loss(&spec, &truth, &seed_hat).unwrap()
                    - unsupervised_loss(&spec, &seed_hat);
                let direct: f64 = (0..q)
                    .map(|j| (truth.as_slice()[j] - seed_hat.as_slice()[j])
                        * supervised_loss(&spec, &seed_hat, j).unwrap())
                    .sum();
                prop_assert!((gap - direct).abs() <= 1e-10);
                let same = conditional_expected_loss(&spec, &seed_hat, &seed_hat).unwrap()
                    - unsupervised_loss(&spec, &seed_hat);
                prop_assert!(same.abs() <= 1e-12);
            }
        }
    }
}
