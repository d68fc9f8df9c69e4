//! Discrete information measures, the generalization-bound formulas, and an
//! exhaustive finite-world oracle that checks them.

mod bounds;
mod mc;
mod toy;

use std::fmt;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::losses::LossError;

pub use bounds::{
    bound_estimation_gap, bound_finite_class, bound_mi_shift, bound_tv_shift, delta_bound_kl,
    delta_bound_tv, rate_balanced, rate_mixed, BoundInputs, BoundReport,
};
pub use mc::{mc_kl, mc_kl_gaussian_mixture, Density, GaussianMixture, McEstimate, Sampler};
pub use toy::{
    toy_enumerate, toy_population_risk, toy_risk_mc, LossTable, ToyAlgorithm, ToyAnalysis, ToyProblem,
    ToyWorld, ENUMERATION_LIMIT,
};

/// Tolerance on probability sums.
pub const SUM_TOL: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum InfoError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("enumeration needs {states} states, limit is {limit}")]
    TooLarge { states: u128, limit: u128 },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// A non-negative quantity that may be `+∞`, e.g. a KL divergence without
/// absolute continuity. Arithmetic follows measure-theory conventions:
/// `0·∞ = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtReal {
    Finite(f64),
    Infinite,
}

impl ExtReal {
    pub const ZERO: ExtReal = ExtReal::Finite(0.0);

    pub fn is_finite(self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtReal::Finite(v) => Some(v),
            ExtReal::Infinite => None,
        }
    }

    /// `f64` view; `+∞` maps to `f64::INFINITY`.
    pub fn to_f64(self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }

    pub fn add(self, other: ExtReal) -> ExtReal {
        match (self, other) {
            (ExtReal::Finite(a), ExtReal::Finite(b)) => ExtReal::Finite(a + b),
            _ => ExtReal::Infinite,
        }
    }

    /// Multiplication by a non-negative scalar, with `0·∞ = 0`.
    pub fn scale(self, c: f64) -> ExtReal {
        debug_assert!(c >= 0.0);
        match self {
            _ if c == 0.0 => ExtReal::ZERO,
            ExtReal::Finite(v) => ExtReal::Finite(c * v),
            ExtReal::Infinite => ExtReal::Infinite,
        }
    }

    pub fn sqrt(self) -> ExtReal {
        match self {
            ExtReal::Finite(v) => ExtReal::Finite(v.max(0.0).sqrt()),
            ExtReal::Infinite => ExtReal::Infinite,
        }
    }

    /// `value ≤ self + tol`.
    pub fn dominates(self, value: f64, tol: f64) -> bool {
        match self {
            ExtReal::Finite(b) => value <= b + tol,
            ExtReal::Infinite => true,
        }
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::Finite(v) => write!(f, "{v}"),
            ExtReal::Infinite => f.write_str("inf"),
        }
    }
}

impl From<f64> for ExtReal {
    fn from(v: f64) -> Self {
        if v.is_finite() {
            ExtReal::Finite(v)
        } else {
            ExtReal::Infinite
        }
    }
}

/// Probability mass function on `{0, …, k−1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDist {
    probs: Vec<f64>,
}

impl DiscreteDist {
    pub fn new(probs: Vec<f64>) -> Result<Self, InfoError> {
        if probs.is_empty() {
            return Err(InfoError::Invalid("empty distribution".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(InfoError::Invalid(format!("entry {p} is not a probability")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(InfoError::Invalid(format!("probabilities sum to {sum}")));
        }
        Ok(DiscreteDist { probs })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self, InfoError> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0 && sum.is_finite()) || weights.iter().any(|w| *w < 0.0) {
            return Err(InfoError::Invalid(format!("cannot normalize weights {weights:?}")));
        }
        DiscreteDist::new(weights.iter().map(|w| w / sum).collect())
    }

    pub fn uniform(k: usize) -> Self {
        DiscreteDist {
            probs: vec![1.0 / k as f64; k],
        }
    }

    pub fn point(k: usize, at: usize) -> Self {
        let mut probs = vec![0.0; k];
        probs[at] = 1.0;
        DiscreteDist { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        WeightedIndex::new(&self.probs)
            .expect("validated distribution")
            .sample(rng)
    }
}

/// Joint mass function on `{0..rows} × {0..cols}`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDist {
    rows: usize,
    cols: usize,
    probs: Vec<f64>,
}

impl JointDist {
    pub fn new(rows: usize, cols: usize, probs: Vec<f64>) -> Result<Self, InfoError> {
        if rows == 0 || cols == 0 || probs.len() != rows * cols {
            return Err(InfoError::Invalid(format!(
                "{} entries for a {rows}x{cols} table",
                probs.len()
            )));
        }
        DiscreteDist::new(probs.clone())?;
        Ok(JointDist { rows, cols, probs })
    }

    /// Skips validation; for tables built internally by exact summation.
    pub(crate) fn from_raw(rows: usize, cols: usize, probs: Vec<f64>) -> Self {
        debug_assert_eq!(probs.len(), rows * cols);
        JointDist { rows, cols, probs }
    }

    pub fn product(a: &DiscreteDist, b: &DiscreteDist) -> Self {
        let probs = a
            .probs
            .iter()
            .flat_map(|&p| b.probs.iter().map(move |&q| p * q))
            .collect();
        JointDist {
            rows: a.len(),
            cols: b.len(),
            probs,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.probs[r * self.cols + c]
    }

    pub fn row_marginal(&self) -> Vec<f64> {
        self.probs.chunks(self.cols).map(|r| r.iter().sum()).collect()
    }

    pub fn col_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for row in self.probs.chunks(self.cols) {
            for (o, p) in out.iter_mut().zip(row) {
                *o += p;
            }
        }
        out
    }
}

fn same_support(p: &DiscreteDist, q: &DiscreteDist) -> Result<(), InfoError> {
    if p.len() != q.len() {
        return Err(InfoError::Invalid(format!(
            "support sizes differ: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    Ok(())
}

/// `Σ p ln(p/q)` over raw slices; `+∞` when some `p > 0` meets `q = 0`.
pub(crate) fn kl_slices(p: &[f64], q: &[f64]) -> ExtReal {
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return ExtReal::Infinite;
            }
            acc += pi * (pi / qi).ln();
        }
    }
    ExtReal::Finite(acc.max(0.0))
}

pub(crate) fn tv_slices(p: &[f64], q: &[f64]) -> f64 {
    let l1: f64 = p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum();
    (0.5 * l1).min(1.0)
}

/// `D(P‖Q)` in nats.
pub fn kl_discrete(p: &DiscreteDist, q: &DiscreteDist) -> Result<ExtReal, InfoError> {
    same_support(p, q)?;
    Ok(kl_slices(&p.probs, &q.probs))
}

/// Half the L1 distance.
pub fn tv_discrete(p: &DiscreteDist, q: &DiscreteDist) -> Result<f64, InfoError> {
    same_support(p, q)?;
    Ok(tv_slices(&p.probs, &q.probs))
}

/// Shannon entropy in nats.
pub fn entropy_discrete(p: &DiscreteDist) -> f64 {
    -p.probs.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// `I(Z;T) = D(P_{Z,T} ‖ P_Z ⊗ P_T)`; rounding noise below zero is clipped.
pub fn mutual_information(j: &JointDist) -> f64 {
    let pr = j.row_marginal();
    let pc = j.col_marginal();
    let mut acc = 0.0;
    for (r, row) in j.probs.chunks(j.cols).enumerate() {
        for (c, &p) in row.iter().enumerate() {
            if p > 0.0 {
                acc += p * (p / (pr[r] * pc[c])).ln();
            }
        }
    }
    acc.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    fn d(v: &[f64]) -> DiscreteDist {
        DiscreteDist::new(v.to_vec()).unwrap()
    }

    #[test]
    fn kl_examples() {
        let p = d(&[0.2, 0.3, 0.5]);
        assert_eq!(kl_discrete(&p, &p).unwrap(), ExtReal::ZERO);
        let v = kl_discrete(&d(&[1.0, 0.0]), &d(&[0.5, 0.5])).unwrap().finite().unwrap();
        assert!((v - LN_2).abs() < 1e-15);
        assert_eq!(kl_discrete(&d(&[0.5, 0.5]), &d(&[1.0, 0.0])).unwrap(), ExtReal::Infinite);
        assert!(kl_discrete(&d(&[1.0]), &d(&[0.5, 0.5])).is_err());
    }

    #[test]
    fn tv_examples() {
        let p = d(&[0.7, 0.3]);
        assert_eq!(tv_discrete(&p, &p).unwrap(), 0.0);
        assert_eq!(tv_discrete(&d(&[1.0, 0.0]), &d(&[0.0, 1.0])).unwrap(), 1.0);
        assert!((tv_discrete(&p, &d(&[0.4, 0.6])).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn mi_examples() {
        let a = d(&[0.3, 0.7]);
        let b = d(&[0.1, 0.6, 0.3]);
        assert!(mutual_information(&JointDist::product(&a, &b)) < 1e-15);
        let diag = JointDist::new(2, 2, vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        assert!((mutual_information(&diag) - LN_2).abs() < 1e-15);
    }

    #[test]
    fn ext_real_arithmetic() {
        assert_eq!(ExtReal::Infinite.scale(0.0), ExtReal::ZERO);
        assert_eq!(ExtReal::Infinite.scale(2.0), ExtReal::Infinite);
        assert_eq!(ExtReal::Finite(1.0).add(ExtReal::Infinite), ExtReal::Infinite);
        assert_eq!(ExtReal::Finite(4.0).sqrt(), ExtReal::Finite(2.0));
        assert!(ExtReal::Infinite.dominates(1e300, 0.0));
        assert!(!ExtReal::Finite(1.0).dominates(1.1, 0.0));
        assert_eq!(ExtReal::Infinite.to_string(), "inf");
        assert_eq!(ExtReal::from(f64::INFINITY), ExtReal::Infinite);
    }

    #[test]
    fn rejects_bad_distributions() {
        assert!(DiscreteDist::new(vec![]).is_err());
        assert!(DiscreteDist::new(vec![0.5, 0.6]).is_err());
        assert!(DiscreteDist::new(vec![-0.1, 1.1]).is_err());
        assert!(JointDist::new(2, 2, vec![0.5, 0.5]).is_err());
    }

    fn weights(k: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, k).prop_filter("non-zero", |w| w.iter().sum::<f64>() > 1e-3)
    }

    proptest! {
        #[test]
        fn measures_are_in_range(a in weights(4), b in weights(4)) {
            let p = DiscreteDist::from_weights(&a).unwrap();
            let q = DiscreteDist::from_weights(&b).unwrap();
            if let ExtReal::Finite(v) = kl_discrete(&p, &q).unwrap() {
                prop_assert!(v >= 0.0);
            }
            let t = tv_discrete(&p, &q).unwrap();
            prop_assert!((0.0..=1.0).contains(&t));
            // Pinsker.
            if let ExtReal::Finite(v) = kl_discrete(&p, &q).unwrap() {
                prop_assert!(t <= (v / 2.0).sqrt() + 1e-12);
            }
        }

        #[test]
        fn mi_bounded_by_marginal_entropies(w in weights(12)) {
            let total: f64 = w.iter().sum();
            let j = JointDist::new(3, 4, w.iter().map(|v| v / total).collect()).unwrap();
            let mi = mutual_information(&j);
            let hr = entropy_discrete(&DiscreteDist::from_weights(&j.row_marginal()).unwrap());
            let hc = entropy_discrete(&DiscreteDist::from_weights(&j.col_marginal()).unwrap());
            prop_assert!(mi >= 0.0);
            prop_assert!(mi <= hr.min(hc) + 1e-12);
        }
    }
}
