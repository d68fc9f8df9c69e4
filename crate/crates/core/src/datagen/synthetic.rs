use rand::Rng;
use rand_distr::StandardNormal;

use super::{DataError, Dataset, Provenance};
use crate::losses::ProbVector;
use crate::nn::Matrix;
use crate::seeding;

/// Number of cause features `X_C`.
pub const CAUSE_DIM: usize = 30;
/// Number of effect features `X_E`.
pub const EFFECT_DIM: usize = 20;
pub const FEATURE_DIM: usize = CAUSE_DIM + EFFECT_DIM;

/// Parameters of the causal chain `X_C → Y → X_E`.
///
/// * `X_C ~ ½·N(a1·1, s1·I) + ½·N(−a1·1, s1·I)` in 30 dimensions;
/// * `Y = 1` iff `ε < sigmoid(Σ X_C)` with `ε ~ U(0,1)`;
/// * `X_E = ±a2·1 + N(0, s2·I)` in 20 dimensions, `+` for `Y = 1`.
///
/// `s1` and `s2` are variances, not standard deviations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub a1: f64,
    pub s1: f64,
    pub a2: f64,
    pub s2: f64,
}

impl SynthParams {
    pub fn new(a1: f64, s1: f64, a2: f64, s2: f64) -> Result<Self, DataError> {
        let p = SynthParams { a1, s1, a2, s2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.s1 > 0.0 && self.s1.is_finite()) || !(self.s2 > 0.0 && self.s2.is_finite()) {
            return Err(DataError::Config(format!(
                "variances must be positive (s1={}, s2={})",
                self.s1, self.s2
            )));
        }
        if !self.a1.is_finite() || !self.a2.is_finite() {
            return Err(DataError::Config("means must be finite".into()));
        }
        Ok(())
    }

    pub fn with_a1(self, a1: f64) -> Self {
        SynthParams { a1, ..self }
    }

    /// Exact log-density of the 50-dimensional feature marginal:
    /// `ln p(x_C) + ln Σ_y p(y | x_C) p(x_E | y)`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let (xc, xe) = x.split_at(CAUSE_DIM);
        let lc_plus = iso_gauss_logpdf(xc, self.a1, self.s1);
        let lc_minus = iso_gauss_logpdf(xc, -self.a1, self.s1);
        let log_pc = log_add_exp(lc_plus, lc_minus) + 0.5f64.ln();
        let sum_c: f64 = xc.iter().sum();
        let le1 = iso_gauss_logpdf(xe, self.a2, self.s2) + log_sigmoid(sum_c);
        let le0 = iso_gauss_logpdf(xe, -self.a2, self.s2) + log_sigmoid(-sum_c);
        log_pc + log_add_exp(le1, le0)
    }

    /// Draws one `(features, label)` pair.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) -> usize {
        debug_assert_eq!(out.len(), FEATURE_DIM);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let sd1 = self.s1.sqrt();
        let mut sum_c = 0.0;
        for v in &mut out[..CAUSE_DIM] {
            let z: f64 = rng.sample(StandardNormal);
            *v = sign * self.a1 + sd1 * z;
            sum_c += *v;
        }
        let eps: f64 = rng.random();
        let y = usize::from(eps < sigmoid(sum_c));
        let mean_e = if y == 1 { self.a2 } else { -self.a2 };
        let sd2 = self.s2.sqrt();
        for v in &mut out[CAUSE_DIM..] {
            let z: f64 = rng.sample(StandardNormal);
            *v = mean_e + sd2 * z;
        }
        y
    }
}

pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln sigmoid(t)`, stable for large |t|.
fn log_sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        -(-t).exp().ln_1p()
    } else {
        t - t.exp().ln_1p()
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Log-density of `N(mean·1, var·I)` at `x`.
fn iso_gauss_logpdf(x: &[f64], mean: f64, var: f64) -> f64 {
    let sq: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    -0.5 * sq / var - 0.5 * x.len() as f64 * (2.0 * std::f64::consts::PI * var).ln()
}

/// Draws `count` samples; features are laid out `[X_C (30) | X_E (20)]`.
pub fn gen_synthetic(
    params: &SynthParams,
    count: usize,
    seed: u64,
) -> Result<(Matrix, Vec<usize>), DataError> {
    params.validate()?;
    if count == 0 {
        return Err(DataError::Config("sample count must be at least 1".into()));
    }
    let mut rng = seeding::rng(seed);
    let mut x = Matrix::zeros(count, FEATURE_DIM);
    let mut y = Vec::with_capacity(count);
    for r in 0..count {
        y.push(params.sample(&mut rng, x.row_mut(r)));
    }
    Ok((x, y))
}

/// Exact `P(Y | X_C, X_E)`:
/// `p(y|x_C)·p(x_E|y) / Σ_y' p(y'|x_C)·p(x_E|y')`.
///
/// Depends on `a2`, `s2` and `Σ x_C` only; the cause-side mixture (`a1`,
/// `s1`) cancels, so shifting it leaves the posterior unchanged.
pub fn true_posterior(x: &[f64], params: &SynthParams) -> ProbVector {
    assert_eq!(x.len(), FEATURE_DIM, "expected a {FEATURE_DIM}-dimensional point");
    let (xc, xe) = x.split_at(CAUSE_DIM);
    let sum_c: f64 = xc.iter().sum();
    let l1 = log_sigmoid(sum_c) + iso_gauss_logpdf(xe, params.a2, params.s2);
    let l0 = log_sigmoid(-sum_c) + iso_gauss_logpdf(xe, -params.a2, params.s2);
    let p1 = sigmoid(l1 - l0);
    ProbVector::new(vec![1.0 - p1, p1]).expect("two-class posterior is a valid distribution")
}

/// Labeled set from `labeled`, unlabeled and test sets from `unlabeled` and
/// `test` parameters, each from its own derived seed.
pub fn synthetic_dataset(
    labeled: SynthParams,
    unlabeled: SynthParams,
    test: SynthParams,
    n: usize,
    m: usize,
    n_test: usize,
    seed: u64,
) -> Result<Dataset, DataError> {
    let draw = |p: &SynthParams, count: usize, tag: u64| -> Result<(Matrix, Vec<usize>), DataError> {
        if count == 0 {
            p.validate()?;
            return Ok((Matrix::zeros(0, FEATURE_DIM), Vec::new()));
        }
        gen_synthetic(p, count, seeding::derive(seed, &[tag]))
    };
    let (labeled_x, labeled_y) = draw(&labeled, n, 1)?;
    let (unlabeled_x, unlabeled_y) = draw(&unlabeled, m, 2)?;
    let (test_x, test_y) = draw(&test, n_test, 3)?;
    Ok(Dataset {
        labeled_x,
        labeled_y,
        unlabeled_x,
        unlabeled_y,
        test_x,
        test_y,
        num_classes: 2,
        provenance: Provenance::Synthetic {
            labeled,
            unlabeled,
            test,
        },
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig2a() -> SynthParams {
        SynthParams::new(0.01, 0.05, 0.01, 2.0).unwrap()
    }

    #[test]
    fn large_a1_makes_cause_sum_decisive() {
        let p = fig2a().with_a1(0.8);
        let (x, y) = gen_synthetic(&p, 5000, 11).unwrap();
        let (mut pos, mut pos_y1) = (0usize, 0usize);
        for (row, &label) in x.row_iter().zip(&y) {
            if row[..CAUSE_DIM].iter().sum::<f64>() > 0.0 {
                pos += 1;
                pos_y1 += label;
            }
        }
        assert!(pos > 0);
        assert!(pos_y1 as f64 / pos as f64 >= 0.99);
    }

    #[test]
    fn zero_a1_gives_balanced_labels() {
        let p = fig2a().with_a1(0.0);
        let count = 20000;
        let (_, y) = gen_synthetic(&p, count, 3).unwrap();
        let frac = y.iter().sum::<usize>() as f64 / count as f64;
        assert!((frac - 0.5).abs() <= 3.0 * (0.25 / count as f64).sqrt(), "{frac}");
    }

    #[test]
    fn effect_features_center_on_plus_a2_for_positive_class() {
        let p = SynthParams::new(0.3, 0.05, 0.5, 2.0).unwrap();
        let (x, y) = gen_synthetic(&p, 20000, 5).unwrap();
        let mut sum = 0.0;
        let mut cnt = 0usize;
        for (row, &label) in x.row_iter().zip(&y) {
            if label == 1 {
                sum += row[CAUSE_DIM..].iter().sum::<f64>();
                cnt += EFFECT_DIM;
            }
        }
        let mean = sum / cnt as f64;
        assert!((mean - 0.5).abs() <= 3.0 * (p.s2 / cnt as f64).sqrt(), "{mean}");
    }

    #[test]
    fn generation_is_seeded() {
        let p = fig2a();
        assert_eq!(gen_synthetic(&p, 10, 1).unwrap(), gen_synthetic(&p, 10, 1).unwrap());
        assert_ne!(gen_synthetic(&p, 10, 1).unwrap().0, gen_synthetic(&p, 10, 2).unwrap().0);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(SynthParams::new(0.1, 0.0, 0.1, 1.0).is_err());
        assert!(SynthParams::new(0.1, 1.0, 0.1, -1.0).is_err());
        assert!(gen_synthetic(&fig2a(), 0, 1).is_err());
    }

    #[test]
    fn symmetric_point_has_even_posterior() {
        let p = true_posterior(&[0.0; FEATURE_DIM], &fig2a());
        assert_eq!(p.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn posterior_ignores_cause_mixture() {
        let (x, _) = gen_synthetic(&fig2a().with_a1(0.4), 200, 8).unwrap();
        for row in x.row_iter() {
            let a = true_posterior(row, &fig2a());
            let b = true_posterior(row, &fig2a().with_a1(0.8));
            let c = true_posterior(row, &SynthParams { s1: 3.0, ..fig2a() });
            assert!((a.as_slice()[1] - b.as_slice()[1]).abs() <= 1e-12);
            assert!((a.as_slice()[1] - c.as_slice()[1]).abs() <= 1e-12);
        }
    }

    #[test]
    fn posterior_matches_closed_form_logit() {
        // Independent route: logit = Σx_C + 2·a2·Σx_E / s2.
        let p = SynthParams::new(0.2, 0.1, 0.3, 0.7).unwrap();
        let (x, _) = gen_synthetic(&p, 100, 4).unwrap();
        for row in x.row_iter() {
            let sc: f64 = row[..CAUSE_DIM].iter().sum();
            let se: f64 = row[CAUSE_DIM..].iter().sum();
            let expect = 1.0 / (1.0 + (-(sc + 2.0 * p.a2 * se / p.s2)).exp());
            assert!((true_posterior(row, &p).as_slice()[1] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn posterior_is_calibrated_against_simulation() {
        let p = SynthParams::new(0.05, 0.05, 0.2, 1.0).unwrap();
        let count = 40000;
        let (x, y) = gen_synthetic(&p, count, 21).unwrap();
        let bins = 5;
        let mut hits = vec![0.0; bins];
        let mut mass = vec![0.0; bins];
        let mut n = vec![0usize; bins];
        for (row, &label) in x.row_iter().zip(&y) {
            let q = true_posterior(row, &p).as_slice()[1];
            let b = ((q * bins as f64) as usize).min(bins - 1);
            hits[b] += label as f64;
            mass[b] += q;
            n[b] += 1;
        }
        for b in 0..bins {
            if n[b] < 200 {
                continue;
            }
            let nb = n[b] as f64;
            let emp = hits[b] / nb;
            let pred = mass[b] / nb;
            let se = (pred * (1.0 - pred) / nb).sqrt();
            assert!((emp - pred).abs() <= 4.0 * se, "bin {b}: {emp} vs {pred}");
        }
    }

    #[test]
    fn log_density_matches_direct_product_form() {
        let p = SynthParams::new(0.1, 0.5, 0.2, 1.5).unwrap();
        let (x, _) = gen_synthetic(&p, 5, 2).unwrap();
        let gauss = |v: &[f64], m: f64, var: f64| -> f64 {
            v.iter()
                .map(|t| (-(t - m) * (t - m) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt())
                .product()
        };
        for row in x.row_iter() {
            let (xc, xe) = row.split_at(CAUSE_DIM);
            let s: f64 = xc.iter().sum();
            let pc = 0.5 * gauss(xc, p.a1, p.s1) + 0.5 * gauss(xc, -p.a1, p.s1);
            let pe = sigmoid(s) * gauss(xe, p.a2, p.s2) + sigmoid(-s) * gauss(xe, -p.a2, p.s2);
            assert!((p.log_density(row) - (pc * pe).ln()).abs() < 1e-9);
        }
    }
}
