use rand::seq::SliceRandom;

use super::{DataError, Dataset, Provenance};
use crate::nn::Matrix;
use crate::seeding;

/// Selection-biased split of a digit pool.
///
/// The labeled set takes `low_frac` of its images from digits 0–4 and the
/// rest from 5–9; the unlabeled and test sets reverse the ratio. Indices are
/// drawn without replacement, so the three sets are disjoint. Hidden
/// unlabeled labels are kept for the upper-bound baseline only.
pub fn mnist_bias_sample(
    x: &Matrix,
    y: &[usize],
    n_labeled: usize,
    m_unlabeled: usize,
    n_test: usize,
    low_frac: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if !(0.0..=1.0).contains(&low_frac) {
        return Err(DataError::Config(format!("low_frac must lie in [0,1], got {low_frac}")));
    }
    if x.rows() != y.len() {
        return Err(DataError::Config(format!("{} images but {} labels", x.rows(), y.len())));
    }
    let mut rng = seeding::rng(seed);
    let mut low: Vec<usize> = (0..y.len()).filter(|&i| y[i] <= 4).collect();
    let mut high: Vec<usize> = (0..y.len()).filter(|&i| y[i] >= 5).collect();
    low.shuffle(&mut rng);
    high.shuffle(&mut rng);

    let split = |total: usize| -> usize { (low_frac * total as f64).round() as usize };
    let l_low = split(n_labeled);
    let l_high = n_labeled - l_low;
    let u_high = split(m_unlabeled);
    let u_low = m_unlabeled - u_high;
    let t_high = split(n_test);
    let t_low = n_test - t_high;

    let need_low = l_low + u_low + t_low;
    let need_high = l_high + u_high + t_high;
    if need_low > low.len() || need_high > high.len() {
        return Err(DataError::Config(format!(
            "pool too small: need {need_low} images of digits 0-4 (have {}) and {need_high} of 5-9 (have {})",
            low.len(),
            high.len()
        )));
    }

    let mut low_it = low.into_iter();
    let mut high_it = high.into_iter();
    let mut take = |n_low: usize, n_high: usize| -> Vec<usize> {
        let mut idx: Vec<usize> = low_it.by_ref().take(n_low).chain(high_it.by_ref().take(n_high)).collect();
        idx.shuffle(&mut rng);
        idx
    };
    let lab = take(l_low, l_high);
    let unl = take(u_low, u_high);
    let tst = take(t_low, t_high);
    let pick = |idx: &[usize]| idx.iter().map(|&i| y[i]).collect::<Vec<_>>();

    Ok(Dataset {
        labeled_x: x.select_rows(&lab),
        labeled_y: pick(&lab),
        unlabeled_x: x.select_rows(&unl),
        unlabeled_y: pick(&unl),
        test_x: x.select_rows(&tst),
        test_y: pick(&tst),
        num_classes: 10,
        provenance: Provenance::Mnist { low_frac },
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 4000 fake one-pixel "images" whose pixel value encodes the source index.
    fn pool() -> (Matrix, Vec<usize>) {
        let n = 4000;
        let x = Matrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        let y = (0..n).map(|i| i % 10).collect();
        (x, y)
    }

    #[test]
    fn ninety_ten_split_of_labeled_set() {
        let (x, y) = pool();
        let d = mnist_bias_sample(&x, &y, 1000, 1000, 200, 0.9, 1).unwrap();
        let low = d.labeled_y.iter().filter(|&&v| v <= 4).count();
        assert_eq!(low, 900);
        assert_eq!(d.labeled_y.len() - low, 100);
        let u_high = d.unlabeled_y.iter().filter(|&&v| v >= 5).count();
        assert_eq!(u_high, 900);
        assert_eq!(d.test_y.iter().filter(|&&v| v >= 5).count(), 180);
    }

    #[test]
    fn half_split_has_no_group_shift() {
        let (x, y) = pool();
        let d = mnist_bias_sample(&x, &y, 400, 400, 0, 0.5, 2).unwrap();
        let lab = d.labeled_y.iter().filter(|&&v| v <= 4).count();
        let unl = d.unlabeled_y.iter().filter(|&&v| v <= 4).count();
        assert_eq!(lab, 200);
        assert_eq!(unl, 200);
    }

    #[test]
    fn sets_are_disjoint_and_seeded() {
        let (x, y) = pool();
        let a = mnist_bias_sample(&x, &y, 300, 600, 100, 0.9, 3).unwrap();
        let b = mnist_bias_sample(&x, &y, 300, 600, 100, 0.9, 3).unwrap();
        assert_eq!(a.labeled_x, b.labeled_x);
        assert_eq!(a.unlabeled_x, b.unlabeled_x);
        let mut seen = std::collections::HashSet::new();
        for m in [&a.labeled_x, &a.unlabeled_x, &a.test_x] {
            for r in m.row_iter() {
                assert!(seen.insert(r[0] as usize), "index {} reused", r[0]);
            }
        }
        // pixel value encodes the source index, so labels must follow it
        for (r, &label) in a.labeled_x.row_iter().zip(&a.labeled_y) {
            assert_eq!(r[0] as usize % 10, label);
        }
    }

    #[test]
    fn insufficient_pool_is_config_error() {
        let (x, y) = pool();
        assert!(matches!(
            mnist_bias_sample(&x, &y, 100, 3000, 0, 0.9, 4),
            Err(DataError::Config(_))
        ));
        assert!(mnist_bias_sample(&x, &y, 10, 10, 0, 1.5, 4).is_err());
    }
}
