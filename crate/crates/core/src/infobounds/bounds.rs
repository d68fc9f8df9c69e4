use super::{ExtReal, InfoError};

/// Everything the bound formulas consume. Informations and divergences are
/// in nats.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    pub n: usize,
    pub m: usize,
    pub beta: f64,
    pub sigma_l: f64,
    pub sigma_c: f64,
    pub sigma_u: f64,
    pub l_l: f64,
    pub l_u: f64,
    /// `I(W; X^L, Y^L)`.
    pub mi_wxy: f64,
    /// `I(W; X^L)`.
    pub mi_wxl: f64,
    /// `I(W; X^U)`.
    pub mi_wxu: f64,
    /// `D(μ_l ‖ μ_u)`.
    pub kl_shift: ExtReal,
    /// `TV(μ_l, μ_u)`.
    pub tv_shift: f64,
    /// `E_{P_W⊗μ_u}[ℓ_c − ℓ_u]`.
    pub delta_ssl: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<(), InfoError> {
        let bad = |what: &str, v: f64| Err(InfoError::Invalid(format!("{what} = {v}")));
        if self.n == 0 {
            return Err(InfoError::Invalid("n must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad("beta", self.beta);
        }
        for (name, v) in [
            ("sigma_l", self.sigma_l),
            ("sigma_c", self.sigma_c),
            ("sigma_u", self.sigma_u),
            ("l_l", self.l_l),
            ("l_u", self.l_u),
            ("mi_wxy", self.mi_wxy),
            ("mi_wxl", self.mi_wxl),
            ("mi_wxu", self.mi_wxu),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(name, v);
            }
        }
        if let ExtReal::Finite(k) = self.kl_shift {
            if !(k >= 0.0 && k.is_finite()) {
                return bad("kl_shift", k);
            }
        }
        if !(0.0..=1.0).contains(&self.tv_shift) {
            return bad("tv_shift", self.tv_shift);
        }
        if !self.delta_ssl.is_finite() {
            return bad("delta_ssl", self.delta_ssl);
        }
        Ok(())
    }

    fn weights(&self) -> (f64, f64, f64) {
        let (n, m) = (self.n as f64, self.m as f64);
        let rest = 1.0 - self.beta;
        (self.beta, n * rest / (n + m), m * rest / (n + m))
    }
}

/// One bound evaluation, term by term.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub supervised_term: ExtReal,
    pub labeled_unsup_term: ExtReal,
    pub unlabeled_term: ExtReal,
    pub delta_term: ExtReal,
    pub total: ExtReal,
    /// Exact generalization error, when the world is enumerable.
    pub exact_gen: Option<f64>,
}

impl BoundReport {
    fn from_terms(terms: [ExtReal; 4]) -> Self {
        let total = terms.iter().fold(ExtReal::ZERO, |a, &t| a.add(t));
        BoundReport {
            supervised_term: terms[0],
            labeled_unsup_term: terms[1],
            unlabeled_term: terms[2],
            delta_term: terms[3],
            total,
            exact_gen: None,
        }
    }

    pub fn terms(&self) -> [ExtReal; 4] {
        [
            self.supervised_term,
            self.labeled_unsup_term,
            self.unlabeled_term,
            self.delta_term,
        ]
    }

    /// `|exact_gen| ≤ total + tol`; `None` without an exact value.
    pub fn holds(&self, tol: f64) -> Option<bool> {
        self.exact_gen.map(|g| self.total.dominates(g.abs(), tol))
    }

    pub const CSV_HEADER: &'static str = "supervised_term,labeled_unsup_term,unlabeled_term,delta_term,total,exact_gen";

    pub fn csv_row(&self) -> String {
        let gen = self.exact_gen.map(|g| g.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            self.supervised_term, self.labeled_unsup_term, self.unlabeled_term, self.delta_term, self.total, gen
        )
    }
}

/// `√(2σ²·I/k + 2σ²·D)`.
fn mi_shift_root(sigma: f64, mi: f64, k: usize, shift: ExtReal) -> ExtReal {
    let s2 = 2.0 * sigma * sigma;
    ExtReal::Finite(s2 * mi / k as f64).add(shift.scale(s2)).sqrt()
}

fn unlabeled_root(sigma: f64, mi: f64, m: usize) -> ExtReal {
    if m == 0 {
        return ExtReal::ZERO;
    }
    ExtReal::Finite((2.0 * sigma * sigma * mi / m as f64).sqrt())
}

fn mi_shift_terms(inp: &BoundInputs, sigma_unsup: f64) -> [ExtReal; 3] {
    let (ws, wl, wu) = inp.weights();
    [
        mi_shift_root(inp.sigma_l, inp.mi_wxy, inp.n, inp.kl_shift).scale(ws),
        mi_shift_root(sigma_unsup, inp.mi_wxl, inp.n, inp.kl_shift).scale(wl),
        unlabeled_root(sigma_unsup, inp.mi_wxu, inp.m).scale(wu),
    ]
}

/// Mutual-information bound with a KL shift penalty, for the unsupervised
/// risk built from `ℓ_c`. Infinite when `D(μ_l‖μ_u)` is.
pub fn bound_mi_shift(inp: &BoundInputs) -> Result<BoundReport, InfoError> {
    inp.validate()?;
    let [a, b, c] = mi_shift_terms(inp, inp.sigma_c);
    Ok(BoundReport::from_terms([a, b, c, ExtReal::ZERO]))
}

/// The same shape with `σ_u`, plus `(1−β)|Δ^SSL|` for training on `ℓ_u`.
pub fn bound_estimation_gap(inp: &BoundInputs) -> Result<BoundReport, InfoError> {
    inp.validate()?;
    let [a, b, c] = mi_shift_terms(inp, inp.sigma_u);
    let delta = ExtReal::Finite((1.0 - inp.beta) * inp.delta_ssl.abs());
    Ok(BoundReport::from_terms([a, b, c, delta]))
}

/// Bounded-loss variant with the shift measured in total variation; always
/// finite.
pub fn bound_tv_shift(inp: &BoundInputs) -> Result<BoundReport, InfoError> {
    inp.validate()?;
    let (ws, wl, wu) = inp.weights();
    let (n, m) = (inp.n as f64, inp.m as f64);
    let sup = (inp.l_l * inp.l_l * inp.mi_wxy / (2.0 * n)).sqrt() + 2.0 * inp.l_l * inp.tv_shift;
    let lab = (inp.l_u * inp.l_u * inp.mi_wxl / (2.0 * n)).sqrt() + 2.0 * inp.l_u * inp.tv_shift;
    let unl = if inp.m == 0 {
        0.0
    } else {
        (inp.l_u * inp.l_u * inp.mi_wxu / (2.0 * m)).sqrt()
    };
    let delta = (1.0 - inp.beta) * inp.delta_ssl.abs();
    Ok(BoundReport::from_terms([
        ExtReal::Finite(ws * sup),
        ExtReal::Finite(wl * lab),
        ExtReal::Finite(wu * unl),
        ExtReal::Finite(delta),
    ]))
}

/// `|Δ^SSL| ≤ √(2σ_u²·D(P̂‖P | P_W⊗μ_u))`.
pub fn delta_bound_kl(sigma_u: f64, kl_cond: ExtReal) -> ExtReal {
    kl_cond.scale(2.0 * sigma_u * sigma_u).sqrt()
}

/// `|Δ^SSL| ≤ 2·L_u·E[TV(P̂, P)]`.
pub fn delta_bound_tv(l_u: f64, tv_cond: f64) -> f64 {
    2.0 * l_u * tv_cond
}

/// Bound for a hypothesis class of size `k` without shift, where `ε` bounds
/// the conditional estimation error (`|Δ^SSL| ≤ √(2σ_u²)·ε`).
pub fn bound_finite_class(n: usize, m: usize, beta: f64, sigma_l: f64, sigma_u: f64, k: usize, eps: f64) -> f64 {
    let lnk = (k.max(1) as f64).ln();
    let sup = beta * (2.0 * sigma_l * sigma_l * lnk / n as f64).sqrt();
    let unsup = (1.0 - beta) * (2.0 * sigma_u * sigma_u).sqrt() * ((lnk / (n + m) as f64).sqrt() + eps);
    sup + unsup
}

/// Order of the bound for general β: `β/√n + (1−β)/√(n+m)`.
pub fn rate_mixed(beta: f64, n: usize, m: usize) -> f64 {
    beta / (n as f64).sqrt() + (1.0 - beta) / ((n + m) as f64).sqrt()
}

/// Order of the bound at `β = n/(n+m)`: `max(√n/(n+m), m/(n+m)^{3/2})`.
pub fn rate_balanced(n: usize, m: usize) -> f64 {
    let (n, t) = (n as f64, (n + m) as f64);
    (n.sqrt() / t).max(m as f64 / t.powf(1.5))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs() -> BoundInputs {
        BoundInputs {
            n: 10,
            m: 30,
            beta: 0.3,
            sigma_l: 0.5,
            sigma_c: 0.5,
            sigma_u: 0.5,
            l_l: 1.0,
            l_u: 1.0,
            mi_wxy: 0.4,
            mi_wxl: 0.2,
            mi_wxu: 0.3,
            kl_shift: ExtReal::Finite(0.05),
            tv_shift: 0.1,
            delta_ssl: 0.0,
        }
    }

    fn close(a: ExtReal, b: f64) -> bool {
        (a.finite().unwrap() - b).abs() < 1e-14
    }

    #[test]
    fn mi_shift_hand_evaluation() {
        let r = bound_mi_shift(&inputs()).unwrap();
        // 2σ² = 0.5.
        assert!(close(r.supervised_term, 0.3 * (0.5 * 0.4 / 10.0 + 0.5 * 0.05f64).sqrt()));
        assert!(close(r.labeled_unsup_term, 0.25 * 0.7 * (0.5 * 0.2 / 10.0 + 0.5 * 0.05f64).sqrt()));
        assert!(close(r.unlabeled_term, 0.75 * 0.7 * (0.5 * 0.3 / 30.0f64).sqrt()));
        assert_eq!(r.delta_term, ExtReal::ZERO);
    }

    #[test]
    fn total_is_sum_of_terms() {
        for f in [bound_mi_shift, bound_estimation_gap, bound_tv_shift] {
            let mut inp = inputs();
            inp.delta_ssl = -0.07;
            let r = f(&inp).unwrap();
            let sum: f64 = r.terms().iter().map(|t| t.finite().unwrap()).sum();
            assert!((r.total.finite().unwrap() - sum).abs() <= 1e-12);
        }
    }

    #[test]
    fn beta_one_keeps_only_supervised_term() {
        let mut inp = inputs();
        inp.beta = 1.0;
        inp.delta_ssl = 0.4;
        for f in [bound_mi_shift, bound_estimation_gap, bound_tv_shift] {
            let r = f(&inp).unwrap();
            assert_eq!(r.labeled_unsup_term, ExtReal::ZERO);
            assert_eq!(r.unlabeled_term, ExtReal::ZERO);
            assert_eq!(r.delta_term, ExtReal::ZERO);
            assert_eq!(r.total, r.supervised_term);
        }
    }

    #[test]
    fn zero_information_and_shift_gives_zero() {
        let inp = BoundInputs {
            mi_wxy: 0.0,
            mi_wxl: 0.0,
            mi_wxu: 0.0,
            kl_shift: ExtReal::ZERO,
            tv_shift: 0.0,
            ..inputs()
        };
        assert_eq!(bound_mi_shift(&inp).unwrap().total, ExtReal::ZERO);
        assert_eq!(bound_tv_shift(&inp).unwrap().total, ExtReal::ZERO);
    }

    #[test]
    fn infinite_shift_is_vacuous_except_tv() {
        let inp = BoundInputs {
            kl_shift: ExtReal::Infinite,
            ..inputs()
        };
        assert_eq!(bound_mi_shift(&inp).unwrap().total, ExtReal::Infinite);
        assert!(bound_tv_shift(&inp).unwrap().total.is_finite());
        // 0·∞ = 0: with β = 0 the supervised slot stays finite.
        let r = bound_mi_shift(&BoundInputs { beta: 0.0, ..inp }).unwrap();
        assert_eq!(r.supervised_term, ExtReal::ZERO);
    }

    #[test]
    fn estimation_gap_matches_mi_shift_without_gap() {
        let a = bound_mi_shift(&inputs()).unwrap();
        let b = bound_estimation_gap(&inputs()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn estimation_gap_monotone_in_delta() {
        let mut last = 0.0;
        for d in [0.0, 0.01, 0.1, 0.5, 2.0] {
            let t = bound_estimation_gap(&BoundInputs {
                delta_ssl: d,
                ..inputs()
            })
            .unwrap()
            .total
            .finite()
            .unwrap();
            assert!(t >= last);
            last = t;
        }
    }

    #[test]
    fn estimation_gap_without_shift() {
        // No shift: the KL slots vanish and only the information terms remain.
        let inp = BoundInputs {
            kl_shift: ExtReal::ZERO,
            ..inputs()
        };
        let r = bound_estimation_gap(&inp).unwrap();
        let s2 = 2.0 * 0.25;
        assert!(close(r.supervised_term, 0.3 * (s2 * 0.4 / 10.0f64).sqrt()));
        assert!(close(r.labeled_unsup_term, 0.25 * 0.7 * (s2 * 0.2 / 10.0f64).sqrt()));
    }

    #[test]
    fn tv_shift_hand_values() {
        let inp = BoundInputs {
            beta: 1.0,
            mi_wxy: 0.0,
            tv_shift: 1.0,
            l_l: 1.7,
            ..inputs()
        };
        assert!(close(bound_tv_shift(&inp).unwrap().total, 2.0 * 1.7));
    }

    #[test]
    fn delta_bounds_vanish_at_zero() {
        assert_eq!(delta_bound_kl(0.5, ExtReal::ZERO), ExtReal::ZERO);
        assert_eq!(delta_bound_tv(1.0, 0.0), 0.0);
        assert_eq!(delta_bound_kl(0.5, ExtReal::Infinite), ExtReal::Infinite);
    }

    #[test]
    fn finite_class_single_hypothesis() {
        let b = bound_finite_class(5, 7, 0.4, 0.5, 0.5, 1, 0.2);
        assert!((b - 0.6 * (0.5f64).sqrt() * 0.2).abs() < 1e-15);
    }

    #[test]
    fn rates() {
        // Supervised limit: 1/√n.
        for n in [1, 4, 100] {
            assert!((rate_balanced(n, 0) - 1.0 / (n as f64).sqrt()).abs() < 1e-15);
        }
        let mut last = f64::INFINITY;
        for m in (50..2000).step_by(50) {
            let r = rate_balanced(20, m);
            assert!(r < last, "not decreasing at m={m}");
            last = r;
        }
        assert!((rate_mixed(1.0, 4, 12) - 0.5).abs() < 1e-15);
        assert!((rate_mixed(0.0, 4, 12) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn validation() {
        assert!(bound_mi_shift(&BoundInputs { n: 0, ..inputs() }).is_err());
        assert!(bound_mi_shift(&BoundInputs { beta: 1.5, ..inputs() }).is_err());
        assert!(bound_mi_shift(&BoundInputs { mi_wxl: -1.0, ..inputs() }).is_err());
        assert!(bound_mi_shift(&BoundInputs { tv_shift: 1.2, ..inputs() }).is_err());
    }

    #[test]
    fn csv_row_shape() {
        let mut r = bound_mi_shift(&BoundInputs {
            kl_shift: ExtReal::Infinite,
            ..inputs()
        })
        .unwrap();
        r.exact_gen = Some(0.125);
        let row = r.csv_row();
        assert_eq!(row.split(',').count(), BoundReport::CSV_HEADER.split(',').count());
        assert!(row.ends_with(",inf,0.125"));
    }
}
