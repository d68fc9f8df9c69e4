//! Invariant suites shared by `cssl verify` and the acceptance tests.

use std::time::Instant;

use cssl_core::cssl::{ssl_empirical_risk, ssl_risk_grad, CsslModel, RiskInputs};
use cssl_core::datagen::{true_posterior, SynthParams, CAUSE_DIM, FEATURE_DIM};
use cssl_core::infobounds::{
    toy_population_risk, toy_risk_mc, DiscreteDist, ExtReal, ToyAlgorithm, ToyProblem, ToyWorld,
};
use cssl_core::losses::{unsupervised_loss, LossSpec, ProbVector};
use cssl_core::nn::{finite_diff_grad, max_relative_error, Activation, Matrix};
use cssl_core::seeding;
use rand::Rng;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub secs: f64,
}

impl CheckOutcome {
    pub fn line(&self) -> String {
        format!(
            "{} {} ({:.2}s): {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.secs,
            self.detail
        )
    }
}

fn timed(name: &'static str, f: impl FnOnce() -> Result<String, String>) -> CheckOutcome {
    let start = Instant::now();
    let r = f();
    let secs = start.elapsed().as_secs_f64();
    let (passed, detail) = match r {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    CheckOutcome {
        name,
        passed,
        detail,
        secs,
    }
}

fn random_dist(rng: &mut seeding::Rng, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| -rng.random_range(f64::EPSILON..1.0f64).ln()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Log-loss unsupervised loss against `−Σ p ln p` and the pseudo-label form
/// against `−ln max p`, on `count` random distributions.
pub fn reduction_identities(count: usize, seed: u64) -> CheckOutcome {
    timed("reduction identities", || {
        let mut rng = seeding::rng(seed);
        let (log, pl) = (LossSpec::log_loss(), LossSpec::pseudo_label());
        let mut worst: f64 = 0.0;
        for i in 0..count {
            let k = rng.random_range(2..=10);
            let p = random_dist(&mut rng, k);
            let entropy: f64 = -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>();
            let pv = ProbVector::new(p.clone()).map_err(|e| e.to_string())?;
            worst = worst.max((unsupervised_loss(&log, &pv) - entropy).abs());
            let max = p.iter().copied().fold(0.0, f64::max);
            let got = unsupervised_loss(&pl, &pv);
            if got != -max.ln() {
                return Err(format!("distribution {i}: pseudo-label loss {got} != {}", -max.ln()));
            }
        }
        if worst > 1e-12 {
            return Err(format!("log-loss entropy deviation {worst:e} > 1e-12"));
        }
        Ok(format!("{count} distributions, max entropy deviation {worst:.1e}, pseudo-label exact"))
    })
}

fn loss_family(i: usize) -> LossSpec {
    match i % 5 {
        0 => LossSpec::log_loss(),
        1 => LossSpec::squared_log_loss(),
        2 => LossSpec::alpha_loss(2.0).expect("valid alpha"),
        3 => LossSpec::alpha_loss(0.6).expect("valid alpha"),
        _ => LossSpec::pseudo_label(),
    }
}

fn random_matrix(rng: &mut seeding::Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect();
    Matrix::from_vec(rows, cols, data).expect("shape matches data")
}

/// Smallest distance to a point where the risk is not differentiable: a ReLU
/// pre-activation at zero, or (for the pseudo-label loss) a tie for the
/// largest predicted probability. Central differences are meaningless there.
fn kink_margin(model: &CsslModel, inputs: &[&Matrix], pseudo: bool) -> f64 {
    let mut margin = f64::INFINITY;
    for block in [&model.w_l, &model.w_lu] {
        for x in inputs {
            let mut cur: Matrix = (*x).clone();
            for layer in block.layers().iter().chain(model.w_gamma.layers()) {
                let mut z = cur.matmul(&layer.weight).expect("chained shapes");
                for r in 0..z.rows() {
                    for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                        *v += b;
                    }
                }
                match layer.activation {
                    Activation::ReLU => {
                        for v in z.as_mut_slice() {
                            margin = margin.min(v.abs());
                            *v = v.max(0.0);
                        }
                    }
                    Activation::Softmax if pseudo => {
                        for row in z.row_iter() {
                            let mut sorted = row.to_vec();
                            sorted.sort_by(|a, b| b.total_cmp(a));
                            margin = margin.min(sorted[0] - sorted[1]);
                        }
                    }
                    _ => {}
                }
                cur = z;
            }
        }
    }
    margin
}

/// Reverse-mode gradient of the semi-supervised risk against central
/// differences on `triples` random (architecture, loss, batch) draws. Draws
/// within 1e-3 of a non-differentiable point are redrawn.
pub fn gradient_audit(triples: usize, seed: u64) -> CheckOutcome {
    timed("gradient audit", || {
        let mut worst: f64 = 0.0;
        let mut redrawn = 0;
        for t in 0..triples {
            let loss = loss_family(t);
            let pseudo = loss == LossSpec::pseudo_label();
            let mut attempt = 0u64;
            let (model, xl, yl, xu, beta, desc) = loop {
                let mut rng = seeding::rng(seeding::derive(seed, &[t as u64, attempt]));
                attempt += 1;
                let d = rng.random_range(2..=5);
                let q = rng.random_range(2..=4);
                let depth = rng.random_range(1..=3);
                let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..=6)).collect();
                let n = rng.random_range(1..=6);
                let m = rng.random_range(0..=6);
                let beta = rng.random_range(0.0..=1.0);
                let mut model = CsslModel::new(d, &hidden, q, &mut rng).map_err(|e| e.to_string())?;
                // Zero-initialized biases park units fed by dead ReLUs exactly on
                // the kink; jitter every parameter.
                for block in [&mut model.w_l, &mut model.w_lu, &mut model.w_gamma] {
                    for i in 0..block.param_count() {
                        *block.param_mut(i) += rng.random_range(-0.1..0.1);
                    }
                }
                let xl = random_matrix(&mut rng, n, d);
                let yl: Vec<usize> = (0..n).map(|_| rng.random_range(0..q)).collect();
                let xu = random_matrix(&mut rng, m, d);
                if kink_margin(&model, &[&xl, &xu], pseudo) < 1e-3 {
                    redrawn += 1;
                    continue;
                }
                let desc = format!("d={d}, hidden={hidden:?}, q={q}, n={n}, m={m}, beta={beta:.3}, {loss}");
                break (model, xl, yl, xu, beta, desc);
            };

            let (_, g) = ssl_risk_grad(&model, RiskInputs::full(&xl, &yl, &xu), beta, &loss).map_err(|e| e.to_string())?;
            let risk = |mdl: &CsslModel| {
                ssl_empirical_risk(mdl, &xl, &yl, &xu, beta, &loss)
                    .map(|r| r.total)
                    .unwrap_or(f64::NAN)
            };
            let h = 1e-5;
            let fd_l = finite_diff_grad(|b| risk(&CsslModel { w_l: b.clone(), ..model.clone() }), &model.w_l, h);
            let fd_lu = finite_diff_grad(|b| risk(&CsslModel { w_lu: b.clone(), ..model.clone() }), &model.w_lu, h);
            let fd_g = finite_diff_grad(|b| risk(&CsslModel { w_gamma: b.clone(), ..model.clone() }), &model.w_gamma, h);
            let err = [
                max_relative_error(&g.w_l, &fd_l, 1e-6),
                max_relative_error(&g.w_lu, &fd_lu, 1e-6),
                max_relative_error(&g.w_gamma, &fd_g, 1e-6),
            ]
            .into_iter()
            .fold(0.0, f64::max);
            if !(err <= 1e-4) {
                return Err(format!("triple {t} ({desc}): relative error {err:e}"));
            }
            worst = worst.max(err);
        }
        Ok(format!(
            "{triples} triples ({redrawn} redrawn near kinks), max relative error {worst:.1e}"
        ))
    })
}

/// Fixed three-point world with equal feature marginals on both sides.
pub fn unbiasedness_problem() -> ToyProblem {
    let d = |v: Vec<f64>| DiscreteDist::new(v).expect("valid distribution");
    let mu = d(vec![0.2, 0.5, 0.3]);
    ToyProblem {
        world: ToyWorld {
            mu_l: mu.clone(),
            mu_u: mu,
            p_y_given_x: vec![d(vec![0.9, 0.1]), d(vec![0.4, 0.6]), d(vec![0.15, 0.85])],
            p_hat: vec![
                vec![d(vec![0.7, 0.3]), d(vec![0.5, 0.5]), d(vec![0.2, 0.8])],
                vec![d(vec![0.3, 0.7]), d(vec![0.6, 0.4]), d(vec![0.9, 0.1])],
            ],
            loss_table: None,
            algorithm: ToyAlgorithm::Erm,
        },
        n: 2,
        m: 3,
        beta: 0.4,
        loss: LossSpec::log_loss(),
    }
}

/// Monte-Carlo mean of the empirical semi-supervised risk (with the
/// conditional expected loss on unlabeled points) against the exact
/// population risk, for every hypothesis of the fixed world.
pub fn unbiasedness(datasets: usize, seed: u64) -> CheckOutcome {
    timed("unbiasedness", || {
        let p = unbiasedness_problem();
        let mut detail = Vec::new();
        for w in 0..p.world.p_hat.len() {
            let e = toy_risk_mc(&p, w, datasets, seeding::derive(seed, &[w as u64])).map_err(|e| e.to_string())?;
            let exact = toy_population_risk(&p.world, &p.loss, w).map_err(|e| e.to_string())?;
            let z = (e.mean - exact).abs() / e.stderr;
            let msg = format!("w={w}: mc {:.6} exact {exact:.6} ({z:.2} SE)", e.mean);
            if !(z <= 3.0) {
                return Err(msg);
            }
            detail.push(msg);
        }
        Ok(format!("{datasets} datasets; {}", detail.join("; ")))
    })
}

/// Exact enumeration on `worlds` random toy problems: every bound holds and
/// the KL decomposition identity is exact to 1e-10.
pub fn bound_validity(worlds: usize, seed: u64) -> CheckOutcome {
    timed("bound validity", || {
        let mut checked = 0;
        let mut worst_identity: f64 = 0.0;
        for w in 0..worlds {
            let s = seeding::derive(seed, &[w as u64]);
            let a = ToyProblem::random(s).enumerate().map_err(|e| format!("world {w}: {e}"))?;
            let v = a.violations(1e-12);
            if !v.is_empty() {
                return Err(format!("world {w} (seed {s}): {}", v.join("; ")));
            }
            checked += 3 + 2 + usize::from(a.finite_class.is_some());
            match (a.shift_divergence, a.decomposition_rhs()) {
                (ExtReal::Finite(l), ExtReal::Finite(r)) => worst_identity = worst_identity.max((l - r).abs()),
                (l, r) if l == r => {}
                (l, r) => return Err(format!("world {w}: decomposition {l} vs {r}")),
            }
        }
        if worst_identity > 1e-10 {
            return Err(format!("decomposition identity off by {worst_identity:e}"));
        }
        Ok(format!(
            "{worlds} worlds, {checked} bound checks, 0 violations, identity error {worst_identity:.1e}"
        ))
    })
}

fn gauss_logpdf(x: &[f64], mean: f64, var: f64) -> f64 {
    let sq: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    -0.5 * sq / var - 0.5 * x.len() as f64 * (2.0 * std::f64::consts::PI * var).ln()
}

fn ln_sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        -(-t).exp().ln_1p()
    } else {
        t - t.exp().ln_1p()
    }
}

/// `p(x, y) / p(x)` from the full joint, including the cause mixture that
/// depends on `a1`; the marginal comes from the library density.
fn posterior_from_joint(x: &[f64], p: &SynthParams) -> [f64; 2] {
    let (xc, xe) = x.split_at(CAUSE_DIM);
    let lp = gauss_logpdf(xc, p.a1, p.s1);
    let lm = gauss_logpdf(xc, -p.a1, p.s1);
    let hi = lp.max(lm);
    let log_pc = hi + ((lp - hi).exp() + (lm - hi).exp()).ln() + 0.5f64.ln();
    let t: f64 = xc.iter().sum();
    let marginal = p.log_density(x);
    let joint = |y: usize| {
        let (sign, mean) = if y == 1 { (1.0, p.a2) } else { (-1.0, -p.a2) };
        log_pc + ln_sigmoid(sign * t) + gauss_logpdf(xe, mean, p.s2)
    };
    [(joint(0) - marginal).exp(), (joint(1) - marginal).exp()]
}

/// `P(Y|X)` of the synthetic generator does not depend on `a1`: the
/// posterior computed from each shifted joint matches the closed form.
pub fn posterior_invariance(a1s: &[f64], points: usize, seed: u64) -> CheckOutcome {
    timed("posterior invariance", || {
        if a1s.len() < 2 {
            return Err("need at least two values of a1".into());
        }
        let base = SynthParams::new(0.01, 0.05, 0.01, 2.0).map_err(|e| e.to_string())?;
        let mut rng = seeding::rng(seed);
        let mut worst: f64 = 0.0;
        let mut x = vec![0.0; FEATURE_DIM];
        for i in 0..points {
            // Half the points from the generator itself, half spread wider.
            if i % 2 == 0 {
                base.with_a1(a1s[i / 2 % a1s.len()]).sample(&mut rng, &mut x);
            } else {
                x.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
            }
            let closed = true_posterior(&x, &base);
            for &a1 in a1s {
                let joint = posterior_from_joint(&x, &base.with_a1(a1));
                for (a, b) in joint.iter().zip(closed.as_slice()) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
        if worst > 1e-12 {
            return Err(format!("posterior moves by {worst:e} across a1"));
        }
        Ok(format!("{points} points x {} shifts, max deviation {worst:.1e}", a1s.len()))
    })
}

/// Suite sizes used by `cssl verify`.
pub fn quick_suite(seed: u64) -> Vec<CheckOutcome> {
    vec![
        reduction_identities(10_000, seed),
        gradient_audit(100, seed),
        unbiasedness(20_000, seed),
        bound_validity(200, seed),
        posterior_invariance(&[0.0, 0.01, 0.03, 0.3, 0.8, 1.2], 1000, seed),
    ]
}
