//! Finite worlds in which every quantity in the bounds can be computed exactly.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use super::bounds::{
    bound_estimation_gap, bound_finite_class, bound_mi_shift, bound_tv_shift, delta_bound_kl, delta_bound_tv,
    BoundInputs, BoundReport,
};
use super::mc::McEstimate;
use super::{kl_discrete, kl_slices, mutual_information, tv_discrete, tv_slices, DiscreteDist, ExtReal, InfoError, JointDist};
use crate::losses::{supervised_loss, unsupervised_loss, LossFamily, LossSpec, ProbVector};
use crate::nn::argmax;
use crate::seeding;

/// Largest `|X|^n·|Y|^n·|X|^m·|W|` that [`toy_enumerate`] accepts.
pub const ENUMERATION_LIMIT: u128 = 10_000_000;

/// Explicit loss values `ℓ(w, x, y)`, indexed `[w][x][y]`, all in `[0, bound]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTable {
    pub values: Vec<Vec<Vec<f64>>>,
    pub bound: f64,
}

/// How a toy learner turns a sample into a distribution over hypotheses.
#[derive(Debug, Clone, PartialEq)]
pub enum ToyAlgorithm {
    /// Ignores the data.
    Constant(DiscreteDist),
    /// Point mass on the minimizer of the empirical risk; ties go to the
    /// lowest index.
    Erm,
    /// `P(w | s) ∝ exp(−L_E(w, s)/τ)`.
    Gibbs { tau: f64 },
    /// Arbitrary data dependence: the row for sample tuple `t` is a
    /// Dirichlet(`concentration`) draw seeded by `(seed, t)`.
    RandomTable { seed: u64, concentration: f64 },
}

impl ToyAlgorithm {
    fn to_text(&self) -> String {
        match self {
            ToyAlgorithm::Constant(d) => format!("constant:{}", join(d.probs())),
            ToyAlgorithm::Erm => "erm".into(),
            ToyAlgorithm::Gibbs { tau } => format!("gibbs:{tau}"),
            ToyAlgorithm::RandomTable { seed, concentration } => format!("random:{seed}:{concentration}"),
        }
    }

    fn parse(s: &str) -> Result<Self, String> {
        let mut parts = s.splitn(2, ':');
        let head = parts.next().unwrap_or("").trim();
        let rest = parts.next().map(str::trim);
        match (head, rest) {
            ("erm", None) => Ok(ToyAlgorithm::Erm),
            ("gibbs", Some(t)) => Ok(ToyAlgorithm::Gibbs { tau: parse_f64(t)? }),
            ("constant", Some(p)) => DiscreteDist::new(parse_list(p)?)
                .map(ToyAlgorithm::Constant)
                .map_err(|e| e.to_string()),
            ("random", Some(r)) => {
                let (seed, conc) = r.split_once(':').ok_or("expected random:<seed>:<concentration>")?;
                Ok(ToyAlgorithm::RandomTable {
                    seed: seed.trim().parse().map_err(|_| format!("bad seed '{seed}'"))?,
                    concentration: parse_f64(conc)?,
                })
            }
            _ => Err(format!("unknown algorithm '{s}'")),
        }
    }
}

/// Feature, label and hypothesis spaces with their distributions.
///
/// `p_hat[w][x]` is the predicted label distribution of hypothesis `w` at
/// `x`. Without an explicit `loss_table`, losses are derived from `p_hat`
/// through the loss family.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyWorld {
    pub mu_l: DiscreteDist,
    pub mu_u: DiscreteDist,
    pub p_y_given_x: Vec<DiscreteDist>,
    pub p_hat: Vec<Vec<DiscreteDist>>,
    pub loss_table: Option<LossTable>,
    pub algorithm: ToyAlgorithm,
}

impl ToyWorld {
    pub fn x_size(&self) -> usize {
        self.mu_l.len()
    }

    pub fn y_size(&self) -> usize {
        self.p_y_given_x.first().map_or(0, DiscreteDist::len)
    }

    pub fn w_size(&self) -> usize {
        self.p_hat.len()
    }

    pub fn validate(&self) -> Result<(), InfoError> {
        let (xs, ys, ws) = (self.x_size(), self.y_size(), self.w_size());
        let bad = |msg: String| Err(InfoError::Invalid(msg));
        if self.mu_u.len() != xs || self.p_y_given_x.len() != xs {
            return bad(format!("feature distributions disagree on |X| = {xs}"));
        }
        if ys < 2 || self.p_y_given_x.iter().any(|d| d.len() != ys) {
            return bad("every conditional needs the same label count, at least 2".into());
        }
        if ws == 0 || self.p_hat.iter().any(|row| row.len() != xs || row.iter().any(|d| d.len() != ys)) {
            return bad("p_hat must be |W| rows of |X| label distributions".into());
        }
        if let Some(t) = &self.loss_table {
            if !(t.bound >= 0.0 && t.bound.is_finite()) {
                return bad(format!("loss bound {}", t.bound));
            }
            let shaped = t.values.len() == ws
                && t.values.iter().all(|r| r.len() == xs && r.iter().all(|c| c.len() == ys));
            if !shaped {
                return bad("loss table must be indexed [w][x][y]".into());
            }
            if t.values.iter().flatten().flatten().any(|v| !(0.0..=t.bound).contains(v)) {
                return bad(format!("loss values must lie in [0, {}]", t.bound));
            }
        }
        match &self.algorithm {
            ToyAlgorithm::Constant(d) if d.len() != ws => bad(format!("constant algorithm has {} entries, |W| = {ws}", d.len())),
            ToyAlgorithm::Gibbs { tau } if !(*tau > 0.0 && tau.is_finite()) => bad(format!("temperature {tau}")),
            ToyAlgorithm::RandomTable { concentration, .. } if !(*concentration > 0.0 && concentration.is_finite()) => {
                bad(format!("concentration {concentration}"))
            }
            _ => Ok(()),
        }
    }
}

/// A world together with sample sizes, β and the loss family.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyProblem {
    pub world: ToyWorld,
    pub n: usize,
    pub m: usize,
    pub beta: f64,
    pub loss: LossSpec,
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_f64(s: &str) -> Result<f64, String> {
    s.trim().parse().map_err(|_| format!("bad number '{}'", s.trim()))
}

fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',').map(parse_f64).collect()
}

fn random_simplex<R: Rng + ?Sized>(rng: &mut R, k: usize, zero_chance: f64) -> DiscreteDist {
    loop {
        let w: Vec<f64> = (0..k)
            .map(|_| if rng.random::<f64>() < zero_chance { 0.0 } else { -rng.random::<f64>().max(1e-300).ln() })
            .collect();
        if let Ok(d) = DiscreteDist::from_weights(&w) {
            return d;
        }
    }
}

impl ToyProblem {
    /// Random instance with `|X| ≤ 4`, `|Y| = 2`, `|W| ≤ 8` and `n, m ≤ 3`.
    ///
    /// Roughly a third of the worlds have no shift, some have supports that
    /// break absolute continuity, half use explicit loss tables, and all four
    /// algorithm kinds appear.
    pub fn random(seed: u64) -> Self {
        let mut rng = seeding::rng(seed);
        let xs = rng.random_range(2..=4);
        let ws = rng.random_range(1..=8);
        let mu_l = random_simplex(&mut rng, xs, 0.15);
        let mu_u = if rng.random::<f64>() < 0.35 {
            mu_l.clone()
        } else {
            random_simplex(&mut rng, xs, 0.15)
        };
        let p_y_given_x = (0..xs).map(|_| random_simplex(&mut rng, 2, 0.1)).collect();
        let p_hat = (0..ws)
            .map(|_| (0..xs).map(|_| random_simplex(&mut rng, 2, 0.0)).collect())
            .collect();
        let loss = match rng.random_range(0..5) {
            0 => LossSpec::log_loss(),
            1 => LossSpec::squared_log_loss(),
            2 => LossSpec::pseudo_label(),
            3 => LossSpec::alpha_loss(0.5).expect("valid alpha"),
            _ => LossSpec::alpha_loss(3.0).expect("valid alpha"),
        };
        let loss_table = rng.random_bool(0.5).then(|| {
            let bound = rng.random_range(0.5..3.0);
            LossTable {
                values: (0..ws)
                    .map(|_| (0..xs).map(|_| (0..2).map(|_| rng.random_range(0.0..=bound)).collect()).collect())
                    .collect(),
                bound,
            }
        });
        let algorithm = match rng.random_range(0..4) {
            0 => ToyAlgorithm::Constant(random_simplex(&mut rng, ws, 0.2)),
            1 => ToyAlgorithm::Erm,
            2 => ToyAlgorithm::Gibbs {
                tau: 10f64.powf(rng.random_range(-2.0..1.0)),
            },
            _ => ToyAlgorithm::RandomTable {
                seed: rng.random(),
                concentration: 10f64.powf(rng.random_range(-1.0..0.5)),
            },
        };
        let beta = match rng.random_range(0..5) {
            0 => 0.0,
            1 => 1.0,
            _ => rng.random(),
        };
        ToyProblem {
            world: ToyWorld {
                mu_l,
                mu_u,
                p_y_given_x,
                p_hat,
                loss_table,
                algorithm,
            },
            n: rng.random_range(1..=3),
            m: rng.random_range(0..=3),
            beta,
            loss,
        }
    }

    /// Flat `key = value` text; see [`ToyProblem::parse`].
    pub fn to_text(&self) -> String {
        let w = &self.world;
        let mut s = String::new();
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "m = {}", self.m);
        let _ = writeln!(s, "beta = {}", self.beta);
        let _ = writeln!(s, "loss = {}", self.loss);
        let _ = writeln!(s, "mu_l = {}", join(w.mu_l.probs()));
        let _ = writeln!(s, "mu_u = {}", join(w.mu_u.probs()));
        for (x, d) in w.p_y_given_x.iter().enumerate() {
            let _ = writeln!(s, "p_y.{x} = {}", join(d.probs()));
        }
        for (wi, row) in w.p_hat.iter().enumerate() {
            for (x, d) in row.iter().enumerate() {
                let _ = writeln!(s, "p_hat.{wi}.{x} = {}", join(d.probs()));
            }
        }
        if let Some(t) = &w.loss_table {
            let _ = writeln!(s, "loss_bound = {}", t.bound);
            for (wi, row) in t.values.iter().enumerate() {
                for (x, v) in row.iter().enumerate() {
                    let _ = writeln!(s, "loss.{wi}.{x} = {}", join(v));
                }
            }
        }
        let _ = writeln!(s, "algorithm = {}", w.algorithm.to_text());
        s
    }

    /// Parses the text written by [`ToyProblem::to_text`].
    ///
    /// Keys: `n`, `m`, `beta`, `loss`, `mu_l`, `mu_u`, `p_y.<x>`,
    /// `p_hat.<w>.<x>`, `algorithm` (`erm`, `gibbs:<τ>`, `constant:<probs>`,
    /// `random:<seed>:<concentration>`), and optionally `loss_bound` with
    /// `loss.<w>.<x>` for every pair. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, InfoError> {
        let mut n = None;
        let mut m = None;
        let mut beta = None;
        let mut loss = None;
        let mut mu_l = None;
        let mut mu_u = None;
        let mut algorithm = None;
        let mut loss_bound = None;
        let mut p_y: Vec<(usize, Vec<f64>, usize)> = Vec::new();
        let mut p_hat: Vec<((usize, usize), Vec<f64>, usize)> = Vec::new();
        let mut table: Vec<((usize, usize), Vec<f64>, usize)> = Vec::new();

        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |msg: String| InfoError::Parse { line: line_no, msg };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected key = value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            let index = |rest: &str| -> Result<usize, InfoError> {
                rest.parse().map_err(|_| err(format!("bad index in '{key}'")))
            };
            let pair = |rest: &str| -> Result<(usize, usize), InfoError> {
                let (a, b) = rest.split_once('.').ok_or_else(|| err(format!("'{key}' needs two indices")))?;
                Ok((index(a)?, index(b)?))
            };
            match key {
                "n" => n = Some(index(value)?),
                "m" => m = Some(index(value)?),
                "beta" => beta = Some(parse_f64(value).map_err(err)?),
                "loss" => loss = Some(value.parse::<LossSpec>().map_err(|e| err(e.to_string()))?),
                "mu_l" => mu_l = Some(parse_list(value).map_err(err)?),
                "mu_u" => mu_u = Some(parse_list(value).map_err(err)?),
                "algorithm" => algorithm = Some(ToyAlgorithm::parse(value).map_err(err)?),
                "loss_bound" => loss_bound = Some(parse_f64(value).map_err(err)?),
                _ => {
                    if let Some(rest) = key.strip_prefix("p_y.") {
                        p_y.push((index(rest)?, parse_list(value).map_err(err)?, line_no));
                    } else if let Some(rest) = key.strip_prefix("p_hat.") {
                        p_hat.push((pair(rest)?, parse_list(value).map_err(err)?, line_no));
                    } else if let Some(rest) = key.strip_prefix("loss.") {
                        table.push((pair(rest)?, parse_list(value).map_err(err)?, line_no));
                    } else {
                        return Err(err(format!("unknown key '{key}'")));
                    }
                }
            }
        }

        let missing = |k: &str| InfoError::Parse {
            line: 0,
            msg: format!("missing key '{k}'"),
        };
        let dist = |v: Vec<f64>, line: usize| {
            DiscreteDist::new(v).map_err(|e| InfoError::Parse {
                line,
                msg: e.to_string(),
            })
        };
        let mu_l = dist(mu_l.ok_or_else(|| missing("mu_l"))?, 0)?;
        let mu_u = dist(mu_u.ok_or_else(|| missing("mu_u"))?, 0)?;
        let xs = mu_l.len();

        let mut p_y_slots: Vec<Option<DiscreteDist>> = vec![None; xs];
        for (x, v, line) in p_y {
            let slot = p_y_slots.get_mut(x).ok_or(InfoError::Parse {
                line,
                msg: format!("feature index {x} out of range"),
            })?;
            *slot = Some(dist(v, line)?);
        }
        let p_y_given_x = p_y_slots
            .into_iter()
            .enumerate()
            .map(|(x, d)| d.ok_or_else(|| missing(&format!("p_y.{x}"))))
            .collect::<Result<Vec<_>, _>>()?;

        let ws = p_hat.iter().map(|((w, _), _, _)| w + 1).max().unwrap_or(0);
        let mut hat_slots: Vec<Vec<Option<DiscreteDist>>> = vec![vec![None; xs]; ws];
        for ((w, x), v, line) in p_hat {
            let slot = hat_slots[w].get_mut(x).ok_or(InfoError::Parse {
                line,
                msg: format!("feature index {x} out of range"),
            })?;
            *slot = Some(dist(v, line)?);
        }
        let p_hat = hat_slots
            .into_iter()
            .enumerate()
            .map(|(w, row)| {
                row.into_iter()
                    .enumerate()
                    .map(|(x, d)| d.ok_or_else(|| missing(&format!("p_hat.{w}.{x}"))))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;

        let loss_table = match (loss_bound, table.is_empty()) {
            (None, true) => None,
            (None, false) => return Err(missing("loss_bound")),
            (Some(bound), _) => {
                let mut slots: Vec<Vec<Option<Vec<f64>>>> = vec![vec![None; xs]; ws];
                for ((w, x), v, line) in table {
                    let slot = slots.get_mut(w).and_then(|r| r.get_mut(x)).ok_or(InfoError::Parse {
                        line,
                        msg: format!("loss index ({w}, {x}) out of range"),
                    })?;
                    *slot = Some(v);
                }
                let values = slots
                    .into_iter()
                    .enumerate()
                    .map(|(w, row)| {
                        row.into_iter()
                            .enumerate()
                            .map(|(x, v)| v.ok_or_else(|| missing(&format!("loss.{w}.{x}"))))
                            .collect::<Result<Vec<_>, _>>()
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Some(LossTable { values, bound })
            }
        };

        let problem = ToyProblem {
            world: ToyWorld {
                mu_l,
                mu_u,
                p_y_given_x,
                p_hat,
                loss_table,
                algorithm: algorithm.ok_or_else(|| missing("algorithm"))?,
            },
            n: n.ok_or_else(|| missing("n"))?,
            m: m.ok_or_else(|| missing("m"))?,
            beta: beta.ok_or_else(|| missing("beta"))?,
            loss: loss.unwrap_or_default(),
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn validate(&self) -> Result<(), InfoError> {
        self.world.validate()?;
        if self.n == 0 {
            return Err(InfoError::Invalid("n must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(InfoError::Invalid(format!("beta = {}", self.beta)));
        }
        Ok(())
    }

    pub fn enumerate(&self) -> Result<ToyAnalysis, InfoError> {
        toy_enumerate(&self.world, self.n, self.m, self.beta, &self.loss)
    }
}

/// Loss quantities resolved for one world and loss family.
struct Tables {
    /// `ℓ(w, x, y)`.
    ell: Vec<Vec<Vec<f64>>>,
    /// `ℓ_u(w, x)`.
    ell_u: Vec<Vec<f64>>,
    /// `ℓ_c(w, x)`.
    ell_c: Vec<Vec<f64>>,
    /// Distribution that `ℓ_u(w, x)` averages `ℓ(w, x, ·)` against.
    q: Vec<Vec<Vec<f64>>>,
    bound: f64,
}

fn one_hot_argmax(p: &[f64]) -> Vec<f64> {
    let mut v = vec![0.0; p.len()];
    v[argmax(p)] = 1.0;
    v
}

fn resolve(world: &ToyWorld, spec: &LossSpec) -> Result<Tables, InfoError> {
    let pseudo = spec.family() == LossFamily::PseudoLabel;
    let q: Vec<Vec<Vec<f64>>> = world
        .p_hat
        .iter()
        .map(|row| {
            row.iter()
                .map(|d| if pseudo { one_hot_argmax(d.probs()) } else { d.probs().to_vec() })
                .collect()
        })
        .collect();
    let (ell, ell_u, bound) = match &world.loss_table {
        Some(t) => {
            let ell_u = t
                .values
                .iter()
                .zip(&q)
                .map(|(lr, qr)| lr.iter().zip(qr).map(|(l, q)| l.iter().zip(q).map(|(a, b)| a * b).sum()).collect())
                .collect();
            (t.values.clone(), ell_u, t.bound)
        }
        None => {
            let mut ell = Vec::with_capacity(world.w_size());
            let mut ell_u = Vec::with_capacity(world.w_size());
            for row in &world.p_hat {
                let mut lrow = Vec::with_capacity(row.len());
                let mut urow = Vec::with_capacity(row.len());
                for d in row {
                    let pv = ProbVector::new(d.probs().to_vec())?;
                    lrow.push(
                        (0..d.len())
                            .map(|y| supervised_loss(spec, &pv, y))
                            .collect::<Result<Vec<_>, _>>()?,
                    );
                    urow.push(unsupervised_loss(spec, &pv));
                }
                ell.push(lrow);
                ell_u.push(urow);
            }
            let bound = ell.iter().flatten().flatten().copied().fold(0.0, f64::max);
            (ell, ell_u, bound)
        }
    };
    let ell_c = ell
        .iter()
        .map(|lr| {
            lr.iter()
                .zip(&world.p_y_given_x)
                .map(|(l, p)| l.iter().zip(p.probs()).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect();
    Ok(Tables {
        ell,
        ell_u,
        ell_c,
        q,
        bound,
    })
}

/// Exact quantities for one toy problem.
#[derive(Debug, Clone)]
pub struct ToyAnalysis {
    /// Loss range `L`; every sub-Gaussian parameter is `L/2`.
    pub loss_bound: f64,
    /// Generalization error with `ℓ_c` in the unsupervised risk.
    pub gen_c: f64,
    /// Generalization error with `ℓ_u` in the unsupervised risk.
    pub gen_u: f64,
    pub mi_wxy: f64,
    pub mi_wxl: f64,
    pub mi_wxu: f64,
    pub kl_shift: ExtReal,
    pub tv_shift: f64,
    pub delta_ssl: f64,
    /// `E_{P_W⊗μ_u} D(P̂_{Y|W,X} ‖ P_{Y|X})`.
    pub kl_cond: ExtReal,
    /// `E_{P_W⊗μ_u} TV(P̂_{Y|W,X}, P_{Y|X})`.
    pub tv_cond: f64,
    /// `D(P_{W,X^L} ‖ P_W ⊗ μ_u^n)`, straight from the joint table.
    pub shift_divergence: ExtReal,
    pub hypothesis_marginal: DiscreteDist,
    pub inputs: BoundInputs,
    /// MI bound with KL shift; `exact_gen` is `gen_c`.
    pub mi_shift: BoundReport,
    /// MI bound with the `Δ^SSL` term; `exact_gen` is `gen_u`.
    pub estimation_gap: BoundReport,
    /// Total-variation bound; `exact_gen` is `gen_u`.
    pub tv_shift_bound: BoundReport,
    /// Finite-class bound, only when `μ_l = μ_u`.
    pub finite_class: Option<f64>,
    pub delta_kl: ExtReal,
    pub delta_tv: f64,
}

impl ToyAnalysis {
    /// `I(W;X^L) + n·D(μ_l‖μ_u)`.
    pub fn decomposition_rhs(&self) -> ExtReal {
        ExtReal::Finite(self.mi_wxl).add(self.kl_shift.scale(self.inputs.n as f64))
    }

    /// Every bound that the exact values exceed by more than `tol`.
    pub fn violations(&self, tol: f64) -> Vec<String> {
        let mut out = Vec::new();
        for (name, r) in [
            ("mi_shift", &self.mi_shift),
            ("estimation_gap", &self.estimation_gap),
            ("tv_shift", &self.tv_shift_bound),
        ] {
            if r.holds(tol) == Some(false) {
                out.push(format!("{name}: |gen| = {} > {}", r.exact_gen.unwrap_or(0.0).abs(), r.total));
            }
        }
        let d = self.delta_ssl.abs();
        if !self.delta_kl.dominates(d, tol) {
            out.push(format!("delta_kl: |delta| = {d} > {}", self.delta_kl));
        }
        if d > self.delta_tv + tol {
            out.push(format!("delta_tv: |delta| = {d} > {}", self.delta_tv));
        }
        if let Some(b) = self.finite_class {
            if self.gen_u.abs() > b + tol {
                out.push(format!("finite_class: |gen| = {} > {b}", self.gen_u.abs()));
            }
        }
        out
    }
}

/// Per-code digit expansion in base `base`, least significant first.
fn digits(mut code: usize, base: usize, len: usize, out: &mut [usize]) {
    for d in out.iter_mut().take(len) {
        *d = code % base;
        code /= base;
    }
}

fn algorithm_row(alg: &ToyAlgorithm, risk: &[f64], tuple: u64, out: &mut [f64]) {
    match alg {
        ToyAlgorithm::Constant(d) => out.copy_from_slice(d.probs()),
        ToyAlgorithm::Erm => {
            out.fill(0.0);
            out[risk.iter().enumerate().fold(0, |b, (i, &r)| if r < risk[b] { i } else { b })] = 1.0;
        }
        ToyAlgorithm::Gibbs { tau } => {
            let lo = risk.iter().copied().fold(f64::INFINITY, f64::min);
            for (o, r) in out.iter_mut().zip(risk) {
                *o = (-(r - lo) / tau).exp();
            }
            let s: f64 = out.iter().sum();
            out.iter_mut().for_each(|o| *o /= s);
        }
        ToyAlgorithm::RandomTable { seed, concentration } => {
            let mut rng = seeding::rng(seeding::derive(*seed, &[tuple]));
            let g = Gamma::new(*concentration, 1.0).expect("validated concentration");
            for o in out.iter_mut() {
                *o = g.sample(&mut rng);
            }
            let s: f64 = out.iter().sum();
            if s > 0.0 && s.is_finite() {
                out.iter_mut().for_each(|o| *o /= s);
            } else {
                out.fill(0.0);
                out[0] = 1.0;
            }
        }
    }
}

/// Enumerates every sample `(x^L, y^L, x^U)` and computes the generalization
/// error, the informations and divergences in the bounds, and the bounds
/// themselves, all exactly.
pub fn toy_enumerate(
    world: &ToyWorld,
    n: usize,
    m: usize,
    beta: f64,
    loss: &LossSpec,
) -> Result<ToyAnalysis, InfoError> {
    ToyProblem {
        world: world.clone(),
        n,
        m,
        beta,
        loss: *loss,
    }
    .validate()?;
    let (xs, ys, ws) = (world.x_size(), world.y_size(), world.w_size());
    let states = (xs as u128).pow(n as u32) * (ys as u128).pow(n as u32) * (xs as u128).pow(m as u32) * ws as u128;
    if states > ENUMERATION_LIMIT {
        return Err(InfoError::TooLarge {
            states,
            limit: ENUMERATION_LIMIT,
        });
    }
    let t = resolve(world, loss)?;
    let nl = xs.pow(n as u32);
    let ny = ys.pow(n as u32);
    let nu = xs.pow(m as u32);
    let total = (n + m) as f64;
    let (mu_l, mu_u) = (world.mu_l.probs(), world.mu_u.probs());

    let pop: Vec<f64> = (0..ws)
        .map(|w| mu_u.iter().zip(&t.ell_c[w]).map(|(p, l)| p * l).sum())
        .collect();

    // Unlabeled tuples: probability and per-hypothesis loss sums.
    let mut xu_prob = vec![0.0; nu];
    let mut xu_sum_u = vec![0.0; nu * ws];
    let mut xu_sum_c = vec![0.0; nu * ws];
    let mut dig = vec![0; n.max(m)];
    for code in 0..nu {
        digits(code, xs, m, &mut dig);
        xu_prob[code] = dig[..m].iter().map(|&x| mu_u[x]).product();
        for w in 0..ws {
            xu_sum_u[code * ws + w] = dig[..m].iter().map(|&x| t.ell_u[w][x]).sum();
            xu_sum_c[code * ws + w] = dig[..m].iter().map(|&x| t.ell_c[w][x]).sum();
        }
    }

    let mut j_wxy = vec![0.0; ws * nl * ny];
    let mut j_wxl = vec![0.0; ws * nl];
    let mut j_wxu = vec![0.0; ws * nu];
    let mut p_w = vec![0.0; ws];
    let (mut gen_u, mut gen_c) = (0.0, 0.0);
    let mut xdig = vec![0; n];
    let mut ydig = vec![0; n];
    let mut sup = vec![0.0; ws];
    let mut lab_u = vec![0.0; ws];
    let mut lab_c = vec![0.0; ws];
    let mut risk_u = vec![0.0; ws];
    let mut risk_c = vec![0.0; ws];
    let mut row = vec![0.0; ws];

    for xl in 0..nl {
        digits(xl, xs, n, &mut xdig);
        let p_xl: f64 = xdig.iter().map(|&x| mu_l[x]).product();
        for w in 0..ws {
            lab_u[w] = xdig.iter().map(|&x| t.ell_u[w][x]).sum();
            lab_c[w] = xdig.iter().map(|&x| t.ell_c[w][x]).sum();
        }
        for yl in 0..ny {
            digits(yl, ys, n, &mut ydig);
            let p_lab = p_xl
                * xdig
                    .iter()
                    .zip(&ydig)
                    .map(|(&x, &y)| world.p_y_given_x[x].probs()[y])
                    .product::<f64>();
            for (w, s) in sup.iter_mut().enumerate() {
                *s = xdig.iter().zip(&ydig).map(|(&x, &y)| t.ell[w][x][y]).sum::<f64>() / n as f64;
            }
            for xu in 0..nu {
                let p = p_lab * xu_prob[xu];
                let tuple = ((xl * ny + yl) * nu + xu) as u64;
                for w in 0..ws {
                    let unl_u = (lab_u[w] + xu_sum_u[xu * ws + w]) / total;
                    let unl_c = (lab_c[w] + xu_sum_c[xu * ws + w]) / total;
                    risk_u[w] = beta * sup[w] + (1.0 - beta) * unl_u;
                    risk_c[w] = beta * sup[w] + (1.0 - beta) * unl_c;
                }
                if p == 0.0 {
                    continue;
                }
                algorithm_row(&world.algorithm, &risk_u, tuple, &mut row);
                for w in 0..ws {
                    let pw = p * row[w];
                    if pw == 0.0 {
                        continue;
                    }
                    j_wxy[w * nl * ny + xl * ny + yl] += pw;
                    j_wxl[w * nl + xl] += pw;
                    j_wxu[w * nu + xu] += pw;
                    p_w[w] += pw;
                    gen_u += pw * (pop[w] - risk_u[w]);
                    gen_c += pw * (pop[w] - risk_c[w]);
                }
            }
        }
    }

    let mi = |rows, cols, v: Vec<f64>| mutual_information(&JointDist::from_raw(rows, cols, v));
    let shift_divergence = {
        let mut reference = vec![0.0; ws * nl];
        for xl in 0..nl {
            digits(xl, xs, n, &mut xdig);
            let q: f64 = xdig.iter().map(|&x| mu_u[x]).product();
            for w in 0..ws {
                reference[w * nl + xl] = p_w[w] * q;
            }
        }
        kl_slices(&j_wxl, &reference)
    };
    let mi_wxy = mi(ws, nl * ny, j_wxy);
    let mi_wxl = mi(ws, nl, j_wxl);
    let mi_wxu = mi(ws, nu, j_wxu);

    let mut delta = 0.0;
    let mut kl_cond = ExtReal::ZERO;
    let mut tv_cond = 0.0;
    for w in 0..ws {
        for x in 0..xs {
            let weight = p_w[w] * mu_u[x];
            if weight == 0.0 {
                continue;
            }
            let truth = world.p_y_given_x[x].probs();
            delta += weight * (t.ell_c[w][x] - t.ell_u[w][x]);
            kl_cond = kl_cond.add(kl_slices(&t.q[w][x], truth).scale(weight));
            tv_cond += weight * tv_slices(&t.q[w][x], truth);
        }
    }

    let sigma = t.bound / 2.0;
    let inputs = BoundInputs {
        n,
        m,
        beta,
        sigma_l: sigma,
        sigma_c: sigma,
        sigma_u: sigma,
        l_l: t.bound,
        l_u: t.bound,
        mi_wxy,
        mi_wxl,
        mi_wxu,
        kl_shift: kl_discrete(&world.mu_l, &world.mu_u)?,
        tv_shift: tv_discrete(&world.mu_l, &world.mu_u)?,
        delta_ssl: delta,
    };
    let with_gen = |mut r: BoundReport, g: f64| {
        r.exact_gen = Some(g);
        r
    };
    let finite_class = (world.mu_l == world.mu_u).then(|| {
        let root = (2.0 * sigma * sigma).sqrt();
        let eps = if root > 0.0 { delta.abs() / root } else { 0.0 };
        bound_finite_class(n, m, beta, sigma, sigma, ws, eps)
    });
    Ok(ToyAnalysis {
        loss_bound: t.bound,
        gen_c,
        gen_u,
        mi_wxy,
        mi_wxl,
        mi_wxu,
        kl_shift: inputs.kl_shift,
        tv_shift: inputs.tv_shift,
        delta_ssl: delta,
        kl_cond,
        tv_cond,
        shift_divergence,
        hypothesis_marginal: DiscreteDist::from_weights(&p_w)?,
        mi_shift: with_gen(bound_mi_shift(&inputs)?, gen_c),
        estimation_gap: with_gen(bound_estimation_gap(&inputs)?, gen_u),
        tv_shift_bound: with_gen(bound_tv_shift(&inputs)?, gen_u),
        finite_class,
        delta_kl: delta_bound_kl(sigma, kl_cond),
        delta_tv: delta_bound_tv(t.bound, tv_cond),
        inputs,
    })
}

/// `L_P(w) = E_{μ_u} ℓ_c(w, X)`.
pub fn toy_population_risk(world: &ToyWorld, loss: &LossSpec, w: usize) -> Result<f64, InfoError> {
    world.validate()?;
    if w >= world.w_size() {
        return Err(InfoError::Invalid(format!("hypothesis {w} out of range")));
    }
    let t = resolve(world, loss)?;
    Ok(world.mu_u.probs().iter().zip(&t.ell_c[w]).map(|(p, l)| p * l).sum())
}

/// Monte-Carlo mean over fresh datasets of the SSL empirical risk of a fixed
/// hypothesis `w`, with the oracle `ℓ_c` in place of `ℓ_u`.
pub fn toy_risk_mc(problem: &ToyProblem, w: usize, datasets: usize, seed: u64) -> Result<McEstimate, InfoError> {
    problem.validate()?;
    if datasets < 2 {
        return Err(InfoError::Invalid("need at least two datasets".into()));
    }
    let world = &problem.world;
    if w >= world.w_size() {
        return Err(InfoError::Invalid(format!("hypothesis {w} out of range")));
    }
    let t = resolve(world, &problem.loss)?;
    let (n, m, beta) = (problem.n, problem.m, problem.beta);
    let mut rng = seeding::rng(seed);
    let values: Vec<f64> = (0..datasets)
        .map(|_| {
            let mut sup = 0.0;
            let mut unl = 0.0;
            for _ in 0..n {
                let x = world.mu_l.sample(&mut rng);
                let y = world.p_y_given_x[x].sample(&mut rng);
                sup += t.ell[w][x][y];
                unl += t.ell_c[w][x];
            }
            for _ in 0..m {
                unl += t.ell_c[w][world.mu_u.sample(&mut rng)];
            }
            beta * sup / n as f64 + (1.0 - beta) * unl / (n + m) as f64
        })
        .collect();
    Ok(McEstimate::from_values(&values))
}
