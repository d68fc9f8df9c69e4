use super::block::{GradTape, ParamBlock};
use super::NnError;

/// Plain gradient descent: `θ ← θ − lr·g`.
pub fn sgd_step(block: &mut ParamBlock, tape: &GradTape, lr: f64) -> Result<(), NnError> {
    check(block, tape, lr)?;
    for (l, g) in block.layers_mut().iter_mut().zip(&tape.layers) {
        l.weight.add_scaled(&g.weight, -lr)?;
        for (b, gb) in l.bias.iter_mut().zip(&g.bias) {
            *b -= lr * gb;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. One instance per parameter block; moment
/// estimates persist across [`Adam::step`] calls.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    t: u64,
    m: GradTape,
    v: GradTape,
}

impl Adam {
    pub fn new(block: &ParamBlock, cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            t: 0,
            m: GradTape::zeros_for(block),
            v: GradTape::zeros_for(block),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, block: &mut ParamBlock, tape: &GradTape) -> Result<(), NnError> {
        check(block, tape, self.cfg.lr)?;
        if !self.m.matches(block) {
            return Err(NnError::Shape("optimizer state does not match block".into()));
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let update = |theta: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *theta -= lr * mhat / (vhat.sqrt() + eps);
        };
        for (((l, g), m), v) in block
            .layers_mut()
            .iter_mut()
            .zip(&tape.layers)
            .zip(&mut self.m.layers)
            .zip(&mut self.v.layers)
        {
            for (((th, &gi), mi), vi) in l
                .weight
                .as_mut_slice()
                .iter_mut()
                .zip(g.weight.as_slice())
                .zip(m.weight.as_mut_slice())
                .zip(v.weight.as_mut_slice())
            {
                update(th, gi, mi, vi);
            }
            for (((th, &gi), mi), vi) in l
                .bias
                .iter_mut()
                .zip(&g.bias)
                .zip(&mut m.bias)
                .zip(&mut v.bias)
            {
                update(th, gi, mi, vi);
            }
        }
        Ok(())
    }
}

fn check(block: &ParamBlock, tape: &GradTape, lr: f64) -> Result<(), NnError> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(NnError::Invalid(format!("learning rate must be positive, got {lr}")));
    }
    if !tape.matches(block) {
        return Err(NnError::Shape("gradient tape does not match block".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn block() -> ParamBlock {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        ParamBlock::init(&[(3, 2, Activation::ReLU), (2, 2, Activation::Softmax)], &mut rng).unwrap()
    }

    fn filled(block: &ParamBlock, v: f64) -> GradTape {
        let mut t = GradTape::zeros_for(block);
        for i in 0..block.param_count() {
            *t.value_mut(i) = v;
        }
        t
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut b = block();
        let before = b.clone();
        let zero = GradTape::zeros_for(&b);
        sgd_step(&mut b, &zero, 0.1).unwrap();
        assert_eq!(b, before);
        let mut adam = Adam::new(&b, AdamConfig::default());
        adam.step(&mut b, &zero).unwrap();
        assert_eq!(b, before);
    }

    #[test]
    fn sgd_unit_rate_subtracts_gradient() {
        let mut b = block();
        let before = b.params();
        let g = filled(&b, 0.25);
        sgd_step(&mut b, &g, 1.0).unwrap();
        for (a, p) in b.params().iter().zip(&before) {
            assert_eq!(*a, p - 0.25);
        }
    }

    #[test]
    fn adam_first_step_has_magnitude_lr_for_any_scale() {
        for scale in [1e-6, 1.0, 1e6] {
            let mut b = block();
            let before = b.params();
            let cfg = AdamConfig::default();
            let mut adam = Adam::new(&b, cfg);
            let g = filled(&b, scale);
            adam.step(&mut b, &g).unwrap();
            for (a, p) in b.params().iter().zip(&before) {
                let step = p - a;
                // m̂ = g, v̂ = g², step = lr·g/(|g|+ε).
                let expected = cfg.lr * scale / (scale + cfg.eps);
                assert!((step - expected).abs() < 1e-12, "{step} vs {expected}");
            }
        }
    }

    #[test]
    fn rejects_mismatch_and_bad_rate() {
        let mut b = block();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let other = ParamBlock::init(&[(4, 2, Activation::Identity)], &mut rng).unwrap();
        assert!(sgd_step(&mut b, &GradTape::zeros_for(&other), 0.1).is_err());
        let zero = GradTape::zeros_for(&b);
        assert!(sgd_step(&mut b, &zero, 0.0).is_err());
    }
}
