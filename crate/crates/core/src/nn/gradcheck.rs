use super::block::{GradTape, ParamBlock};

/// Central-difference gradient `(f(θ+h) − f(θ−h)) / 2h`, one parameter at a time.
///
/// Used as the independent oracle for [`ParamBlock::backward_output`] and
/// [`ParamBlock::backward_pre`]; it never looks at a trace.
pub fn finite_diff_grad<F>(mut loss_fn: F, block: &ParamBlock, h: f64) -> GradTape
where
    F: FnMut(&ParamBlock) -> f64,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut probe = block.clone();
    let mut tape = GradTape::zeros_for(block);
    for i in 0..block.param_count() {
        let orig = *probe.param_mut(i);
        *probe.param_mut(i) = orig + h;
        let plus = loss_fn(&probe);
        *probe.param_mut(i) = orig - h;
        let minus = loss_fn(&probe);
        *probe.param_mut(i) = orig;
        *tape.value_mut(i) = (plus - minus) / (2.0 * h);
    }
    tape
}

/// Largest element-wise relative error `|a−b| / max(|a|, |b|, floor)`.
///
/// `floor` keeps entries that are both ~0 from dominating through rounding noise.
pub fn max_relative_error(a: &GradTape, b: &GradTape, floor: f64) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Layer, Matrix};

    fn scalar_block(theta: f64) -> ParamBlock {
        ParamBlock::from_layers(vec![Layer {
            weight: Matrix::from_vec(1, 1, vec![theta]).unwrap(),
            bias: vec![0.0],
            activation: Activation::Identity,
        }])
        .unwrap()
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let g = finite_diff_grad(|_| 4.2, &scalar_block(1.0), 1e-5);
        assert!(g.is_zero());
    }

    #[test]
    fn square_at_three() {
        let g = finite_diff_grad(
            |b| {
                let t = b.layers()[0].weight.get(0, 0);
                t * t
            },
            &scalar_block(3.0),
            1e-5,
        );
        assert!((g.layers[0].weight.get(0, 0) - 6.0).abs() < 1e-8);
        assert_eq!(g.layers[0].bias[0], 0.0);
    }
}
