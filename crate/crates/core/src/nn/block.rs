use rand::Rng;

use super::matrix::Matrix;
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    ReLU,
    Identity,
    /// Row-wise softmax. Only allowed on the last layer of a block.
    Softmax,
}

impl Activation {
    pub fn code(self) -> u32 {
        match self {
            Activation::ReLU => 0,
            Activation::Identity => 1,
            Activation::Softmax => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::ReLU),
            1 => Some(Activation::Identity),
            2 => Some(Activation::Softmax),
            _ => None,
        }
    }
}

/// One dense layer: `act(x · weight + bias)`, with `weight` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Intermediates of one forward pass, needed by the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input fed to each layer.
    inputs: Vec<Matrix>,
    /// Pre-activation of each layer.
    pre: Vec<Matrix>,
    output: Matrix,
}

impl Trace {
    pub fn output(&self) -> &Matrix {
        &self.output
    }

    /// Pre-activation of the final layer (the logits when the block ends in softmax).
    pub fn logits(&self) -> &Matrix {
        self.pre.last().expect("blocks have at least one layer")
    }

    pub fn batch_size(&self) -> usize {
        self.output.rows()
    }
}

/// Gradient of a block's parameters plus the gradient w.r.t. its input.
#[derive(Debug, Clone)]
pub struct Backprop {
    pub tape: GradTape,
    pub input_grad: Matrix,
}

/// An ordered stack of dense layers with chained dimensions.
#[derive(Debug, Clone)]
pub struct ParamBlock {
    layers: Vec<Layer>,
    cached: Option<Trace>,
}

impl PartialEq for ParamBlock {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl ParamBlock {
    /// Validates the dimension chain and the softmax-last rule.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::Shape("a block needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(NnError::Shape(format!(
                    "layer {i}: bias length {} but out_dim {}",
                    l.bias.len(),
                    l.out_dim()
                )));
            }
            if l.activation == Activation::Softmax && i + 1 != layers.len() {
                return Err(NnError::Shape(format!(
                    "layer {i}: softmax is only allowed as the final activation"
                )));
            }
            if let Some(next) = layers.get(i + 1) {
                if next.in_dim() != l.out_dim() {
                    return Err(NnError::Shape(format!(
                        "layer {i} outputs {} but layer {} expects {}",
                        l.out_dim(),
                        i + 1,
                        next.in_dim()
                    )));
                }
            }
        }
        Ok(ParamBlock {
            layers,
            cached: None,
        })
    }

    /// Random initialization: weights uniform in ±1/√fan_in, zero biases.
    pub fn init<R: Rng + ?Sized>(
        shape: &[(usize, usize, Activation)],
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let layers = shape
            .iter()
            .map(|&(inp, out, activation)| {
                let bound = 1.0 / (inp.max(1) as f64).sqrt();
                let data = (0..inp * out)
                    .map(|_| rng.random_range(-bound..=bound))
                    .collect();
                Ok(Layer {
                    weight: Matrix::from_vec(inp, out, data)?,
                    bias: vec![0.0; out],
                    activation,
                })
            })
            .collect::<Result<Vec<_>, NnError>>()?;
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    /// Flat parameter view: per layer, weights row-major then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn param_mut(&mut self, mut idx: usize) -> &mut f64 {
        for l in &mut self.layers {
            let nw = l.weight.as_slice().len();
            if idx < nw {
                return &mut l.weight.as_mut_slice()[idx];
            }
            idx -= nw;
            if idx < l.bias.len() {
                return &mut l.bias[idx];
            }
            idx -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Forward pass returning the full trace; does not touch the cache.
    pub fn forward_trace(&self, x: &Matrix) -> Result<Trace, NnError> {
        if x.cols() != self.in_dim() {
            return Err(NnError::Shape(format!(
                "input has {} columns, block expects {}",
                x.cols(),
                self.in_dim()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for l in &self.layers {
            let mut z = cur.matmul(&l.weight)?;
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(&l.bias) {
                    *v += b;
                }
            }
            let a = activate(l.activation, &z);
            inputs.push(cur);
            pre.push(z);
            cur = a;
        }
        Ok(Trace {
            inputs,
            pre,
            output: cur,
        })
    }

    /// Forward pass that caches its intermediates for [`ParamBlock::backward`].
    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix, NnError> {
        let trace = self.forward_trace(x)?;
        let out = trace.output.clone();
        self.cached = Some(trace);
        Ok(out)
    }

    /// Parameter gradients for the cached forward pass, given dLoss/dOutput.
    pub fn backward(&self, upstream: &Matrix) -> Result<GradTape, NnError> {
        let trace = self
            .cached
            .as_ref()
            .ok_or_else(|| NnError::State("backward called before forward".into()))?;
        Ok(self.backward_output(trace, upstream)?.tape)
    }

    /// Backpropagates dLoss/dOutput through `trace`.
    pub fn backward_output(&self, trace: &Trace, grad_out: &Matrix) -> Result<Backprop, NnError> {
        self.check_upstream(trace, grad_out)?;
        let last = self.layers.len() - 1;
        let grad_pre = match self.layers[last].activation {
            Activation::Softmax => softmax_vjp(&trace.output, grad_out),
            act => act_vjp(act, &trace.pre[last], grad_out),
        };
        self.backward_pre(trace, &grad_pre)
    }

    /// Backpropagates dLoss/d(final pre-activation), i.e. dLoss/dLogits for
    /// softmax heads. Losses written in log-space use this entry point.
    pub fn backward_pre(&self, trace: &Trace, grad_pre: &Matrix) -> Result<Backprop, NnError> {
        self.check_upstream(trace, grad_pre)?;
        let mut tape = GradTape::zeros_for(self);
        let mut dz = grad_pre.clone();
        for i in (0..self.layers.len()).rev() {
            let l = &self.layers[i];
            let g = &mut tape.layers[i];
            g.weight = trace.inputs[i].t_matmul(&dz)?;
            g.bias = dz.col_sums();
            let dx = dz.matmul_t(&l.weight)?;
            if i == 0 {
                return Ok(Backprop {
                    tape,
                    input_grad: dx,
                });
            }
            dz = act_vjp(self.layers[i - 1].activation, &trace.pre[i - 1], &dx);
        }
        unreachable!("loop returns at layer 0")
    }

    fn check_upstream(&self, trace: &Trace, g: &Matrix) -> Result<(), NnError> {
        if trace.pre.len() != self.layers.len() {
            return Err(NnError::State("trace was produced by a different block".into()));
        }
        if g.shape() != trace.output.shape() {
            return Err(NnError::Shape(format!(
                "upstream gradient {:?} does not match output {:?}",
                g.shape(),
                trace.output.shape()
            )));
        }
        Ok(())
    }
}

fn activate(act: Activation, z: &Matrix) -> Matrix {
    let mut a = z.clone();
    match act {
        Activation::Identity => {}
        Activation::ReLU => a.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0)),
        Activation::Softmax => {
            for r in 0..a.rows() {
                softmax_in_place(a.row_mut(r));
            }
        }
    }
    a
}

/// Max-subtracted softmax.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Log-softmax through log-sum-exp.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

fn act_vjp(act: Activation, pre: &Matrix, grad: &Matrix) -> Matrix {
    let mut out = grad.clone();
    match act {
        Activation::Identity => {}
        Activation::ReLU => {
            for (g, &z) in out.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                if z <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        Activation::Softmax => unreachable!("softmax only appears last"),
    }
    out
}

/// dL/dz = p ⊙ (g − ⟨p, g⟩) per row.
fn softmax_vjp(probs: &Matrix, grad: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let p = probs.row(r);
        let g = grad.row(r);
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for ((o, &pi), &gi) in out.row_mut(r).iter_mut().zip(p).zip(g) {
            *o = pi * (gi - dot);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Gradient accumulators mirroring a [`ParamBlock`]'s shape.
#[derive(Debug, Clone, PartialEq)]
pub struct GradTape {
    pub layers: Vec<LayerGrad>,
}

impl GradTape {
    pub fn zeros_for(block: &ParamBlock) -> Self {
        GradTape {
            layers: block
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: Matrix::zeros(l.in_dim(), l.out_dim()),
                    bias: vec![0.0; l.out_dim()],
                })
                .collect(),
        }
    }

    pub fn matches(&self, block: &ParamBlock) -> bool {
        self.layers.len() == block.layers.len()
            && self.layers.iter().zip(&block.layers).all(|(g, l)| {
                g.weight.shape() == l.weight.shape() && g.bias.len() == l.bias.len()
            })
    }

    pub fn zero(&mut self) {
        for g in &mut self.layers {
            g.weight.fill(0.0);
            g.bias.iter_mut().for_each(|b| *b = 0.0);
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &GradTape, scale: f64) -> Result<(), NnError> {
        if self.layers.len() != other.layers.len() {
            return Err(NnError::Shape("grad tapes have different depth".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if a.bias.len() != b.bias.len() {
                return Err(NnError::Shape("grad tapes have different bias lengths".into()));
            }
            a.weight.add_scaled(&b.weight, scale)?;
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += scale * y;
            }
        }
        Ok(())
    }

    /// Flat values in the same order as [`ParamBlock::params`].
    pub fn values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            out.extend_from_slice(g.weight.as_slice());
            out.extend_from_slice(&g.bias);
        }
        out
    }

    pub fn value_mut(&mut self, mut idx: usize) -> &mut f64 {
        for g in &mut self.layers {
            let nw = g.weight.as_slice().len();
            if idx < nw {
                return &mut g.weight.as_mut_slice()[idx];
            }
            idx -= nw;
            if idx < g.bias.len() {
                return &mut g.bias[idx];
            }
            idx -= g.bias.len();
        }
        panic!("gradient index out of range");
    }

    pub fn is_zero(&self) -> bool {
        self.values().iter().all(|&v| v == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(weight: Matrix, activation: Activation) -> ParamBlock {
        let out = weight.cols();
        ParamBlock::from_layers(vec![Layer {
            weight,
            bias: vec![0.0; out],
            activation,
        }])
        .unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let b = single(Matrix::identity(3), Activation::Identity);
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(b.forward_trace(&x).unwrap().output(), &x);
    }

    #[test]
    fn relu_layer_clips_negatives() {
        let b = single(Matrix::identity(2), Activation::ReLU);
        let x = Matrix::from_rows(&[[-1.0, 2.0]]).unwrap();
        let y = b.forward_trace(&x).unwrap();
        assert_eq!(y.output().row(0), &[0.0, 2.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let b = single(Matrix::identity(2), Activation::Softmax);
        let x = Matrix::from_rows(&[[0.0, 0.0]]).unwrap();
        assert_eq!(b.forward_trace(&x).unwrap().output().row(0), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_stays_finite_for_huge_logits() {
        let mut row = [1000.0, 0.0, -1000.0];
        softmax_in_place(&mut row);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|v| v.is_finite()));
        let lp = log_softmax(&[1000.0, 0.0]);
        assert!((lp[1] + 1000.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_chains_and_inner_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(ParamBlock::init(&[(3, 4, Activation::ReLU), (5, 2, Activation::Identity)], &mut rng).is_err());
        assert!(ParamBlock::init(&[(3, 4, Activation::Softmax), (4, 2, Activation::Identity)], &mut rng).is_err());
        let b = ParamBlock::init(&[(3, 4, Activation::ReLU)], &mut rng).unwrap();
        assert!(b.forward_trace(&Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn init_is_bounded_by_fan_in() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = ParamBlock::init(&[(16, 8, Activation::ReLU)], &mut rng).unwrap();
        let l = &b.layers()[0];
        assert!(l.weight.as_slice().iter().all(|w| w.abs() <= 0.25));
        assert!(l.bias.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn backward_requires_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut b = ParamBlock::init(&[(2, 2, Activation::Identity)], &mut rng).unwrap();
        let g = Matrix::zeros(1, 2);
        assert!(matches!(b.backward(&g), Err(NnError::State(_))));
        b.forward(&Matrix::zeros(1, 2)).unwrap();
        assert!(b.backward(&g).unwrap().is_zero());
    }

    #[test]
    fn scalar_identity_squared_loss_gradient() {
        // L = (w x + b − y)², dL/dw = 2(wx+b−y)x, dL/db = 2(wx+b−y).
        let (w, bias, x, y) = (0.7, -0.2, 1.5, 0.4);
        let mut b = ParamBlock::from_layers(vec![Layer {
            weight: Matrix::from_vec(1, 1, vec![w]).unwrap(),
            bias: vec![bias],
            activation: Activation::Identity,
        }])
        .unwrap();
        let out = b.forward(&Matrix::from_vec(1, 1, vec![x]).unwrap()).unwrap();
        let resid = out.get(0, 0) - y;
        let tape = b.backward(&Matrix::from_vec(1, 1, vec![2.0 * resid]).unwrap()).unwrap();
        let r = w * x + bias - y;
        assert!((tape.layers[0].weight.get(0, 0) - 2.0 * r * x).abs() < 1e-15);
        assert!((tape.layers[0].bias[0] - 2.0 * r).abs() < 1e-15);
    }

    proptest::proptest! {
        #[test]
        fn softmax_rows_are_distributions(row in proptest::collection::vec(-300.0f64..300.0, 2..12)) {
            let mut p = row.clone();
            softmax_in_place(&mut p);
            // Strictly inside (0, 1) only while exp(-spread) survives next to 1.0.
            let spread = row.iter().copied().fold(f64::MIN, f64::max) - row.iter().copied().fold(f64::MAX, f64::min);
            if spread <= 30.0 {
                proptest::prop_assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
            }
            proptest::prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
            proptest::prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            let lp = log_softmax(&row);
            for (a, b) in lp.iter().zip(&p) {
                proptest::prop_assert!((a.exp() - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn random_chains_forward_finite(
            dims in proptest::collection::vec(1usize..7, 2..5),
            rows in 1usize..5,
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let last = dims.len() - 2;
            let shape: Vec<_> = dims
                .windows(2)
                .enumerate()
                .map(|(i, w)| (w[0], w[1], if i == last { Activation::Softmax } else { Activation::ReLU }))
                .collect();
            let block = ParamBlock::init(&shape, &mut rng).unwrap();
            for pair in block.layers().windows(2) {
                proptest::prop_assert_eq!(pair[0].out_dim(), pair[1].in_dim());
            }
            let x = Matrix::from_vec(rows, dims[0], (0..rows * dims[0]).map(|i| (i as f64 * 0.37).sin() * 5.0).collect())
                .unwrap();
            let out = block.forward_trace(&x).unwrap();
            proptest::prop_assert_eq!(out.output().shape(), (rows, *dims.last().unwrap()));
            proptest::prop_assert!(out.output().as_slice().iter().all(|v| v.is_finite()));
        }
    }
}
