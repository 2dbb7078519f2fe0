//! A small dense feed-forward network with analytic backprop.
//!
//! Hidden layers apply the model's activation; the last layer is linear and
//! its output is read either as a regression prediction or as class logits.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::config(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("matrix contains non-finite values"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Regression,
    Classification,
}

/// One affine block: `out = weight * in + bias`, weight is `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn new(weight: DenseMatrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows {
            return Err(Error::config(format!(
                "bias length {} does not match weight rows {}",
                bias.len(),
                weight.rows
            )));
        }
        if bias.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("bias contains non-finite values"));
        }
        Ok(Self { weight, bias })
    }

    fn zeros_like(&self) -> Self {
        Self {
            weight: DenseMatrix::zeros(self.weight.rows, self.weight.cols),
            bias: vec![0.0; self.bias.len()],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows
    }

    fn affine(&self, input: &[f64]) -> Vec<f64> {
        (0..self.weight.rows)
            .map(|r| {
                let row = self.weight.row(r);
                let mut acc = self.bias[r];
                for (w, x) in row.iter().zip(input) {
                    acc += w * x;
                }
                acc
            })
            .collect()
    }

    fn shape(&self) -> (usize, usize) {
        (self.weight.rows, self.weight.cols)
    }
}

/// Supervision signal for one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Regression(Vec<f64>),
    Class(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: u64,
    pub task_id: usize,
    pub features: Vec<f64>,
    pub target: Target,
}

/// Trainable parameters of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    layers: Vec<Layer>,
    activation: Activation,
    head: Head,
}

/// Gradient of a scalar objective with respect to every [`ModelParams`] entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    layers: Vec<Layer>,
}

impl Gradients {
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// All components flattened in the same order as [`ModelParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }
}

fn flatten(layers: &[Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(&l.weight.data);
        out.extend_from_slice(&l.bias);
    }
    out
}

impl ModelParams {
    pub fn new(layers: Vec<Layer>, activation: Activation, head: Head) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("model needs at least one layer"));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::config(format!(
                    "layer {k} outputs {} values but layer {} expects {}",
                    pair[0].out_dim(),
                    k + 1,
                    pair[1].in_dim()
                )));
            }
        }
        if head == Head::Classification && layers.last().map(Layer::out_dim) < Some(2) {
            return Err(Error::config(
                "classification head needs at least 2 outputs",
            ));
        }
        Ok(Self {
            layers,
            activation,
            head,
        })
    }

    /// Random init with weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`
    /// and zero biases. `sizes` lists the input dimension followed by every
    /// layer's output dimension.
    pub fn init<R: Rng + ?Sized>(
        sizes: &[usize],
        activation: Activation,
        head: Head,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::config(format!("invalid layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..=bound))
                    .collect();
                Layer {
                    weight: DenseMatrix {
                        rows: fan_out,
                        cols: fan_in,
                        data,
                    },
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Self::new(layers, activation, head)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data.len() + l.bias.len())
            .sum()
    }

    /// Weights then bias, layer by layer.
    pub fn to_flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    /// Copy of `self` with every parameter replaced from `flat` (same order as
    /// [`ModelParams::to_flat`]).
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::config(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut out = self.clone();
        let mut it = flat.iter().copied();
        for l in &mut out.layers {
            for w in l.weight.data.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().expect("length checked above");
            }
        }
        Ok(out)
    }

    fn check_input(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.input_dim() {
            return Err(Error::config(format!(
                "feature dimension {} does not match model input {}",
                features.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.check_input(features)?;
        let last = self.layers.len() - 1;
        let mut act = features.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = layer.affine(&act);
            if k < last {
                z.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            act = z;
        }
        Ok(act)
    }

    fn check_target(&self, example: &Example) -> Result<()> {
        match (&example.target, self.head) {
            (Target::Regression(t), Head::Regression) if t.len() == self.output_dim() => Ok(()),
            (Target::Class(c), Head::Classification) if *c < self.output_dim() => Ok(()),
            _ => Err(Error::config(format!(
                "target of example {} does not match the {:?} head with {} outputs",
                example.id,
                self.head,
                self.output_dim()
            ))),
        }
    }

    /// Loss of one example: MSE averaged over output dims for regression,
    /// softmax cross-entropy for classification.
    pub fn per_example_loss(&self, example: &Example) -> Result<f64> {
        self.check_target(example)?;
        let out = self.forward(&example.features)?;
        let loss = loss_and_output_grad(&out, &example.target, false).0;
        if !loss.is_finite() {
            return Err(Error::Numeric {
                example_id: example.id,
                detail: format!("loss evaluated to {loss}"),
            });
        }
        Ok(loss)
    }

    /// Mean loss over `batch` and its analytic gradient.
    pub fn backward(&self, batch: &[Example]) -> Result<(f64, Gradients)> {
        self.backward_weighted(batch, None)
    }

    /// Objective `sum_i w_i * L_i / n`; `weights = None` means all ones.
    pub fn backward_weighted(
        &self,
        batch: &[Example],
        weights: Option<&[f64]>,
    ) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::usage("backward called with an empty batch"));
        }
        if let Some(w) = weights {
            if w.len() != batch.len() {
                return Err(Error::usage(format!(
                    "{} weights for a batch of {}",
                    w.len(),
                    batch.len()
                )));
            }
        }
        let n = batch.len() as f64;
        let mut grads = Gradients {
            layers: self.layers.iter().map(Layer::zeros_like).collect(),
        };
        let mut total = 0.0;
        for (i, ex) in batch.iter().enumerate() {
            let w = weights.map_or(1.0, |w| w[i]);
            let loss = self.accumulate_example(ex, w / n, &mut grads)?;
            total += w * loss;
        }
        Ok((total / n, grads))
    }

    fn accumulate_example(&self, ex: &Example, scale: f64, grads: &mut Gradients) -> Result<f64> {
        self.check_input(&ex.features)?;
        self.check_target(ex)?;
        let last = self.layers.len() - 1;

        // activations[k] is the input of layer k; pre[k] its pre-activation output
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() + 1);
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        activations.push(ex.features.clone());
        for (k, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&activations[k]);
            let a = if k < last {
                z.iter().map(|v| self.activation.apply(*v)).collect()
            } else {
                z.clone()
            };
            pre.push(z);
            activations.push(a);
        }

        let (loss, mut delta) = loss_and_output_grad(&activations[last + 1], &ex.target, true);
        if !loss.is_finite() {
            return Err(Error::Numeric {
                example_id: ex.id,
                detail: format!("loss evaluated to {loss}"),
            });
        }

        for k in (0..self.layers.len()).rev() {
            if k < last {
                for (j, d) in delta.iter_mut().enumerate() {
                    *d *= self.activation.derivative(pre[k][j], activations[k + 1][j]);
                }
            }
            let input = &activations[k];
            let g = &mut grads.layers[k];
            let cols = g.weight.cols;
            for (r, d) in delta.iter().enumerate() {
                let sd = scale * d;
                g.bias[r] += sd;
                let row = &mut g.weight.data[r * cols..(r + 1) * cols];
                for (gw, x) in row.iter_mut().zip(input) {
                    *gw += sd * x;
                }
            }
            if k > 0 {
                let layer = &self.layers[k];
                let mut prev = vec![0.0; layer.in_dim()];
                for (r, d) in delta.iter().enumerate() {
                    for (p, w) in prev.iter_mut().zip(layer.weight.row(r)) {
                        *p += w * d;
                    }
                }
                delta = prev;
            }
        }
        Ok(loss)
    }

    /// Plain SGD: every parameter moves by `-lr * grad`.
    pub fn sgd_step(&self, grads: &Gradients, lr: f64) -> Result<Self> {
        let mut next = self.clone();
        next.apply_sgd(grads, lr)?;
        Ok(next)
    }

    pub fn apply_sgd(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::config(format!(
                "learning rate must be >= 0, got {lr}"
            )));
        }
        if grads.layers.len() != self.layers.len()
            || grads
                .layers
                .iter()
                .zip(&self.layers)
                .any(|(g, l)| g.shape() != l.shape())
        {
            return Err(Error::config("gradient shape does not match model"));
        }
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, d) in l.weight.data.iter_mut().zip(&g.weight.data) {
                *w -= lr * d;
            }
            for (b, d) in l.bias.iter_mut().zip(&g.bias) {
                *b -= lr * d;
            }
        }
        Ok(())
    }
}

/// Returns the loss and, when `want_grad`, dLoss/dOutput.
fn loss_and_output_grad(out: &[f64], target: &Target, want_grad: bool) -> (f64, Vec<f64>) {
    match target {
        Target::Regression(t) => {
            let d = out.len() as f64;
            let loss = out
                .iter()
                .zip(t)
                .map(|(y, t)| (y - t) * (y - t))
                .sum::<f64>()
                / d;
            let grad = if want_grad {
                out.iter().zip(t).map(|(y, t)| 2.0 * (y - t) / d).collect()
            } else {
                Vec::new()
            };
            (loss, grad)
        }
        Target::Class(c) => {
            let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = out.iter().map(|z| (z - max).exp()).sum();
            let lse = max + sum.ln();
            let loss = lse - out[*c];
            let grad = if want_grad {
                out.iter()
                    .enumerate()
                    .map(|(k, z)| (z - lse).exp() - if k == *c { 1.0 } else { 0.0 })
                    .collect()
            } else {
                Vec::new()
            };
            (loss, grad)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn reg(id: u64, x: Vec<f64>, y: Vec<f64>) -> Example {
        Example {
            id,
            task_id: 0,
            features: x,
            target: Target::Regression(y),
        }
    }

    fn single(weight: DenseMatrix, bias: Vec<f64>, head: Head) -> ModelParams {
        ModelParams::new(
            vec![Layer::new(weight, bias).unwrap()],
            Activation::Tanh,
            head,
        )
        .unwrap()
    }

    #[test]
    fn identity_forward() {
        let m = single(DenseMatrix::identity(2), vec![0.0, 0.0], Head::Regression);
        assert_eq!(m.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn zero_weight_forward_is_bias() {
        let m = single(DenseMatrix::zeros(1, 3), vec![3.0], Head::Regression);
        assert_eq!(m.forward(&[9.0, -4.0, 0.25]).unwrap(), vec![3.0]);
    }

    #[test]
    fn forward_matches_hand_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m =
            ModelParams::init(&[2, 3, 1], Activation::Tanh, Head::Regression, &mut rng).unwrap();
        let (x0, x1) = (0.5, -0.5);
        let l0 = &m.layers()[0];
        let l1 = &m.layers()[1];
        let h0 = (l0.weight.get(0, 0) * x0 + l0.weight.get(0, 1) * x1 + l0.bias[0]).tanh();
        let h1 = (l0.weight.get(1, 0) * x0 + l0.weight.get(1, 1) * x1 + l0.bias[1]).tanh();
        let h2 = (l0.weight.get(2, 0) * x0 + l0.weight.get(2, 1) * x1 + l0.bias[2]).tanh();
        let y = l1.weight.get(0, 0) * h0
            + l1.weight.get(0, 1) * h1
            + l1.weight.get(0, 2) * h2
            + l1.bias[0];
        let out = m.forward(&[x0, x1]).unwrap();
        assert!((out[0] - y).abs() < 1e-15, "{} vs {}", out[0], y);
    }

    #[test]
    fn forward_rejects_wrong_dim() {
        let m = single(DenseMatrix::identity(2), vec![0.0, 0.0], Head::Regression);
        assert!(matches!(m.forward(&[1.0]), Err(Error::Config(_))));
    }

    #[test]
    fn layer_chain_is_validated() {
        let a = Layer::new(DenseMatrix::zeros(3, 2), vec![0.0; 3]).unwrap();
        let b = Layer::new(DenseMatrix::zeros(1, 4), vec![0.0]).unwrap();
        assert!(ModelParams::new(vec![a, b], Activation::Relu, Head::Regression).is_err());
        assert!(ModelParams::new(vec![], Activation::Relu, Head::Regression).is_err());
    }

    #[test]
    fn loss_examples() {
        let m = single(DenseMatrix::identity(2), vec![0.0, 0.0], Head::Regression);
        assert_eq!(
            m.per_example_loss(&reg(0, vec![0.3, 0.7], vec![0.3, 0.7]))
                .unwrap(),
            0.0
        );
        assert_eq!(
            m.per_example_loss(&reg(1, vec![1.0, 1.0], vec![0.0, 0.0]))
                .unwrap(),
            1.0
        );

        let k = 5;
        let c = single(DenseMatrix::zeros(k, 3), vec![0.4; k], Head::Classification);
        let ex = Example {
            id: 2,
            task_id: 0,
            features: vec![1.0, 2.0, 3.0],
            target: Target::Class(3),
        };
        assert!((c.per_example_loss(&ex).unwrap() - (k as f64).ln()).abs() < 1e-14);
    }

    #[test]
    fn target_shape_is_checked() {
        let m = single(DenseMatrix::identity(2), vec![0.0, 0.0], Head::Regression);
        let bad = Example {
            id: 0,
            task_id: 0,
            features: vec![1.0, 1.0],
            target: Target::Class(0),
        };
        assert!(m.per_example_loss(&bad).is_err());
    }

    #[test]
    fn zero_model_has_zero_gradient() {
        let m = single(DenseMatrix::zeros(1, 2), vec![0.0], Head::Regression);
        let (loss, g) = m.backward(&[reg(0, vec![0.0, 0.0], vec![0.0])]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.to_flat().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn scalar_closed_form_gradient() {
        let m = single(
            DenseMatrix::new(1, 1, vec![2.0]).unwrap(),
            vec![0.0],
            Head::Regression,
        );
        let (loss, g) = m.backward(&[reg(0, vec![1.0], vec![0.0])]).unwrap();
        assert_eq!(loss, 4.0);
        assert_eq!(g.layers()[0].weight.data(), &[4.0]);
    }

    #[test]
    fn empty_batch_is_usage_error() {
        let m = single(DenseMatrix::zeros(1, 1), vec![0.0], Head::Regression);
        assert!(matches!(m.backward(&[]), Err(Error::Usage(_))));
    }

    #[test]
    fn sgd_arithmetic() {
        let m = single(
            DenseMatrix::new(1, 1, vec![1.0]).unwrap(),
            vec![0.0],
            Head::Regression,
        );
        let g = Gradients {
            layers: vec![
                Layer::new(DenseMatrix::new(1, 1, vec![2.0]).unwrap(), vec![0.0]).unwrap(),
            ],
        };
        assert_eq!(m.sgd_step(&g, 0.0).unwrap(), m);
        assert_eq!(m.sgd_step(&g, 0.5).unwrap().to_flat()[0], 0.0);
        let twice = m.sgd_step(&g, 0.1).unwrap().sgd_step(&g, 0.1).unwrap();
        assert!((twice.to_flat()[0] - (1.0 - 2.0 * 0.1 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn sgd_rejects_shape_mismatch() {
        let m = single(DenseMatrix::zeros(1, 2), vec![0.0], Head::Regression);
        let g = Gradients {
            layers: vec![Layer::new(DenseMatrix::zeros(1, 3), vec![0.0]).unwrap()],
        };
        assert!(matches!(m.sgd_step(&g, 0.1), Err(Error::Config(_))));
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = ModelParams::init(&[3, 4, 2], Activation::Relu, Head::Classification, &mut rng)
            .unwrap();
        assert_eq!(m.with_flat(&m.to_flat()).unwrap(), m);
        assert_eq!(m.num_params(), 3 * 4 + 4 + 4 * 2 + 2);
    }
}
