//! Fully connected networks with hand-written backpropagation, and Adam.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, invalid, Error, Result};
use crate::linalg::{dot, gemm, Matrix};

/// Hidden-layer nonlinearity. The output layer is always linear.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => libm::tanh(x),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct FloatVec(#[serde(with = "crate::serial::f64_vec")] Vec<f64>);

#[derive(Serialize, Deserialize)]
struct MlpDoc {
    layer_dims: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<FloatVec>,
    activation_name: Activation,
}

/// Multilayer perceptron; `weights[l]` has shape `(layer_dims[l+1], layer_dims[l])`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpDoc", into = "MlpDoc")]
pub struct Mlp {
    layer_dims: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    activation: Activation,
}

impl From<Mlp> for MlpDoc {
    fn from(m: Mlp) -> Self {
        MlpDoc {
            layer_dims: m.layer_dims,
            weights: m.weights,
            biases: m.biases.into_iter().map(FloatVec).collect(),
            activation_name: m.activation,
        }
    }
}

impl TryFrom<MlpDoc> for Mlp {
    type Error = Error;

    fn try_from(d: MlpDoc) -> Result<Self> {
        Mlp::from_parts(
            d.layer_dims,
            d.weights,
            d.biases.into_iter().map(|b| b.0).collect(),
            d.activation_name,
        )
    }
}

fn check_dims(layer_dims: &[usize]) -> Result<()> {
    ensure!(
        layer_dims.len() >= 2,
        "an MLP needs at least an input and an output layer, got {:?}",
        layer_dims
    );
    ensure!(
        layer_dims.iter().all(|&d| d > 0),
        "layer dimensions must be positive, got {:?}",
        layer_dims
    );
    Ok(())
}

/// Intermediate activations from a batched forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    /// `activations[0]` is the input batch, the last entry is the output.
    pub activations: Vec<Matrix>,
}

impl Trace {
    pub fn output(&self) -> &Matrix {
        self.activations
            .last()
            .expect("trace holds the input at least")
    }
}

/// Parameter-shaped gradient (or moment) buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Gradients {
            weights: mlp
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: mlp.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// Flattened in the same order as [`Mlp::param`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }

    fn first_non_finite_layer(&self) -> Option<usize> {
        self.weights
            .iter()
            .zip(&self.biases)
            .position(|(w, b)| !w.as_slice().iter().chain(b).all(|x| x.is_finite()))
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases, tanh hidden layers.
    pub fn init<R: Rng + ?Sized>(layer_dims: &[usize], rng: &mut R) -> Result<Self> {
        check_dims(layer_dims)?;
        let mut weights = Vec::with_capacity(layer_dims.len() - 1);
        let mut biases = Vec::with_capacity(layer_dims.len() - 1);
        for pair in layer_dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let a = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-a..a))
                .collect();
            weights.push(Matrix::from_raw(fan_out, fan_in, data));
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Mlp {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            activation: Activation::Tanh,
        })
    }

    /// All-zero network of the given shape.
    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        check_dims(layer_dims)?;
        Ok(Mlp {
            layer_dims: layer_dims.to_vec(),
            weights: layer_dims
                .windows(2)
                .map(|p| Matrix::zeros(p[1], p[0]))
                .collect(),
            biases: layer_dims[1..].iter().map(|&d| vec![0.0; d]).collect(),
            activation: Activation::Tanh,
        })
    }

    pub fn from_parts(
        layer_dims: Vec<usize>,
        weights: Vec<Matrix>,
        biases: Vec<Vec<f64>>,
        activation: Activation,
    ) -> Result<Self> {
        check_dims(&layer_dims)?;
        let layers = layer_dims.len() - 1;
        ensure!(
            weights.len() == layers && biases.len() == layers,
            "expected {} weight matrices and bias vectors",
            layers
        );
        for l in 0..layers {
            ensure!(
                weights[l].shape() == (layer_dims[l + 1], layer_dims[l]),
                "layer {} weight shape {:?} does not match dims",
                l,
                weights[l].shape()
            );
            ensure!(
                biases[l].len() == layer_dims[l + 1],
                "layer {} bias length mismatch",
                l
            );
            ensure!(
                weights[l]
                    .as_slice()
                    .iter()
                    .chain(&biases[l])
                    .all(|x| x.is_finite()),
                "layer {} has non-finite parameters",
                l
            );
        }
        Ok(Mlp {
            layer_dims,
            weights,
            biases,
            activation,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn set_activation(&mut self, activation: Activation) {
        self.activation = activation;
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    pub fn num_params(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.as_slice().len() + b.len())
            .sum()
    }

    fn locate(&self, mut idx: usize) -> (usize, bool, usize) {
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let nw = w.as_slice().len();
            if idx < nw {
                return (l, true, idx);
            }
            idx -= nw;
            if idx < b.len() {
                return (l, false, idx);
            }
            idx -= b.len();
        }
        panic!("parameter index out of range");
    }

    /// Flat parameter view: layer by layer, weights (row-major) then biases.
    pub fn param(&self, idx: usize) -> f64 {
        match self.locate(idx) {
            (l, true, i) => self.weights[l].as_slice()[i],
            (l, false, i) => self.biases[l][i],
        }
    }

    pub fn set_param(&mut self, idx: usize, v: f64) {
        match self.locate(idx) {
            (l, true, i) => self.weights[l].as_mut_slice()[i] = v,
            (l, false, i) => self.biases[l][i] = v,
        }
    }

    fn act_for(&self, layer: usize) -> Activation {
        if layer + 1 == self.num_layers() {
            Activation::Identity
        } else {
            self.activation
        }
    }

    /// Single-input evaluation.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        ensure!(
            input.len() == self.input_dim(),
            "input has length {}, network expects {}",
            input.len(),
            self.input_dim()
        );
        let mut a = input.to_vec();
        for l in 0..self.num_layers() {
            a = self.layer_forward(l, &a);
        }
        Ok(a)
    }

    fn layer_forward(&self, l: usize, a: &[f64]) -> Vec<f64> {
        let act = self.act_for(l);
        self.weights[l]
            .row_iter()
            .zip(&self.biases[l])
            .map(|(w, b)| act.apply(dot(w, a) + b))
            .collect()
    }

    /// Output together with `∂⟨d_out, f(x)⟩/∂x` for a single input.
    pub fn forward_with_input_gradient(
        &self,
        input: &[f64],
        d_out: impl FnOnce(&[f64]) -> Vec<f64>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        ensure!(
            input.len() == self.input_dim(),
            "input has length {}, network expects {}",
            input.len(),
            self.input_dim()
        );
        let mut acts = Vec::with_capacity(self.num_layers() + 1);
        acts.push(input.to_vec());
        for l in 0..self.num_layers() {
            let next = self.layer_forward(l, acts.last().unwrap());
            acts.push(next);
        }
        let out = acts.last().unwrap().clone();
        let mut delta = d_out(&out);
        ensure!(delta.len() == out.len(), "output gradient length mismatch");
        for l in (0..self.num_layers()).rev() {
            let act = self.act_for(l);
            for (d, y) in delta.iter_mut().zip(&acts[l + 1]) {
                *d *= act.derivative_from_output(*y);
            }
            let mut prev = vec![0.0; self.layer_dims[l]];
            for (w, d) in self.weights[l].row_iter().zip(&delta) {
                for (p, wi) in prev.iter_mut().zip(w) {
                    *p += d * wi;
                }
            }
            delta = prev;
        }
        Ok((out, delta))
    }

    pub fn forward_batch(&self, inputs: &Matrix) -> Result<Matrix> {
        Ok(self.forward_trace(inputs)?.activations.pop().unwrap())
    }

    pub fn forward_trace(&self, inputs: &Matrix) -> Result<Trace> {
        ensure!(
            inputs.cols() == self.input_dim(),
            "batch has {} columns, network expects {}",
            inputs.cols(),
            self.input_dim()
        );
        let n = inputs.rows();
        let mut activations = Vec::with_capacity(self.num_layers() + 1);
        activations.push(inputs.clone());
        for l in 0..self.num_layers() {
            let mut z = Matrix::zeros(n, self.layer_dims[l + 1]);
            for i in 0..n {
                z.row_mut(i).copy_from_slice(&self.biases[l]);
            }
            gemm(
                1.0,
                activations.last().unwrap(),
                false,
                &self.weights[l],
                true,
                1.0,
                &mut z,
            );
            let act = self.act_for(l);
            if act != Activation::Identity {
                z.as_mut_slice().iter_mut().for_each(|x| *x = act.apply(*x));
            }
            activations.push(z);
        }
        Ok(Trace { activations })
    }

    /// Backpropagates `d_out = ∂L/∂output` (one row per batch entry).
    ///
    /// Returns parameter gradients and `∂L/∂input`.
    pub fn backward(&self, trace: &Trace, d_out: &Matrix) -> Result<(Gradients, Matrix)> {
        let out = trace.output();
        ensure!(
            d_out.shape() == out.shape(),
            "output gradient shape {:?} does not match output {:?}",
            d_out.shape(),
            out.shape()
        );
        let mut grads = Gradients::zeros_like(self);
        let mut delta = d_out.clone();
        for l in (0..self.num_layers()).rev() {
            let act = self.act_for(l);
            if act != Activation::Identity {
                for (d, y) in delta
                    .as_mut_slice()
                    .iter_mut()
                    .zip(trace.activations[l + 1].as_slice())
                {
                    *d *= act.derivative_from_output(*y);
                }
            }
            gemm(
                1.0,
                &delta,
                true,
                &trace.activations[l],
                false,
                0.0,
                &mut grads.weights[l],
            );
            let gb = &mut grads.biases[l];
            for r in delta.row_iter() {
                for (g, d) in gb.iter_mut().zip(r) {
                    *g += d;
                }
            }
            let mut prev = Matrix::zeros(delta.rows(), self.layer_dims[l]);
            gemm(1.0, &delta, false, &self.weights[l], false, 0.0, &mut prev);
            delta = prev;
        }
        Ok((grads, delta))
    }

    /// Mean squared Euclidean error over the batch, with exact gradients.
    pub fn mse_loss_and_gradients(
        &self,
        inputs: &Matrix,
        targets: &Matrix,
    ) -> Result<(f64, Gradients)> {
        ensure!(
            inputs.rows() == targets.rows(),
            "batch has {} inputs but {} targets",
            inputs.rows(),
            targets.rows()
        );
        ensure!(
            targets.cols() == self.output_dim(),
            "targets have {} columns, network outputs {}",
            targets.cols(),
            self.output_dim()
        );
        ensure!(inputs.rows() > 0, "empty batch");
        let trace = self.forward_trace(inputs)?;
        let (loss, d_out) = MseLoss.loss_and_gradient(trace.output(), targets);
        let (grads, _) = self.backward(&trace, &d_out)?;
        Ok((loss, grads))
    }
}

/// Loss over a batch of network outputs.
pub trait BatchLoss {
    /// Mean loss over rows and its gradient w.r.t. the outputs.
    fn loss_and_gradient(&self, outputs: &Matrix, targets: &Matrix) -> (f64, Matrix);

    fn loss(&self, outputs: &Matrix, targets: &Matrix) -> f64 {
        self.loss_and_gradient(outputs, targets).0
    }
}

/// `(1/B) Σ_i ‖y_i − t_i‖²`.
#[derive(Clone, Copy, Debug, Default)]
pub struct MseLoss;

impl BatchLoss for MseLoss {
    fn loss_and_gradient(&self, outputs: &Matrix, targets: &Matrix) -> (f64, Matrix) {
        let b = outputs.rows() as f64;
        let mut grad = Matrix::zeros(outputs.rows(), outputs.cols());
        let mut loss = 0.0;
        for ((g, y), t) in grad
            .as_mut_slice()
            .iter_mut()
            .zip(outputs.as_slice())
            .zip(targets.as_slice())
        {
            let e = y - t;
            loss += e * e;
            *g = 2.0 * e / b;
        }
        (loss / b, grad)
    }

    fn loss(&self, outputs: &Matrix, targets: &Matrix) -> f64 {
        let b = outputs.rows() as f64;
        outputs
            .as_slice()
            .iter()
            .zip(targets.as_slice())
            .map(|(y, t)| (y - t) * (y - t))
            .sum::<f64>()
            / b
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Gradients,
    v: Gradients,
}

impl AdamState {
    pub fn new(mlp: &Mlp, lr: f64) -> Self {
        AdamState {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Gradients::zeros_like(mlp),
            v: Gradients::zeros_like(mlp),
        }
    }

    /// Applies one update in place. The network is untouched when any
    /// gradient entry is non-finite.
    pub fn step(&mut self, mlp: &mut Mlp, grads: &Gradients) -> Result<()> {
        if grads.weights.len() != mlp.num_layers()
            || grads
                .weights
                .iter()
                .zip(&mlp.weights)
                .any(|(g, w)| g.shape() != w.shape())
            || grads
                .biases
                .iter()
                .zip(&mlp.biases)
                .any(|(g, b)| g.len() != b.len())
        {
            return Err(invalid!("gradient shapes do not mirror the network"));
        }
        if let Some(layer) = grads.first_non_finite_layer() {
            return Err(Error::NonFiniteGradient { layer });
        }
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - libm::pow(self.beta1, t);
        let c2 = 1.0 - libm::pow(self.beta2, t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for (((p, g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *p -= lr * mh / (libm::sqrt(vh) + eps);
            }
        };
        for l in 0..mlp.num_layers() {
            update(
                mlp.weights[l].as_mut_slice(),
                grads.weights[l].as_slice(),
                self.m.weights[l].as_mut_slice(),
                self.v.weights[l].as_mut_slice(),
            );
            update(
                &mut mlp.biases[l],
                &grads.biases[l],
                &mut self.m.biases[l],
                &mut self.v.biases[l],
            );
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn random_batch(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = rng_from_seed(seed);
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-1.5..1.5))
            .collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn init_shapes_and_bounds() {
        let mut rng = rng_from_seed(0);
        let m = Mlp::init(&[2, 4, 3], &mut rng).unwrap();
        assert_eq!(m.weights()[0].shape(), (4, 2));
        assert_eq!(m.weights()[1].shape(), (3, 4));
        assert_eq!(m.biases()[0].len(), 4);
        assert_eq!(m.biases()[1].len(), 3);
        assert!(m.biases().iter().flatten().all(|b| *b == 0.0));

        for seed in 0..50 {
            let m = Mlp::init(&[1, 1], &mut rng_from_seed(seed)).unwrap();
            assert!(m.weights()[0].get(0, 0).abs() < libm::sqrt(3.0));
        }
        assert!(matches!(
            Mlp::init(&[3], &mut rng),
            Err(Error::InvalidArgument(_))
        ));
        assert!(Mlp::init(&[], &mut rng).is_err());
        assert!(Mlp::init(&[2, 0, 1], &mut rng).is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let a = Mlp::init(&[3, 8, 2], &mut rng_from_seed(11)).unwrap();
        let b = Mlp::init(&[3, 8, 2], &mut rng_from_seed(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let m = Mlp::zeros(&[3, 5, 2]).unwrap();
        assert_eq!(m.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        let mut ones = Mlp::zeros(&[1, 1, 1]).unwrap();
        ones.weights_mut()[0].set(0, 0, 1.0);
        ones.weights_mut()[1].set(0, 0, 1.0);
        assert_eq!(ones.forward(&[0.0]).unwrap(), vec![0.0]);
        assert!(ones.forward(&[0.0, 1.0]).is_err());
    }

    /// Layer-by-layer evaluation with explicit loops.
    fn naive_forward(m: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        let layers = m.num_layers();
        for l in 0..layers {
            let w = &m.weights()[l];
            let mut next = vec![0.0; w.rows()];
            for j in 0..w.rows() {
                let mut s = m.biases()[l][j];
                for i in 0..w.cols() {
                    s += w.get(j, i) * a[i];
                }
                next[j] = if l + 1 < layers { libm::tanh(s) } else { s };
            }
            a = next;
        }
        a
    }

    #[test]
    fn forward_matches_naive_loops() {
        let mut rng = rng_from_seed(3);
        let mut m = Mlp::init(&[4, 7, 6, 3], &mut rng).unwrap();
        for b in m.biases_mut().iter_mut().flatten() {
            *b = rng.random_range(-0.5..0.5);
        }
        let x = [0.3, -1.2, 0.8, 2.0];
        let want = naive_forward(&m, &x);
        for (a, b) in m.forward(&x).unwrap().iter().zip(&want) {
            assert!((a - b).abs() < 1e-13);
        }
        let batch = Matrix::from_rows(&[x, [1.0, 0.0, -1.0, 0.5]]).unwrap();
        let out = m.forward_batch(&batch).unwrap();
        for (a, b) in out.row(0).iter().zip(&want) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_network_zero_targets_zero_loss() {
        let m = Mlp::zeros(&[2, 3, 2]).unwrap();
        let x = random_batch(4, 2, 1);
        let (loss, g) = m.mse_loss_and_gradients(&x, &Matrix::zeros(4, 2)).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.flat().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn duplicated_batch_gives_same_loss_and_gradients() {
        let m = Mlp::init(&[3, 6, 2], &mut rng_from_seed(5)).unwrap();
        let x = random_batch(5, 3, 6);
        let t = random_batch(5, 2, 7);
        let idx: Vec<usize> = (0..5).chain(0..5).collect();
        let (l1, g1) = m.mse_loss_and_gradients(&x, &t).unwrap();
        let (l2, g2) = m
            .mse_loss_and_gradients(&x.select_rows(&idx), &t.select_rows(&idx))
            .unwrap();
        assert!((l1 - l2).abs() <= 1e-14 * l1.abs().max(1.0));
        for (a, b) in g1.flat().iter().zip(g2.flat()) {
            assert!((a - b).abs() <= 1e-13 * a.abs().max(1e-3));
        }
    }

    #[test]
    fn backward_rejects_shape_mismatch() {
        let m = Mlp::zeros(&[2, 3, 2]).unwrap();
        assert!(m
            .mse_loss_and_gradients(&Matrix::zeros(3, 2), &Matrix::zeros(2, 2))
            .is_err());
        assert!(m
            .mse_loss_and_gradients(&Matrix::zeros(3, 2), &Matrix::zeros(3, 3))
            .is_err());
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let m = Mlp::init(&[3, 8, 4], &mut rng_from_seed(9)).unwrap();
        let x = [0.2, -0.4, 0.9];
        let target = [0.1, 0.0, -0.2, 0.3];
        let f = |x: &[f64]| -> f64 {
            m.forward(x)
                .unwrap()
                .iter()
                .zip(&target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        };
        let (_, g) = m
            .forward_with_input_gradient(&x, |y| {
                y.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect()
            })
            .unwrap();
        for i in 0..3 {
            let h = 1e-5;
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            assert!(
                (fd - g[i]).abs() <= 1e-6 * fd.abs().max(1e-3),
                "{fd} vs {}",
                g[i]
            );
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_parameters() {
        let mut m = Mlp::init(&[2, 3, 1], &mut rng_from_seed(2)).unwrap();
        let before = m.clone();
        let mut adam = AdamState::new(&m, 1e-3);
        adam.step(&mut m, &Gradients::zeros_like(&before)).unwrap();
        assert_eq!(m, before);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr_times_sign() {
        let mut m = Mlp::init(&[2, 3, 1], &mut rng_from_seed(2)).unwrap();
        let before = m.clone();
        let mut g = Gradients::zeros_like(&m);
        let n = m.num_params();
        let mut flat = Vec::new();
        for i in 0..n {
            flat.push(if i % 2 == 0 { 0.3 } else { -2.0 });
        }
        let mut k = 0;
        for (w, b) in g.weights.iter_mut().zip(g.biases.iter_mut()) {
            for x in w.as_mut_slice().iter_mut().chain(b.iter_mut()) {
                *x = flat[k];
                k += 1;
            }
        }
        let lr = 1e-3;
        let mut adam = AdamState::new(&m, lr);
        adam.step(&mut m, &g).unwrap();
        for i in 0..n {
            let delta = m.param(i) - before.param(i);
            let want = -lr * flat[i].signum();
            assert!((delta - want).abs() < 1e-9, "param {i}: {delta} vs {want}");
        }
    }

    #[test]
    fn adam_rejects_non_finite_gradient_with_layer() {
        let mut m = Mlp::init(&[2, 3, 1], &mut rng_from_seed(2)).unwrap();
        let before = m.clone();
        let mut g = Gradients::zeros_like(&m);
        g.biases[1][0] = f64::NAN;
        let mut adam = AdamState::new(&m, 1e-3);
        assert_eq!(
            adam.step(&mut m, &g),
            Err(Error::NonFiniteGradient { layer: 1 })
        );
        assert_eq!(m, before);
        assert_eq!(adam.step, 0);
    }

    #[test]
    fn adam_solves_scalar_quadratic() {
        // f(w) = (w - 3)^2 through a 1-1 linear network's bias.
        let mut m = Mlp::zeros(&[1, 1]).unwrap();
        let mut adam = AdamState::new(&m, 0.1);
        for _ in 0..200 {
            let w = m.biases()[0][0];
            let mut g = Gradients::zeros_like(&m);
            g.biases[0][0] = 2.0 * (w - 3.0);
            adam.step(&mut m, &g).unwrap();
        }
        // scalar reference loop
        let (mut w, mut mm, mut vv) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=200 {
            let g = 2.0 * (w - 3.0);
            mm = 0.9 * mm + 0.1 * g;
            vv = 0.999 * vv + 0.001 * g * g;
            let mh = mm / (1.0 - libm::pow(0.9, t as f64));
            let vh = vv / (1.0 - libm::pow(0.999, t as f64));
            w -= 0.1 * mh / (libm::sqrt(vh) + 1e-8);
        }
        let got = m.biases()[0][0];
        assert_eq!(got.to_bits(), w.to_bits());
        assert!((got - 3.0).abs() < 0.05, "{got}");
    }

    #[test]
    fn json_roundtrip_is_exact() {
        let m = Mlp::init(&[3, 5, 2], &mut rng_from_seed(4)).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        assert!(text.contains("\"activation_name\":\"tanh\""));
        let back: Mlp = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        let bad = text.replace("\"layer_dims\":[3,5,2]", "\"layer_dims\":[3,4,2]");
        assert!(serde_json::from_str::<Mlp>(&bad).is_err());
    }
}
