//! Fully-connected network with bipolar-sigmoid hidden layers and a linear
//! output layer.

use nalgebra::{DMatrix, DMatrixView, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LAYERS: [usize; 5] = [12, 50, 50, 50, 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `2 / (1 + e^(−x)) − 1`
    BipolarSigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::BipolarSigmoid => bipolar_sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation value.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::BipolarSigmoid => 0.5 * (1.0 - y * y),
            Activation::Identity => 1.0,
        }
    }
}

/// `e^x`, branch-free so that loops over it vectorize. Range reduction
/// `x = n ln 2 + r` with `|r| ≤ ln 2 / 2`, then a degree-13 Taylor polynomial
/// (truncation below 1e-17 relative). Inputs are clamped to ±708.
#[inline(always)]
pub fn exp_fast(x: f64) -> f64 {
    const SHIFT: f64 = 6755399441055744.0; // 1.5 · 2^52
    const LN2_HI: f64 = 6.93147180369123816490e-01;
    const LN2_LO: f64 = 1.90821492927058770002e-10;
    const C: [f64; 14] = [
        1.0,
        1.0,
        1.0 / 2.0,
        1.0 / 6.0,
        1.0 / 24.0,
        1.0 / 120.0,
        1.0 / 720.0,
        1.0 / 5040.0,
        1.0 / 40320.0,
        1.0 / 362880.0,
        1.0 / 3628800.0,
        1.0 / 39916800.0,
        1.0 / 479001600.0,
        1.0 / 6227020800.0,
    ];
    let x = x.max(-708.0).min(708.0);
    let t = x * std::f64::consts::LOG2_E + SHIFT;
    let n = t - SHIFT;
    let r = (x - n * LN2_HI) - n * LN2_LO;
    let mut p = C[13];
    for &c in C[..13].iter().rev() {
        p = p * r + c;
    }
    // the low mantissa bits of `t` hold n
    let k = (t.to_bits() as i64).wrapping_sub(SHIFT.to_bits() as i64);
    p * f64::from_bits(((k + 1023) << 52) as u64)
}

/// `2 / (1 + e^(−x)) − 1`
#[inline(always)]
pub fn bipolar_sigmoid(x: f64) -> f64 {
    2.0 / (1.0 + exp_fast(-x)) - 1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `outputs × inputs`
    pub weights: DMatrix<f64>,
    pub biases: DVector<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    pub layers: Vec<Layer>,
}

/// Gradient with the same shapes as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl Gradient {
    pub fn zeros_like(net: &MlpNetwork) -> Self {
        Self {
            weights: net.layers.iter().map(|l| DMatrix::zeros(l.outputs(), l.inputs())).collect(),
            biases: net.layers.iter().map(|l| DVector::zeros(l.outputs())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradient) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    /// Same ordering as [`MlpNetwork::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b.as_slice());
        }
        out
    }
}

impl MlpNetwork {
    /// Glorot-uniform weights, zero biases, bipolar sigmoid on hidden layers.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidArgument(format!("bad layer sizes {sizes:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    weights: DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-limit..limit)),
                    biases: DVector::zeros(fan_out),
                    activation: if k == last {
                        Activation::Identity
                    } else {
                        Activation::BipolarSigmoid
                    },
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        let mut net = Self::new(sizes, 0)?;
        for l in &mut net.layers {
            l.weights.fill(0.0);
        }
        Ok(net)
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs()];
        s.extend(self.layers.iter().map(Layer::outputs));
        s
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_size(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Flat parameter vector: per layer, weights (column-major) then biases.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(l.biases.as_slice());
        }
        out
    }

    pub fn set_parameters(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                flat.len()
            )));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let n = l.weights.len();
            l.weights.as_mut_slice().copy_from_slice(&flat[at..at + n]);
            at += n;
            let n = l.biases.len();
            l.biases.as_mut_slice().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.biases.iter()).all(|v| v.is_finite()))
    }

    /// Forward pass for one already-scaled input.
    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut a = DVector::from_column_slice(input);
        for l in &self.layers {
            let mut z = &l.weights * &a + &l.biases;
            z.apply(|v| *v = l.activation.apply(*v));
            a = z;
        }
        a.as_slice().to_vec()
    }

    /// Activations of every layer for one input, input first.
    fn activations(&self, input: &[f64]) -> Vec<DVector<f64>> {
        let mut acts = vec![DVector::from_column_slice(input)];
        for l in &self.layers {
            let mut z = &l.weights * &acts[acts.len() - 1] + &l.biases;
            z.apply(|v| *v = l.activation.apply(*v));
            acts.push(z);
        }
        acts
    }

    /// Exact gradient of `½‖forward(x) − y‖²`.
    pub fn backward(&self, input: &[f64], target: &[f64]) -> Gradient {
        let acts = self.activations(input);
        let out = &acts[acts.len() - 1];
        let mut delta = out - DVector::from_column_slice(target);
        let mut grad = Gradient::zeros_like(self);
        for k in (0..self.layers.len()).rev() {
            let l = &self.layers[k];
            let y = &acts[k + 1];
            delta.zip_apply(y, |d, yv| *d *= l.activation.derivative_from_output(yv));
            grad.weights[k] = &delta * acts[k].transpose();
            grad.biases[k] = delta.clone();
            if k > 0 {
                delta = l.weights.transpose() * &delta;
            }
        }
        grad
    }

    /// Forward pass on a batch stored column-wise (`inputs × batch`).
    pub fn forward_batch(&self, inputs: DMatrixView<'_, f64>) -> DMatrix<f64> {
        let mut a = inputs.into_owned();
        for l in &self.layers {
            a = self.affine(l, &a);
        }
        a
    }

    fn affine(&self, l: &Layer, a: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = &l.weights * a;
        for mut col in z.column_iter_mut() {
            col += &l.biases;
            col.apply(|v| *v = l.activation.apply(*v));
        }
        z
    }

    /// Summed gradient and summed squared error over a batch.
    pub fn batch_gradient(
        &self,
        inputs: DMatrixView<'_, f64>,
        targets: DMatrixView<'_, f64>,
    ) -> (Gradient, f64) {
        let mut acts = vec![inputs.into_owned()];
        for l in &self.layers {
            let next = self.affine(l, &acts[acts.len() - 1]);
            acts.push(next);
        }
        let mut delta = &acts[acts.len() - 1] - targets;
        let sse = delta.norm_squared();
        let mut grad = Gradient::zeros_like(self);
        for k in (0..self.layers.len()).rev() {
            let l = &self.layers[k];
            if l.activation != Activation::Identity {
                delta.zip_apply(&acts[k + 1], |d, y| *d *= l.activation.derivative_from_output(y));
            }
            grad.weights[k] = &delta * acts[k].transpose();
            grad.biases[k] = delta.column_sum();
            if k > 0 {
                delta = l.weights.transpose() * &delta;
            }
        }
        (grad, sse)
    }
}

/// Inference copy of a network. Weights are row-major with rows and columns
/// padded to multiples of four, so the mat-vec runs on 4×4 register blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedMlp {
    layers: Vec<PackedLayer>,
    inputs: usize,
    outputs: usize,
    width: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct PackedLayer {
    /// Padded column count (row stride).
    cols: usize,
    /// Padded row count.
    rows: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
    activation: Activation,
}

const BLOCK: usize = 4;

fn padded(n: usize) -> usize {
    n.div_ceil(BLOCK) * BLOCK
}

/// `y = W x + b` for one padded layer, four rows at a time.
#[inline(always)]
fn affine_blocked(l: &PackedLayer, x: &[f64], y: &mut [f64]) {
    let cols = l.cols;
    let x = &x[..cols];
    let blocks = l.weights.chunks_exact(BLOCK * cols).zip(l.biases.chunks_exact(BLOCK)).zip(y.chunks_exact_mut(BLOCK));
    for ((w, b), y) in blocks {
        let (w0, rest) = w.split_at(cols);
        let (w1, rest) = rest.split_at(cols);
        let (w2, w3) = rest.split_at(cols);
        let mut a = [[0.0; BLOCK]; BLOCK];
        let cols4 = x
            .chunks_exact(BLOCK)
            .zip(w0.chunks_exact(BLOCK))
            .zip(w1.chunks_exact(BLOCK))
            .zip(w2.chunks_exact(BLOCK))
            .zip(w3.chunks_exact(BLOCK));
        for ((((xv, r0), r1), r2), r3) in cols4 {
            for i in 0..BLOCK {
                a[0][i] += r0[i] * xv[i];
                a[1][i] += r1[i] * xv[i];
                a[2][i] += r2[i] * xv[i];
                a[3][i] += r3[i] * xv[i];
            }
        }
        for r in 0..BLOCK {
            y[r] = (a[r][0] + a[r][2]) + (a[r][1] + a[r][3]) + b[r];
        }
    }
}

impl PackedMlp {
    pub fn new(net: &MlpNetwork) -> Self {
        let layers: Vec<PackedLayer> = net
            .layers
            .iter()
            .map(|l| {
                let (cols, rows) = (padded(l.inputs()), padded(l.outputs()));
                let mut weights = vec![0.0; rows * cols];
                let mut biases = vec![0.0; rows];
                for r in 0..l.outputs() {
                    for c in 0..l.inputs() {
                        weights[r * cols + c] = l.weights[(r, c)];
                    }
                    biases[r] = l.biases[r];
                }
                PackedLayer { cols, rows, weights, biases, activation: l.activation }
            })
            .collect();
        let width = layers.iter().flat_map(|l| [l.cols, l.rows]).max().unwrap_or(0);
        Self { layers, inputs: net.input_size(), outputs: net.output_size(), width }
    }

    pub fn input_size(&self) -> usize {
        self.inputs
    }

    pub fn output_size(&self) -> usize {
        self.outputs
    }

    /// Forward pass into `out`. Agrees with [`MlpNetwork::forward`] up to
    /// summation order. Padding rows see zero weights and bias, and the
    /// activations used here map zero to zero, so padding stays zero.
    pub fn forward_into(&self, input: &[f64], out: &mut [f64]) {
        assert_eq!(input.len(), self.inputs, "input width");
        assert_eq!(out.len(), self.outputs, "output width");
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2, checked just above.
            unsafe { self.forward_avx2(input, out) };
            return;
        }
        self.forward_generic(input, out);
    }

    /// Same arithmetic in the same order, compiled with 256-bit vectors.
    /// No FMA contraction, so results match the generic path bit for bit.
    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn forward_avx2(&self, input: &[f64], out: &mut [f64]) {
        self.forward_generic(input, out);
    }

    #[inline(always)]
    fn forward_generic(&self, input: &[f64], out: &mut [f64]) {
        const STACK: usize = 128;
        let mut stack = [0.0; 2 * STACK];
        let mut heap = Vec::new();
        let buf: &mut [f64] = if self.width <= STACK {
            &mut stack[..2 * self.width]
        } else {
            heap.resize(2 * self.width, 0.0);
            &mut heap
        };
        let (cur, next) = buf.split_at_mut(self.width);
        let (mut cur, mut next) = (cur, next);
        cur[..input.len()].copy_from_slice(input);
        for l in &self.layers {
            affine_blocked(l, cur, next);
            let z = &mut next[..l.rows];
            if l.activation == Activation::BipolarSigmoid {
                for v in z.iter_mut() {
                    *v = bipolar_sigmoid(*v);
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        out.copy_from_slice(&cur[..self.outputs]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_network_outputs_zero() {
        let net = MlpNetwork::zeros(&DEFAULT_LAYERS).unwrap();
        assert_eq!(net.forward(&[0.3; 12]), vec![0.0; 3]);
        assert_eq!(net.parameter_count(), 12 * 50 + 50 + 2 * (50 * 50 + 50) + 50 * 3 + 3);
    }

    #[test]
    fn toy_network_by_hand() {
        let mut net = MlpNetwork::zeros(&[1, 1, 1]).unwrap();
        net.layers[0].weights[(0, 0)] = 1.0;
        net.layers[1].weights[(0, 0)] = 1.0;
        let hidden = 2.0 / (1.0 + (-0.5f64).exp()) - 1.0;
        assert!((net.forward(&[0.5])[0] - hidden).abs() < 1e-15);
    }

    #[test]
    fn hidden_units_saturate() {
        let net = MlpNetwork::new(&[4, 6, 2], 3).unwrap();
        let first = &net.layers[0];
        let x = DVector::from_vec(vec![1e6, -2e6, 3e6, 0.5e6]);
        let z = &first.weights * &x;
        for v in z.iter() {
            let s = Activation::BipolarSigmoid.apply(*v);
            assert!((s.abs() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn output_bias_gradient_is_error() {
        let net = MlpNetwork::new(&[3, 4, 2], 9).unwrap();
        let x = [0.1, -0.2, 0.3];
        let y = [0.5, -0.5];
        let out = net.forward(&x);
        let g = net.backward(&x, &y);
        assert!((g.biases[1][0] - (out[0] - y[0])).abs() < 1e-15);
        assert!((g.biases[1][1] - (out[1] - y[1])).abs() < 1e-15);
        let exact = net.backward(&x, &out);
        assert!(exact.flatten().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn batch_gradient_equals_sum_of_samples() {
        let net = MlpNetwork::new(&[3, 5, 5, 2], 1).unwrap();
        let xs = DMatrix::from_fn(3, 4, |r, c| ((r * 7 + c * 3) as f64 * 0.37).sin());
        let ys = DMatrix::from_fn(2, 4, |r, c| ((r * 5 + c) as f64 * 0.61).cos());
        let (g, sse) = net.batch_gradient(xs.as_view(), ys.as_view());
        let mut sum = Gradient::zeros_like(&net);
        let mut sse_ref = 0.0;
        for c in 0..4 {
            let x: Vec<f64> = xs.column(c).iter().copied().collect();
            let y: Vec<f64> = ys.column(c).iter().copied().collect();
            sum.add_assign(&net.backward(&x, &y));
            let out = net.forward(&x);
            sse_ref += out.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        for (a, b) in g.flatten().iter().zip(sum.flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((sse - sse_ref).abs() < 1e-12);
    }

    #[test]
    fn parameters_round_trip() {
        let net = MlpNetwork::new(&[2, 3, 1], 5).unwrap();
        let mut other = MlpNetwork::zeros(&[2, 3, 1]).unwrap();
        other.set_parameters(&net.parameters()).unwrap();
        assert_eq!(net, other);
        assert!(other.set_parameters(&[0.0; 3]).is_err());
    }

    #[test]
    fn exp_kernel_matches_libm() {
        let mut worst: f64 = 0.0;
        for k in -70_000..=70_000 {
            let x = k as f64 * 0.01 + 0.003;
            let (a, b) = (exp_fast(x), x.exp());
            worst = worst.max(((a - b) / b).abs());
        }
        assert!(worst < 4.0 * f64::EPSILON, "worst relative error {worst}");
        assert_eq!(exp_fast(0.0), 1.0);
        assert!(exp_fast(-1e6) > 0.0 && exp_fast(-1e6) < 1e-300);
        assert!(exp_fast(1e6).is_finite());
    }

    #[test]
    fn packed_network_matches_reference_forward() {
        for (sizes, seed) in [(vec![12, 50, 50, 50, 3], 1), (vec![3, 5, 2], 2), (vec![1, 1, 1], 3), (vec![7, 9, 13, 4], 4)] {
            let mut net = MlpNetwork::new(&sizes, seed).unwrap();
            for (k, l) in net.layers.iter_mut().enumerate() {
                l.biases.iter_mut().enumerate().for_each(|(i, b)| *b = 0.05 * (i + k) as f64 - 0.2);
            }
            let packed = PackedMlp::new(&net);
            let x: Vec<f64> = (0..sizes[0]).map(|i| (i as f64 * 0.7).sin()).collect();
            let mut out = vec![0.0; *sizes.last().unwrap()];
            packed.forward_into(&x, &mut out);
            for (a, b) in out.iter().zip(net.forward(&x)) {
                assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{sizes:?}: {a} vs {b}");
            }
            let mut generic = vec![0.0; out.len()];
            packed.forward_generic(&x, &mut generic);
            assert_eq!(generic, out);
        }
    }
}
