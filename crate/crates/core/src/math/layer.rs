use rand::Rng;

use super::matrix::{axpy, dot, dot_many, DenseMatrix};
use crate::error::{DrError, Result};

/// `y = W·x + b`
#[derive(Clone, Debug, PartialEq)]
pub struct AffineLayer {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

impl AffineLayer {
    pub fn new(weight: DenseMatrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(DrError::shape(format!(
                "bias length {} does not match {} weight rows",
                bias.len(),
                weight.rows()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: DenseMatrix::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    pub fn random<R: Rng + ?Sized>(input: usize, output: usize, std: f64, rng: &mut R) -> Self {
        Self {
            weight: DenseMatrix::random_normal(output, input, std, rng),
            bias: vec![0.0; output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }

    fn forward_unchecked(&self, input: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        self.weight.matvec_acc(input, &mut out);
        out
    }
}

pub fn affine_forward(layer: &AffineLayer, input: &[f64]) -> Result<Vec<f64>> {
    if input.len() != layer.input_dim() {
        return Err(DrError::shape(format!(
            "input length {} does not match layer input width {}",
            input.len(),
            layer.input_dim()
        )));
    }
    Ok(layer.forward_unchecked(input))
}

#[inline]
pub fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Stack of affine layers with ReLU between consecutive layers (none after
/// the last one). Also used as the gradient container for itself.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<AffineLayer>,
}

/// Intermediate values from [`Mlp::forward_traced`], needed for backprop.
#[derive(Clone, Debug)]
pub struct MlpTrace {
    /// Input of every layer; `inputs[0]` is the network input.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of every layer; the last entry is the network output.
    outputs: Vec<Vec<f64>>,
}

impl MlpTrace {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().expect("non-empty mlp")
    }
}

impl Mlp {
    pub fn from_layers(layers: Vec<AffineLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(DrError::shape("an mlp needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(DrError::shape(format!(
                    "layer output {} feeds layer input {}",
                    pair[0].output_dim(),
                    pair[1].input_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// He-initialised hidden layers; the output layer uses a 1/fan-in variance.
    pub fn random<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        output: usize,
        rng: &mut R,
    ) -> Self {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input);
        widths.extend_from_slice(hidden);
        widths.push(output);
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let fan_in = widths[i].max(1) as f64;
                let std = if i + 1 < n {
                    (2.0 / fan_in).sqrt()
                } else {
                    (1.0 / fan_in).sqrt()
                };
                AffineLayer::random(widths[i], widths[i + 1], std, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(input: usize, hidden: &[usize], output: usize) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        let layers = widths
            .windows(2)
            .map(|w| AffineLayer::zeros(w[0], w[1]))
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| AffineLayer::zeros(l.input_dim(), l.output_dim()))
                .collect(),
        }
    }

    pub fn layers(&self) -> &[AffineLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [AffineLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty mlp").output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(AffineLayer::param_count).sum()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(DrError::shape(format!(
                "mlp input length {} != {}",
                input.len(),
                self.input_dim()
            )));
        }
        let first = self.layers[0].forward_unchecked(input);
        Ok(self.forward_from_first(first))
    }

    /// Continue a forward pass given the pre-activation output of layer 0.
    pub fn forward_from_first(&self, mut h: Vec<f64>) -> Vec<f64> {
        for layer in &self.layers[1..] {
            relu_in_place(&mut h);
            h = layer.forward_unchecked(&h);
        }
        h
    }

    /// [`Mlp::forward_from_first`] over a batch. Each weight row is applied
    /// to every batch member before moving on, so it is read from memory once.
    pub(crate) fn forward_batch_from_first(&self, mut batch: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        for layer in &self.layers[1..] {
            for h in &mut batch {
                relu_in_place(h);
            }
            let mut out: Vec<Vec<f64>> = batch.iter().map(|_| layer.bias.clone()).collect();
            for (r, row) in layer
                .weight
                .values()
                .chunks_exact(layer.weight.cols())
                .enumerate()
            {
                let mut outs = out.chunks_exact_mut(4);
                let mut hs = batch.chunks_exact(4);
                for (o, h) in (&mut outs).zip(&mut hs) {
                    let v = dot_many(row, [&h[0], &h[1], &h[2], &h[3]]);
                    for (oi, vi) in o.iter_mut().zip(v) {
                        oi[r] += vi;
                    }
                }
                for (o, h) in outs.into_remainder().iter_mut().zip(hs.remainder()) {
                    o[r] += dot(row, h);
                }
            }
            batch = out;
        }
        batch
    }

    pub fn forward_traced(&self, input: &[f64]) -> Result<MlpTrace> {
        if input.len() != self.input_dim() {
            return Err(DrError::shape(format!(
                "mlp input length {} != {}",
                input.len(),
                self.input_dim()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let y = layer.forward_unchecked(&x);
            inputs.push(x);
            if i + 1 < self.layers.len() {
                let mut a = y.clone();
                relu_in_place(&mut a);
                x = a;
            } else {
                x = Vec::new();
            }
            outputs.push(y);
        }
        Ok(MlpTrace { inputs, outputs })
    }

    /// Accumulate `scale · ∂L/∂θ` into `grads` given `grad_output = ∂L/∂output`.
    /// Adds `scale · ∂L/∂input` into `grad_input` when provided.
    pub fn backward(
        &self,
        trace: &MlpTrace,
        grad_output: &[f64],
        scale: f64,
        grads: &mut Mlp,
        grad_input: Option<&mut [f64]>,
    ) {
        let mut g = grad_output.to_vec();
        let n = self.layers.len();
        let mut grad_input = grad_input;
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            let gl = &mut grads.layers[i];
            gl.weight.add_outer(scale, &g, &trace.inputs[i]);
            axpy(scale, &g, &mut gl.bias);
            if i > 0 {
                let mut gin = vec![0.0; layer.input_dim()];
                layer.weight.transpose_matvec_acc(&g, &mut gin);
                for (gi, &pre) in gin.iter_mut().zip(&trace.outputs[i - 1]) {
                    if pre <= 0.0 {
                        *gi = 0.0;
                    }
                }
                g = gin;
            } else if let Some(out) = grad_input.take() {
                let mut gin = vec![0.0; layer.input_dim()];
                layer.weight.transpose_matvec_acc(&g, &mut gin);
                axpy(scale, &gin, out);
            }
        }
    }

    /// Parameter tensors in a fixed order: (weight, bias) per layer.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.values(), l.bias.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.values_mut(), l.bias.as_mut_slice()])
            .collect()
    }
}
