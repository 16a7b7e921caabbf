//! A small differentiable 1-D convolutional network with explicit
//! reverse-mode passes.
//!
//! Everything flows per sample as a `(channels, positions)` matrix; dense
//! outputs are `(N, 1)`. The backward pass can capture the gradient at any
//! top-level layer output and supports the guided rectifier rule.

mod layers;
pub mod train;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use layers::{Conv1d, Dense, ResidualBlock};

use crate::error::{Error, Result};

/// How gradients pass backwards through rectifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReluRule {
    #[default]
    Standard,
    /// Zero the backward signal where the forward input was negative or the
    /// incoming gradient is negative.
    Guided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Conv1d(Conv1d),
    Relu,
    Residual(ResidualBlock),
    GlobalAvgPool,
    Dense(Dense),
}

impl Layer {
    /// Whether the output keeps a positional axis (usable for class activation maps).
    pub fn is_spatial(&self) -> bool {
        matches!(self, Layer::Conv1d(_) | Layer::Relu | Layer::Residual(_))
    }

    pub fn has_rectifier(&self) -> bool {
        matches!(self, Layer::Relu | Layer::Residual(_))
    }

    fn forward(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, Option<layers::ResidualCache>) {
        match self {
            Layer::Conv1d(c) => (c.forward(x), None),
            Layer::Relu => (x.mapv(|v| v.max(0.0)), None),
            Layer::Residual(block) => {
                let (out, cache) = block.forward(x);
                (out, Some(cache))
            }
            Layer::GlobalAvgPool => {
                let t = x.ncols() as f64;
                let pooled = x.sum_axis(ndarray::Axis(1)).mapv(|v| v / t);
                (pooled.insert_axis(ndarray::Axis(1)), None)
            }
            Layer::Dense(d) => (d.forward(x), None),
        }
    }

    fn backward(
        &self,
        input: ArrayView2<'_, f64>,
        cache: Option<&layers::ResidualCache>,
        grad_out: &Array2<f64>,
        rule: ReluRule,
        param_grads: Option<&mut Layer>,
    ) -> Array2<f64> {
        match self {
            Layer::Conv1d(c) => {
                let pg = param_grads.map(|l| match l {
                    Layer::Conv1d(g) => g,
                    _ => unreachable!("gradient buffer layout mirrors the network"),
                });
                c.backward(input, grad_out, pg)
            }
            Layer::Relu => layers::relu_backward(input, grad_out, rule),
            Layer::Residual(block) => {
                let pg = param_grads.map(|l| match l {
                    Layer::Residual(g) => g,
                    _ => unreachable!("gradient buffer layout mirrors the network"),
                });
                block.backward(input, cache.expect("residual cache"), grad_out, rule, pg)
            }
            Layer::GlobalAvgPool => {
                let (c, t) = input.dim();
                Array2::from_shape_fn((c, t), |(ch, _)| grad_out[[ch, 0]] / t as f64)
            }
            Layer::Dense(d) => {
                let pg = param_grads.map(|l| match l {
                    Layer::Dense(g) => g,
                    _ => unreachable!("gradient buffer layout mirrors the network"),
                });
                d.backward(input, grad_out, pg)
            }
        }
    }

    fn params(&self) -> Vec<&[f64]> {
        match self {
            Layer::Conv1d(c) => c.params(),
            Layer::Residual(b) => b.params(),
            Layer::Dense(d) => d.params(),
            Layer::Relu | Layer::GlobalAvgPool => Vec::new(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Conv1d(c) => c.params_mut(),
            Layer::Residual(b) => b.params_mut(),
            Layer::Dense(d) => d.params_mut(),
            Layer::Relu | Layer::GlobalAvgPool => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedLayer {
    pub name: String,
    pub layer: Layer,
}

/// Sequential network over `(channels, positions)` inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<NamedLayer>,
}

/// Forward state for one sample, consumed by [`Network::backward`].
#[derive(Debug, Clone)]
pub struct Trace {
    input: Array2<f64>,
    outputs: Vec<Array2<f64>>,
    caches: Vec<Option<layers::ResidualCache>>,
}

impl Trace {
    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().unwrap_or(&self.input)
    }

    pub fn layer_output(&self, index: usize) -> &Array2<f64> {
        &self.outputs[index]
    }
}

/// Result of one backward pass.
#[derive(Debug, Clone)]
pub struct Backward {
    pub input_grad: Array2<f64>,
    /// `(layer index, d/d layer output)` for each requested capture, in request order.
    pub captures: Vec<(usize, Array2<f64>)>,
}

impl Network {
    pub fn new(layers: Vec<NamedLayer>) -> Result<Self> {
        for (i, l) in layers.iter().enumerate() {
            if layers[..i].iter().any(|o| o.name == l.name) {
                return Err(Error::InvalidParameter(format!("duplicate layer name `{}`", l.name)));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[NamedLayer] {
        &self.layers
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub fn layer_names(&self) -> Vec<&str> {
        self.layers.iter().map(|l| l.name.as_str()).collect()
    }

    pub fn has_rectifiers(&self) -> bool {
        self.layers.iter().any(|l| l.layer.has_rectifier())
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.layer.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.layer.params_mut()).collect()
    }

    /// Same architecture with every parameter set to zero (a gradient buffer).
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for p in z.params_mut() {
            p.fill(0.0);
        }
        z
    }

    /// SHA-256 of architecture names and little-endian parameter bytes.
    pub fn weights_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for l in &self.layers {
            hasher.update(l.name.as_bytes());
            for p in l.layer.params() {
                hasher.update((p.len() as u64).to_le_bytes());
                for v in p {
                    hasher.update(v.to_le_bytes());
                }
            }
        }
        hex::encode(hasher.finalize())
    }

    /// Output shape for a `(channels, positions)` input, or a description of
    /// the first layer that cannot accept it.
    pub fn output_shape(&self, channels: usize, positions: usize) -> Result<(usize, usize)> {
        let mut shape = (channels, positions);
        for l in &self.layers {
            let fail = |why: String| Error::ModelForward(format!("layer `{}`: {why}", l.name));
            shape = match &l.layer {
                Layer::Conv1d(c) => conv_shape(c, shape).map_err(fail)?,
                Layer::Residual(b) => {
                    let s = conv_shape(&b.conv_a, shape).map_err(fail)?;
                    conv_shape(&b.conv_b, s).map_err(fail)?
                }
                Layer::Relu => shape,
                Layer::GlobalAvgPool => (shape.0, 1),
                Layer::Dense(d) => {
                    if shape.0 * shape.1 != d.weight.ncols() {
                        return Err(fail(format!(
                            "expects {} inputs, got {}x{}",
                            d.weight.ncols(),
                            shape.0,
                            shape.1
                        )));
                    }
                    (d.weight.nrows(), 1)
                }
            };
        }
        Ok(shape)
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut cur = x.to_owned();
        for l in &self.layers {
            cur = l.layer.forward(cur.view()).0;
        }
        cur
    }

    pub fn forward_traced(&self, x: ArrayView2<'_, f64>) -> Trace {
        let mut outputs: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        let mut caches = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let input = if i == 0 { x } else { outputs[i - 1].view() };
            let (out, cache) = l.layer.forward(input);
            outputs.push(out);
            caches.push(cache);
        }
        Trace { input: x.to_owned(), outputs, caches }
    }

    /// Reverse pass from `grad_out` (shaped like the network output).
    ///
    /// `capture` lists layer indices whose output gradient should be kept.
    /// When `param_grads` is given, parameter gradients are accumulated into it.
    pub fn backward(
        &self,
        trace: &Trace,
        grad_out: Array2<f64>,
        rule: ReluRule,
        capture: &[usize],
        mut param_grads: Option<&mut Network>,
    ) -> Backward {
        let mut captures: Vec<Option<Array2<f64>>> = vec![None; capture.len()];
        let mut grad = grad_out;
        for i in (0..self.layers.len()).rev() {
            for (slot, &idx) in captures.iter_mut().zip(capture) {
                if idx == i {
                    *slot = Some(grad.clone());
                }
            }
            let input = if i == 0 { trace.input.view() } else { trace.outputs[i - 1].view() };
            let pg = param_grads.as_deref_mut().map(|n| &mut n.layers[i].layer);
            grad = self.layers[i].layer.backward(input, trace.caches[i].as_ref(), &grad, rule, pg);
        }
        Backward {
            input_grad: grad,
            captures: capture
                .iter()
                .zip(captures)
                .map(|(&i, g)| (i, g.expect("capture index within network")))
                .collect(),
        }
    }

    /// The desk-scale reference architecture: a stem convolution followed by
    /// three residual blocks (`conv1`..`conv3`), global average pooling and a
    /// linear head. He-initialized from `rng`.
    pub fn reference(in_leads: usize, num_outputs: usize, rng: &mut impl Rng) -> Self {
        let layers = vec![
            NamedLayer { name: "stem".into(), layer: Layer::Conv1d(Conv1d::he(in_leads, 8, 7, 2, 3, rng)) },
            NamedLayer { name: "stem_relu".into(), layer: Layer::Relu },
            NamedLayer { name: "conv1".into(), layer: Layer::Residual(ResidualBlock::he(8, 8, 5, 2, rng)) },
            NamedLayer { name: "conv2".into(), layer: Layer::Residual(ResidualBlock::he(8, 16, 5, 2, rng)) },
            NamedLayer { name: "conv3".into(), layer: Layer::Residual(ResidualBlock::he(16, 16, 5, 2, rng)) },
            NamedLayer { name: "pool".into(), layer: Layer::GlobalAvgPool },
            NamedLayer { name: "fc".into(), layer: Layer::Dense(Dense::he(16, num_outputs, rng)) },
        ];
        Self::new(layers).expect("reference layer names are unique")
    }
}

fn conv_shape(c: &Conv1d, (channels, positions): (usize, usize)) -> std::result::Result<(usize, usize), String> {
    let (cout, cin, k) = c.weight.dim();
    if channels != cin {
        return Err(format!("expects {cin} input channels, got {channels}"));
    }
    if positions + 2 * c.padding < k {
        return Err(format!("input of {positions} positions is shorter than kernel {k}"));
    }
    Ok((cout, c.out_len(positions)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::rng_from_seed;

    fn finite_diff_check(net: &Network, x: &Array2<f64>) {
        let trace = net.forward_traced(x.view());
        let n_out = trace.output().nrows();
        let mut g = Array2::zeros((n_out, 1));
        g[[0, 0]] = 1.0;
        let back = net.backward(&trace, g, ReluRule::Standard, &[], None);
        let h = 1e-5;
        for (idx, analytic) in back.input_grad.indexed_iter().step_by(7) {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let fd = (net.forward(xp.view())[[0, 0]] - net.forward(xm.view())[[0, 0]]) / (2.0 * h);
            assert!((fd - analytic).abs() <= 1e-6 + 1e-4 * fd.abs(), "{idx:?}: fd {fd} vs {analytic}");
        }
    }

    #[test]
    fn reference_shapes_and_size() {
        let mut rng = rng_from_seed(3);
        let net = Network::reference(12, 2, &mut rng);
        assert!(net.num_params() <= 100_000);
        let trace = net.forward_traced(Array2::zeros((12, 2500)).view());
        assert_eq!(trace.output().dim(), (2, 1));
        let conv3 = net.layer_index("conv3").unwrap();
        assert_eq!(trace.layer_output(conv3).dim(), (16, 157));
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = rng_from_seed(5);
        let net = Network::reference(3, 2, &mut rng);
        let x = Array2::from_shape_fn((3, 64), |(l, t)| ((t * 7 + l * 3) as f64 * 0.37).sin());
        finite_diff_check(&net, &x);
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut rng = rng_from_seed(8);
        let net = Network::reference(2, 2, &mut rng);
        let x = Array2::from_shape_fn((2, 40), |(l, t)| ((t + 5 * l) as f64 * 0.21).cos());
        let trace = net.forward_traced(x.view());
        let mut grads = net.zeros_like();
        let mut g = Array2::zeros((2, 1));
        g[[1, 0]] = 1.0;
        net.backward(&trace, g, ReluRule::Standard, &[], Some(&mut grads));
        let analytic: Vec<f64> = grads.params().iter().flat_map(|p| p.iter().copied()).collect();
        let h = 1e-6;
        let total = analytic.len();
        for k in (0..total).step_by(13) {
            let bump = |delta: f64| {
                let mut n = net.clone();
                let mut seen = 0;
                for p in n.params_mut() {
                    if k < seen + p.len() {
                        p[k - seen] += delta;
                        break;
                    }
                    seen += p.len();
                }
                n.forward(x.view())[[1, 0]]
            };
            let fd = (bump(h) - bump(-h)) / (2.0 * h);
            assert!((fd - analytic[k]).abs() <= 1e-6 + 1e-4 * fd.abs(), "param {k}: {fd} vs {}", analytic[k]);
        }
    }

    #[test]
    fn captures_follow_request_order() {
        let mut rng = rng_from_seed(1);
        let net = Network::reference(2, 2, &mut rng);
        let x = Array2::from_elem((2, 50), 0.3);
        let trace = net.forward_traced(x.view());
        let c1 = net.layer_index("conv1").unwrap();
        let c3 = net.layer_index("conv3").unwrap();
        let back = net.backward(&trace, Array2::ones((2, 1)), ReluRule::Standard, &[c3, c1], None);
        assert_eq!(back.captures[0].0, c3);
        assert_eq!(back.captures[0].1.dim(), trace.layer_output(c3).dim());
        assert_eq!(back.captures[1].1.dim(), trace.layer_output(c1).dim());
    }

    #[test]
    fn duplicate_names_rejected() {
        let l = || NamedLayer { name: "a".into(), layer: Layer::Relu };
        assert!(Network::new(vec![l(), l()]).is_err());
    }
}
