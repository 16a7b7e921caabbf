use ndarray::{Array1, Array2, Array3, ArrayView2, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ReluRule;

fn he_normal(fan_in: usize) -> Normal<f64> {
    Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv1d {
    /// `(out_channels, in_channels, kernel)`.
    pub weight: Array3<f64>,
    pub bias: Array1<f64>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1d {
    pub fn new(weight: Array3<f64>, bias: Array1<f64>, stride: usize, padding: usize) -> Self {
        assert_eq!(weight.dim().0, bias.len(), "one bias per output channel");
        assert!(stride >= 1, "stride must be positive");
        Self { weight, bias, stride, padding }
    }

    pub fn he(cin: usize, cout: usize, kernel: usize, stride: usize, padding: usize, rng: &mut impl Rng) -> Self {
        let dist = he_normal(cin * kernel);
        let weight = Array3::from_shape_simple_fn((cout, cin, kernel), || dist.sample(rng));
        Self::new(weight, Array1::zeros(cout), stride, padding)
    }

    pub fn out_len(&self, t: usize) -> usize {
        let k = self.weight.dim().2;
        (t + 2 * self.padding).saturating_sub(k) / self.stride + 1
    }

    /// Output positions `t` for which input `t*stride + k - padding` is in `[0, len)`.
    fn valid_range(&self, k: usize, len: usize, out_len: usize) -> std::ops::Range<usize> {
        let (s, p) = (self.stride as isize, self.padding as isize);
        let k = k as isize;
        let lo = ((p - k).max(0) + s - 1) / s;
        let hi = (len as isize - 1 + p - k).div_euclid(s) + 1;
        let hi = hi.clamp(0, out_len as isize);
        (lo.min(hi) as usize)..(hi as usize)
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let (cout, cin, kw) = self.weight.dim();
        let (xc, len) = x.dim();
        assert_eq!(xc, cin, "conv input channels");
        let out_len = self.out_len(len);
        let mut out = Array2::zeros((cout, out_len));
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let s = self.stride;
        for o in 0..cout {
            let mut row = out.row_mut(o);
            let row = row.as_slice_mut().expect("contiguous row");
            row.fill(self.bias[o]);
            for i in 0..cin {
                let xi = &xs[i * len..(i + 1) * len];
                for k in 0..kw {
                    let w = self.weight[[o, i, k]];
                    if w == 0.0 {
                        continue;
                    }
                    for t in self.valid_range(k, len, out_len) {
                        row[t] += w * xi[t * s + k - self.padding];
                    }
                }
            }
        }
        out
    }

    pub fn backward(&self, x: ArrayView2<'_, f64>, grad_out: &Array2<f64>, grads: Option<&mut Conv1d>) -> Array2<f64> {
        let (cout, cin, kw) = self.weight.dim();
        let len = x.ncols();
        let out_len = grad_out.ncols();
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let g = grad_out.as_standard_layout();
        let gs = g.as_slice().expect("standard layout");
        let s = self.stride;
        let mut grad_in = Array2::<f64>::zeros((cin, len));
        {
            let gi = grad_in.as_slice_mut().expect("fresh array");
            for o in 0..cout {
                let go = &gs[o * out_len..(o + 1) * out_len];
                for i in 0..cin {
                    let row = &mut gi[i * len..(i + 1) * len];
                    for k in 0..kw {
                        let w = self.weight[[o, i, k]];
                        for t in self.valid_range(k, len, out_len) {
                            row[t * s + k - self.padding] += w * go[t];
                        }
                    }
                }
            }
        }
        if let Some(pg) = grads {
            for o in 0..cout {
                let go = &gs[o * out_len..(o + 1) * out_len];
                pg.bias[o] += go.iter().sum::<f64>();
                for i in 0..cin {
                    let xi = &xs[i * len..(i + 1) * len];
                    for k in 0..kw {
                        let mut acc = 0.0;
                        for t in self.valid_range(k, len, out_len) {
                            acc += go[t] * xi[t * s + k - self.padding];
                        }
                        pg.weight[[o, i, k]] += acc;
                    }
                }
            }
        }
        grad_in
    }

    pub fn params(&self) -> Vec<&[f64]> {
        vec![
            self.weight.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("standard layout"),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.weight.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        ]
    }
}

/// Fully connected layer over the flattened `(channels, positions)` input,
/// producing an `(N, 1)` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `(out_features, in_features)`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>) -> Self {
        assert_eq!(weight.nrows(), bias.len(), "one bias per output");
        Self { weight, bias }
    }

    pub fn he(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let dist = he_normal(inputs);
        let weight = Array2::from_shape_simple_fn((outputs, inputs), || dist.sample(rng) * 0.5);
        Self::new(weight, Array1::zeros(outputs))
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let x = x.as_standard_layout();
        let flat = x.as_slice().expect("standard layout");
        assert_eq!(flat.len(), self.weight.ncols(), "dense input width");
        let mut out = Array2::zeros((self.weight.nrows(), 1));
        for (n, row) in self.weight.outer_iter().enumerate() {
            out[[n, 0]] = self.bias[n] + row.iter().zip(flat).map(|(w, v)| w * v).sum::<f64>();
        }
        out
    }

    pub fn backward(&self, x: ArrayView2<'_, f64>, grad_out: &Array2<f64>, grads: Option<&mut Dense>) -> Array2<f64> {
        let (c, t) = x.dim();
        let mut grad_in = Array1::<f64>::zeros(c * t);
        for (n, row) in self.weight.outer_iter().enumerate() {
            let g = grad_out[[n, 0]];
            grad_in.scaled_add(g, &row);
        }
        if let Some(pg) = grads {
            let x = x.as_standard_layout();
            let flat = x.as_slice().expect("standard layout");
            for n in 0..self.weight.nrows() {
                let g = grad_out[[n, 0]];
                pg.bias[n] += g;
                for (w, v) in pg.weight.row_mut(n).iter_mut().zip(flat) {
                    *w += g * v;
                }
            }
        }
        grad_in.into_shape_with_order((c, t)).expect("same element count")
    }

    pub fn params(&self) -> Vec<&[f64]> {
        vec![
            self.weight.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("standard layout"),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.weight.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        ]
    }
}

pub(crate) fn relu_backward(input: ArrayView2<'_, f64>, grad_out: &Array2<f64>, rule: ReluRule) -> Array2<f64> {
    let mut g = grad_out.clone();
    Zip::from(&mut g).and(&input).for_each(|g, &x| {
        let pass = match rule {
            ReluRule::Standard => x > 0.0,
            ReluRule::Guided => x > 0.0 && *g > 0.0,
        };
        if !pass {
            *g = 0.0;
        }
    });
    g
}

/// `relu(conv_b(relu(conv_a(x))) + shortcut(x))`; the shortcut is a strided
/// 1x1 convolution when shape changes, identity otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualBlock {
    pub conv_a: Conv1d,
    pub conv_b: Conv1d,
    pub shortcut: Option<Conv1d>,
}

#[derive(Debug, Clone)]
pub(crate) struct ResidualCache {
    a_pre: Array2<f64>,
    a: Array2<f64>,
    sum: Array2<f64>,
}

impl ResidualBlock {
    pub fn he(cin: usize, cout: usize, kernel: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let pad = kernel / 2;
        let conv_a = Conv1d::he(cin, cout, kernel, stride, pad, rng);
        let mut conv_b = Conv1d::he(cout, cout, kernel, 1, pad, rng);
        // damp the residual branch so deep stacks start near identity
        conv_b.weight.mapv_inplace(|w| w * 0.5);
        let shortcut = (cin != cout || stride != 1).then(|| Conv1d::he(cin, cout, 1, stride, 0, rng));
        Self { conv_a, conv_b, shortcut }
    }

    pub(crate) fn forward(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, ResidualCache) {
        let a_pre = self.conv_a.forward(x);
        let a = a_pre.mapv(|v| v.max(0.0));
        let mut sum = self.conv_b.forward(a.view());
        match &self.shortcut {
            Some(sc) => sum += &sc.forward(x),
            None => sum += &x,
        }
        let out = sum.mapv(|v| v.max(0.0));
        (out, ResidualCache { a_pre, a, sum })
    }

    pub(crate) fn backward(
        &self,
        x: ArrayView2<'_, f64>,
        cache: &ResidualCache,
        grad_out: &Array2<f64>,
        rule: ReluRule,
        grads: Option<&mut ResidualBlock>,
    ) -> Array2<f64> {
        let g_sum = relu_backward(cache.sum.view(), grad_out, rule);
        let (ga, gb, gsc) = match grads {
            Some(g) => (Some(&mut g.conv_a), Some(&mut g.conv_b), g.shortcut.as_mut()),
            None => (None, None, None),
        };
        let g_a = self.conv_b.backward(cache.a.view(), &g_sum, gb);
        let g_a_pre = relu_backward(cache.a_pre.view(), &g_a, rule);
        let mut g_x = self.conv_a.backward(x, &g_a_pre, ga);
        match &self.shortcut {
            Some(sc) => g_x += &sc.backward(x, &g_sum, gsc),
            None => g_x += &g_sum,
        }
        g_x
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut p = self.conv_a.params();
        p.extend(self.conv_b.params());
        if let Some(sc) = &self.shortcut {
            p.extend(sc.params());
        }
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.conv_a.params_mut();
        p.extend(self.conv_b.params_mut());
        if let Some(sc) = &mut self.shortcut {
            p.extend(sc.params_mut());
        }
        p
    }
}
