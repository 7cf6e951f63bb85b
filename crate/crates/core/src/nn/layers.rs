//! Layer stack with exact analytic backpropagation.
//!
//! A stack consumes either a sequence of sparse trigram vectors (when the
//! first layer is a [`Layer::HashProjection`]) or a dense `T × d` tensor,
//! and produces a dense tensor. Sequence layers keep one row per time step;
//! pooling layers collapse the sequence to a single row.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gru::{CellGrads, CellTrace, GatedCell};
use super::tensor::{add_acc, mat_vec_acc, outer_acc, sigmoid, vec_mat_acc, Real, Tensor2};
use crate::error::{Error, Result};
use crate::text::TrigramVector;

const NORM_EPS: f64 = 1e-12;

/// Shape description of a layer, independent of its parameter values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    HashProjection { dim_in: usize, dim_out: usize },
    ConvOverTime { window: usize, dim_in: usize, dim_out: usize },
    MaxPoolOverTime { dim: usize },
    Dense { dim_in: usize, dim_out: usize },
    L2Normalize { dim: usize },
    BiRecurrentGated { dim_in: usize, hidden: usize },
    MeanPoolOverTime { dim: usize },
    SoftmaxHead { dim_in: usize, classes: usize },
    LogisticHead { dim_in: usize },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::HashProjection { .. } => "hash_projection",
            LayerSpec::ConvOverTime { .. } => "conv_over_time",
            LayerSpec::MaxPoolOverTime { .. } => "max_pool_over_time",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::L2Normalize { .. } => "l2_normalize",
            LayerSpec::BiRecurrentGated { .. } => "bi_recurrent_gated",
            LayerSpec::MeanPoolOverTime { .. } => "mean_pool_over_time",
            LayerSpec::SoftmaxHead { .. } => "softmax_head",
            LayerSpec::LogisticHead { .. } => "logistic_head",
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            LayerSpec::HashProjection { dim_in, dim_out } => vec![dim_in, dim_out],
            LayerSpec::ConvOverTime {
                window,
                dim_in,
                dim_out,
            } => vec![window, dim_in, dim_out],
            LayerSpec::MaxPoolOverTime { dim } => vec![dim],
            LayerSpec::Dense { dim_in, dim_out } => vec![dim_in, dim_out],
            LayerSpec::L2Normalize { dim } => vec![dim],
            LayerSpec::BiRecurrentGated { dim_in, hidden } => vec![dim_in, hidden],
            LayerSpec::MeanPoolOverTime { dim } => vec![dim],
            LayerSpec::SoftmaxHead { dim_in, classes } => vec![dim_in, classes],
            LayerSpec::LogisticHead { dim_in } => vec![dim_in],
        }
    }

    pub fn from_parts(kind: &str, dims: &[usize]) -> Option<Self> {
        let spec = match (kind, dims) {
            ("hash_projection", &[dim_in, dim_out]) => LayerSpec::HashProjection { dim_in, dim_out },
            ("conv_over_time", &[window, dim_in, dim_out]) => LayerSpec::ConvOverTime {
                window,
                dim_in,
                dim_out,
            },
            ("max_pool_over_time", &[dim]) => LayerSpec::MaxPoolOverTime { dim },
            ("dense", &[dim_in, dim_out]) => LayerSpec::Dense { dim_in, dim_out },
            ("l2_normalize", &[dim]) => LayerSpec::L2Normalize { dim },
            ("bi_recurrent_gated", &[dim_in, hidden]) => {
                LayerSpec::BiRecurrentGated { dim_in, hidden }
            }
            ("mean_pool_over_time", &[dim]) => LayerSpec::MeanPoolOverTime { dim },
            ("softmax_head", &[dim_in, classes]) => LayerSpec::SoftmaxHead { dim_in, classes },
            ("logistic_head", &[dim_in]) => LayerSpec::LogisticHead { dim_in },
            _ => return None,
        };
        (spec.dims().iter().all(|&d| d > 0)).then_some(spec)
    }

    pub fn input_dim(&self) -> usize {
        match *self {
            LayerSpec::HashProjection { dim_in, .. }
            | LayerSpec::ConvOverTime { dim_in, .. }
            | LayerSpec::Dense { dim_in, .. }
            | LayerSpec::BiRecurrentGated { dim_in, .. }
            | LayerSpec::SoftmaxHead { dim_in, .. }
            | LayerSpec::LogisticHead { dim_in } => dim_in,
            LayerSpec::MaxPoolOverTime { dim }
            | LayerSpec::L2Normalize { dim }
            | LayerSpec::MeanPoolOverTime { dim } => dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match *self {
            LayerSpec::HashProjection { dim_out, .. }
            | LayerSpec::ConvOverTime { dim_out, .. }
            | LayerSpec::Dense { dim_out, .. } => dim_out,
            LayerSpec::BiRecurrentGated { hidden, .. } => 2 * hidden,
            LayerSpec::SoftmaxHead { classes, .. } => classes,
            LayerSpec::LogisticHead { .. } => 1,
            LayerSpec::MaxPoolOverTime { dim }
            | LayerSpec::L2Normalize { dim }
            | LayerSpec::MeanPoolOverTime { dim } => dim,
        }
    }

    /// Lengths of the parameter tensors, in storage order.
    pub fn param_lengths(&self) -> Vec<usize> {
        match *self {
            LayerSpec::HashProjection { dim_in, dim_out } => vec![dim_in * dim_out],
            LayerSpec::ConvOverTime {
                window,
                dim_in,
                dim_out,
            } => vec![window * dim_in * dim_out, dim_out],
            LayerSpec::Dense { dim_in, dim_out } => vec![dim_in * dim_out, dim_out],
            LayerSpec::BiRecurrentGated { dim_in, hidden } => {
                let cell = [dim_in * 3 * hidden, hidden * 3 * hidden, 3 * hidden];
                cell.iter().chain(cell.iter()).copied().collect()
            }
            LayerSpec::SoftmaxHead { dim_in, classes } => vec![dim_in * classes, classes],
            LayerSpec::LogisticHead { dim_in } => vec![dim_in, 1],
            LayerSpec::MaxPoolOverTime { .. }
            | LayerSpec::L2Normalize { .. }
            | LayerSpec::MeanPoolOverTime { .. } => vec![],
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_lengths().iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T = f32> {
    /// Linear map of a sparse trigram count vector; `weights` is `dim_in × d`.
    HashProjection { weights: Tensor2<T> },
    /// Zero-padded ("same") convolution over time followed by tanh.
    /// `weights` is `(window·d_in) × d_out`.
    ConvOverTime {
        window: usize,
        weights: Tensor2<T>,
        bias: Vec<T>,
    },
    MaxPoolOverTime { dim: usize },
    /// Row-wise `tanh(x·W + b)`.
    Dense { weights: Tensor2<T>, bias: Vec<T> },
    L2Normalize { dim: usize },
    BiRecurrentGated {
        forward: GatedCell<T>,
        backward: GatedCell<T>,
    },
    MeanPoolOverTime { dim: usize },
    /// Row-wise `softmax(x·W + b)`.
    SoftmaxHead { weights: Tensor2<T>, bias: Vec<T> },
    /// Row-wise `σ(x·w + b)`.
    LogisticHead { weights: Tensor2<T>, bias: Vec<T> },
}

fn uniform<T: Real>(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, len: usize) -> Vec<T> {
    let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..len).map(|_| T::of(rng.gen_range(-r..r))).collect()
}

fn matrix<T: Real>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor2<T> {
    let data = uniform(rng, rows, cols, rows * cols);
    Tensor2::from_vec(rows, cols, data).expect("length matches shape")
}

impl<T: Real> Layer<T> {
    /// Glorot-uniform weights, zero biases.
    pub fn init(spec: LayerSpec, rng: &mut ChaCha8Rng) -> Self {
        match spec {
            LayerSpec::HashProjection { dim_in, dim_out } => Layer::HashProjection {
                weights: matrix(rng, dim_in, dim_out),
            },
            LayerSpec::ConvOverTime {
                window,
                dim_in,
                dim_out,
            } => Layer::ConvOverTime {
                window,
                weights: matrix(rng, window * dim_in, dim_out),
                bias: vec![T::zero(); dim_out],
            },
            LayerSpec::MaxPoolOverTime { dim } => Layer::MaxPoolOverTime { dim },
            LayerSpec::Dense { dim_in, dim_out } => Layer::Dense {
                weights: matrix(rng, dim_in, dim_out),
                bias: vec![T::zero(); dim_out],
            },
            LayerSpec::L2Normalize { dim } => Layer::L2Normalize { dim },
            LayerSpec::BiRecurrentGated { dim_in, hidden } => {
                let mut cell = || GatedCell {
                    w: matrix(rng, dim_in, 3 * hidden),
                    u: matrix(rng, hidden, 3 * hidden),
                    b: vec![T::zero(); 3 * hidden],
                };
                let forward = cell();
                let backward = cell();
                Layer::BiRecurrentGated { forward, backward }
            }
            LayerSpec::MeanPoolOverTime { dim } => Layer::MeanPoolOverTime { dim },
            LayerSpec::SoftmaxHead { dim_in, classes } => Layer::SoftmaxHead {
                weights: matrix(rng, dim_in, classes),
                bias: vec![T::zero(); classes],
            },
            LayerSpec::LogisticHead { dim_in } => Layer::LogisticHead {
                weights: matrix(rng, dim_in, 1),
                bias: vec![T::zero()],
            },
        }
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::HashProjection { weights } => LayerSpec::HashProjection {
                dim_in: weights.rows(),
                dim_out: weights.cols(),
            },
            Layer::ConvOverTime {
                window, weights, ..
            } => LayerSpec::ConvOverTime {
                window: *window,
                dim_in: weights.rows() / window,
                dim_out: weights.cols(),
            },
            Layer::MaxPoolOverTime { dim } => LayerSpec::MaxPoolOverTime { dim: *dim },
            Layer::Dense { weights, .. } => LayerSpec::Dense {
                dim_in: weights.rows(),
                dim_out: weights.cols(),
            },
            Layer::L2Normalize { dim } => LayerSpec::L2Normalize { dim: *dim },
            Layer::BiRecurrentGated { forward, .. } => LayerSpec::BiRecurrentGated {
                dim_in: forward.input_dim(),
                hidden: forward.hidden(),
            },
            Layer::MeanPoolOverTime { dim } => LayerSpec::MeanPoolOverTime { dim: *dim },
            Layer::SoftmaxHead { weights, .. } => LayerSpec::SoftmaxHead {
                dim_in: weights.rows(),
                classes: weights.cols(),
            },
            Layer::LogisticHead { weights, .. } => LayerSpec::LogisticHead {
                dim_in: weights.rows(),
            },
        }
    }

    pub fn params(&self) -> Vec<&[T]> {
        match self {
            Layer::HashProjection { weights } => vec![weights.data()],
            Layer::ConvOverTime { weights, bias, .. }
            | Layer::Dense { weights, bias }
            | Layer::SoftmaxHead { weights, bias }
            | Layer::LogisticHead { weights, bias } => vec![weights.data(), bias],
            Layer::BiRecurrentGated { forward, backward } => vec![
                forward.w.data(),
                forward.u.data(),
                &forward.b,
                backward.w.data(),
                backward.u.data(),
                &backward.b,
            ],
            Layer::MaxPoolOverTime { .. }
            | Layer::L2Normalize { .. }
            | Layer::MeanPoolOverTime { .. } => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        match self {
            Layer::HashProjection { weights } => vec![weights.data_mut()],
            Layer::ConvOverTime { weights, bias, .. }
            | Layer::Dense { weights, bias }
            | Layer::SoftmaxHead { weights, bias }
            | Layer::LogisticHead { weights, bias } => vec![weights.data_mut(), bias],
            Layer::BiRecurrentGated { forward, backward } => vec![
                forward.w.data_mut(),
                forward.u.data_mut(),
                &mut forward.b,
                backward.w.data_mut(),
                backward.u.data_mut(),
                &mut backward.b,
            ],
            Layer::MaxPoolOverTime { .. }
            | Layer::L2Normalize { .. }
            | Layer::MeanPoolOverTime { .. } => vec![],
        }
    }

    fn forward_dense(&self, x: &Tensor2<T>) -> (Tensor2<T>, LayerCache<T>) {
        let rows = x.rows();
        match self {
            Layer::HashProjection { .. } => unreachable!("projection consumes sparse input"),
            Layer::ConvOverTime {
                window,
                weights,
                bias,
            } => {
                let d_in = x.cols();
                let pad_left = (window - 1) / 2;
                let mut padded = Tensor2::zeros(rows + window - 1, d_in);
                padded.data_mut()[pad_left * d_in..(pad_left + rows) * d_in]
                    .copy_from_slice(x.data());
                let mut out = Tensor2::zeros(rows, weights.cols());
                for t in 0..rows {
                    let o = out.row_mut(t);
                    o.copy_from_slice(bias);
                    vec_mat_acc(&padded.data()[t * d_in..(t + window) * d_in], weights, o);
                    o.iter_mut().for_each(|v| *v = v.tanh());
                }
                (out.clone(), LayerCache::Conv { padded, out })
            }
            Layer::MaxPoolOverTime { dim } => {
                let mut argmax = vec![0usize; *dim];
                let mut out = x.row(0).to_vec();
                for t in 1..rows {
                    for (j, &v) in x.row(t).iter().enumerate() {
                        if v > out[j] {
                            out[j] = v;
                            argmax[j] = t;
                        }
                    }
                }
                (Tensor2::row_vector(out), LayerCache::MaxPool { argmax, rows })
            }
            Layer::Dense { weights, bias } => {
                let mut out = Tensor2::zeros(rows, weights.cols());
                for t in 0..rows {
                    let o = out.row_mut(t);
                    o.copy_from_slice(bias);
                    vec_mat_acc(x.row(t), weights, o);
                    o.iter_mut().for_each(|v| *v = v.tanh());
                }
                (
                    out.clone(),
                    LayerCache::Affine {
                        input: x.clone(),
                        out,
                    },
                )
            }
            Layer::L2Normalize { .. } => {
                let mut out = x.clone();
                let mut norms = Vec::with_capacity(rows);
                for t in 0..rows {
                    let row = out.row_mut(t);
                    let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt().max(T::of(NORM_EPS));
                    row.iter_mut().for_each(|v| *v = *v / norm);
                    norms.push(norm);
                }
                (out.clone(), LayerCache::Normalize { out, norms })
            }
            Layer::BiRecurrentGated { forward, backward } => {
                let h = forward.hidden();
                let mut out = Tensor2::zeros(rows, 2 * h);
                let fwd = forward.run(x, false, &mut out, 0);
                let bwd = backward.run(x, true, &mut out, h);
                (
                    out,
                    LayerCache::Recurrent {
                        input: x.clone(),
                        fwd,
                        bwd,
                    },
                )
            }
            Layer::MeanPoolOverTime { dim } => {
                let mut out = vec![T::zero(); *dim];
                for t in 0..rows {
                    add_acc(&mut out, x.row(t));
                }
                let scale = T::of(rows as f64);
                out.iter_mut().for_each(|v| *v = *v / scale);
                (Tensor2::row_vector(out), LayerCache::MeanPool { rows })
            }
            Layer::SoftmaxHead { weights, bias } => {
                let mut out = Tensor2::zeros(rows, weights.cols());
                for t in 0..rows {
                    let o = out.row_mut(t);
                    o.copy_from_slice(bias);
                    vec_mat_acc(x.row(t), weights, o);
                    let max = o.iter().copied().fold(T::neg_infinity(), T::max);
                    o.iter_mut().for_each(|v| *v = (*v - max).exp());
                    let sum: T = o.iter().copied().sum();
                    o.iter_mut().for_each(|v| *v = *v / sum);
                }
                (
                    out.clone(),
                    LayerCache::Affine {
                        input: x.clone(),
                        out,
                    },
                )
            }
            Layer::LogisticHead { weights, bias } => {
                let mut out = Tensor2::zeros(rows, 1);
                for t in 0..rows {
                    let o = out.row_mut(t);
                    o[0] = bias[0];
                    vec_mat_acc(x.row(t), weights, o);
                    o[0] = sigmoid(o[0]);
                }
                (
                    out.clone(),
                    LayerCache::Affine {
                        input: x.clone(),
                        out,
                    },
                )
            }
        }
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// w.r.t. the layer input when `need_input` is set.
    fn backward_layer(
        &self,
        cache: &LayerCache<T>,
        upstream: &Tensor2<T>,
        grads: &mut [Vec<T>],
        need_input: bool,
    ) -> Result<Option<Tensor2<T>>> {
        let stale = |what: &str| Error::StaleCache(format!("{} cache for {}", what, self.spec().kind()));
        match (self, cache) {
            (Layer::HashProjection { weights }, LayerCache::Projection { input }) => {
                let d = weights.cols();
                for (t, tv) in input.iter().enumerate() {
                    let g = upstream.row(t);
                    for &(idx, count) in tv.entries() {
                        let c = T::of(f64::from(count));
                        let start = idx as usize * d;
                        for (gw, &gv) in grads[0][start..start + d].iter_mut().zip(g) {
                            *gw += c * gv;
                        }
                    }
                }
                Ok(None)
            }
            (
                Layer::ConvOverTime {
                    window, weights, ..
                },
                LayerCache::Conv { padded, out },
            ) => {
                let d_in = padded.cols();
                let rows = out.rows();
                let pad_left = (window - 1) / 2;
                let mut dpad = need_input.then(|| Tensor2::zeros(padded.rows(), d_in));
                let (gw, gb) = split_two(grads);
                for t in 0..rows {
                    let da: Vec<T> = upstream
                        .row(t)
                        .iter()
                        .zip(out.row(t))
                        .map(|(&g, &y)| g * (T::one() - y * y))
                        .collect();
                    let window_in = &padded.data()[t * d_in..(t + window) * d_in];
                    outer_acc(gw, window_in, &da);
                    add_acc(gb, &da);
                    if let Some(dpad) = dpad.as_mut() {
                        mat_vec_acc(
                            weights,
                            &da,
                            &mut dpad.data_mut()[t * d_in..(t + window) * d_in],
                        );
                    }
                }
                Ok(dpad.map(|dp| {
                    let data = dp.data()[pad_left * d_in..(pad_left + rows) * d_in].to_vec();
                    Tensor2::from_vec(rows, d_in, data).expect("shape")
                }))
            }
            (Layer::MaxPoolOverTime { dim }, LayerCache::MaxPool { argmax, rows }) => {
                let mut dx = Tensor2::zeros(*rows, *dim);
                for (j, &t) in argmax.iter().enumerate() {
                    dx.row_mut(t)[j] = upstream.get(0, j);
                }
                Ok(Some(dx))
            }
            (Layer::Dense { weights, .. }, LayerCache::Affine { input, out }) => {
                let mut dx = need_input.then(|| Tensor2::zeros(input.rows(), input.cols()));
                let (gw, gb) = split_two(grads);
                for t in 0..input.rows() {
                    let da: Vec<T> = upstream
                        .row(t)
                        .iter()
                        .zip(out.row(t))
                        .map(|(&g, &y)| g * (T::one() - y * y))
                        .collect();
                    outer_acc(gw, input.row(t), &da);
                    add_acc(gb, &da);
                    if let Some(dx) = dx.as_mut() {
                        mat_vec_acc(weights, &da, dx.row_mut(t));
                    }
                }
                Ok(dx)
            }
            (Layer::L2Normalize { .. }, LayerCache::Normalize { out, norms }) => {
                let mut dx = Tensor2::zeros(out.rows(), out.cols());
                for (t, &norm) in norms.iter().enumerate() {
                    let y = out.row(t);
                    let g = upstream.row(t);
                    let dot: T = y.iter().zip(g).map(|(&a, &b)| a * b).sum();
                    let small = norm <= T::of(NORM_EPS);
                    for ((d, &yv), &gv) in dx.row_mut(t).iter_mut().zip(y).zip(g) {
                        *d = if small { gv / norm } else { (gv - yv * dot) / norm };
                    }
                }
                Ok(Some(dx))
            }
            (Layer::BiRecurrentGated { forward, backward }, LayerCache::Recurrent { input, fwd, bwd }) => {
                let h = forward.hidden();
                let mut dx = need_input.then(|| Tensor2::zeros(input.rows(), input.cols()));
                let (fw, rest) = grads.split_at_mut(3);
                let (fw_w, fw_rest) = fw.split_at_mut(1);
                let (fw_u, fw_b) = fw_rest.split_at_mut(1);
                forward.backward(
                    input,
                    fwd,
                    upstream,
                    0,
                    CellGrads {
                        w: &mut fw_w[0],
                        u: &mut fw_u[0],
                        b: &mut fw_b[0],
                    },
                    dx.as_mut(),
                );
                let (bw_w, bw_rest) = rest.split_at_mut(1);
                let (bw_u, bw_b) = bw_rest.split_at_mut(1);
                backward.backward(
                    input,
                    bwd,
                    upstream,
                    h,
                    CellGrads {
                        w: &mut bw_w[0],
                        u: &mut bw_u[0],
                        b: &mut bw_b[0],
                    },
                    dx.as_mut(),
                );
                Ok(dx)
            }
            (Layer::MeanPoolOverTime { dim }, LayerCache::MeanPool { rows }) => {
                let scale = T::of(*rows as f64);
                let g: Vec<T> = upstream.row(0).iter().map(|&v| v / scale).collect();
                let mut dx = Tensor2::zeros(*rows, *dim);
                for t in 0..*rows {
                    dx.row_mut(t).copy_from_slice(&g);
                }
                Ok(Some(dx))
            }
            (Layer::SoftmaxHead { weights, .. }, LayerCache::Affine { input, out }) => {
                let mut dx = need_input.then(|| Tensor2::zeros(input.rows(), input.cols()));
                let (gw, gb) = split_two(grads);
                for t in 0..input.rows() {
                    let p = out.row(t);
                    let g = upstream.row(t);
                    let gp: T = p.iter().zip(g).map(|(&a, &b)| a * b).sum();
                    let dz: Vec<T> = p.iter().zip(g).map(|(&pv, &gv)| pv * (gv - gp)).collect();
                    outer_acc(gw, input.row(t), &dz);
                    add_acc(gb, &dz);
                    if let Some(dx) = dx.as_mut() {
                        mat_vec_acc(weights, &dz, dx.row_mut(t));
                    }
                }
                Ok(dx)
            }
            (Layer::LogisticHead { weights, .. }, LayerCache::Affine { input, out }) => {
                let mut dx = need_input.then(|| Tensor2::zeros(input.rows(), input.cols()));
                let (gw, gb) = split_two(grads);
                for t in 0..input.rows() {
                    let y = out.get(t, 0);
                    let dz = [upstream.get(t, 0) * y * (T::one() - y)];
                    outer_acc(gw, input.row(t), &dz);
                    add_acc(gb, &dz);
                    if let Some(dx) = dx.as_mut() {
                        mat_vec_acc(weights, &dz, dx.row_mut(t));
                    }
                }
                Ok(dx)
            }
            _ => Err(stale("mismatched")),
        }
    }

    fn map<U: Real>(&self) -> Layer<U> {
        let cell = |c: &GatedCell<T>| GatedCell {
            w: c.w.cast(),
            u: c.u.cast(),
            b: cast_vec(&c.b),
        };
        match self {
            Layer::HashProjection { weights } => Layer::HashProjection {
                weights: weights.cast(),
            },
            Layer::ConvOverTime {
                window,
                weights,
                bias,
            } => Layer::ConvOverTime {
                window: *window,
                weights: weights.cast(),
                bias: cast_vec(bias),
            },
            Layer::MaxPoolOverTime { dim } => Layer::MaxPoolOverTime { dim: *dim },
            Layer::Dense { weights, bias } => Layer::Dense {
                weights: weights.cast(),
                bias: cast_vec(bias),
            },
            Layer::L2Normalize { dim } => Layer::L2Normalize { dim: *dim },
            Layer::BiRecurrentGated { forward, backward } => Layer::BiRecurrentGated {
                forward: cell(forward),
                backward: cell(backward),
            },
            Layer::MeanPoolOverTime { dim } => Layer::MeanPoolOverTime { dim: *dim },
            Layer::SoftmaxHead { weights, bias } => Layer::SoftmaxHead {
                weights: weights.cast(),
                bias: cast_vec(bias),
            },
            Layer::LogisticHead { weights, bias } => Layer::LogisticHead {
                weights: weights.cast(),
                bias: cast_vec(bias),
            },
        }
    }

    /// Rebuilds a layer of the given shape from flat parameter slices.
    pub(crate) fn from_params(spec: LayerSpec, params: &[Vec<T>]) -> Result<Self> {
        let lens = spec.param_lengths();
        if params.len() != lens.len() || params.iter().zip(&lens).any(|(p, &l)| p.len() != l) {
            return Err(Error::ShapeMismatch(format!(
                "parameter lengths do not match {}",
                spec.kind()
            )));
        }
        let m = |i: usize, rows: usize, cols: usize| Tensor2::from_vec(rows, cols, params[i].clone());
        Ok(match spec {
            LayerSpec::HashProjection { dim_in, dim_out } => Layer::HashProjection {
                weights: m(0, dim_in, dim_out)?,
            },
            LayerSpec::ConvOverTime {
                window,
                dim_in,
                dim_out,
            } => Layer::ConvOverTime {
                window,
                weights: m(0, window * dim_in, dim_out)?,
                bias: params[1].clone(),
            },
            LayerSpec::MaxPoolOverTime { dim } => Layer::MaxPoolOverTime { dim },
            LayerSpec::Dense { dim_in, dim_out } => Layer::Dense {
                weights: m(0, dim_in, dim_out)?,
                bias: params[1].clone(),
            },
            LayerSpec::L2Normalize { dim } => Layer::L2Normalize { dim },
            LayerSpec::BiRecurrentGated { dim_in, hidden } => Layer::BiRecurrentGated {
                forward: GatedCell {
                    w: m(0, dim_in, 3 * hidden)?,
                    u: m(1, hidden, 3 * hidden)?,
                    b: params[2].clone(),
                },
                backward: GatedCell {
                    w: m(3, dim_in, 3 * hidden)?,
                    u: m(4, hidden, 3 * hidden)?,
                    b: params[5].clone(),
                },
            },
            LayerSpec::MeanPoolOverTime { dim } => Layer::MeanPoolOverTime { dim },
            LayerSpec::SoftmaxHead { dim_in, classes } => Layer::SoftmaxHead {
                weights: m(0, dim_in, classes)?,
                bias: params[1].clone(),
            },
            LayerSpec::LogisticHead { dim_in } => Layer::LogisticHead {
                weights: m(0, dim_in, 1)?,
                bias: params[1].clone(),
            },
        })
    }
}

fn split_two<T>(grads: &mut [Vec<T>]) -> (&mut [T], &mut [T]) {
    let (a, b) = grads.split_at_mut(1);
    (&mut a[0], &mut b[0])
}

fn cast_vec<T: Real, U: Real>(v: &[T]) -> Vec<U> {
    v.iter().map(|x| U::of(x.as_f64())).collect()
}

#[derive(Debug, Clone)]
enum LayerCache<T> {
    Projection { input: Vec<TrigramVector> },
    Conv { padded: Tensor2<T>, out: Tensor2<T> },
    MaxPool { argmax: Vec<usize>, rows: usize },
    Affine { input: Tensor2<T>, out: Tensor2<T> },
    Normalize { out: Tensor2<T>, norms: Vec<T> },
    Recurrent {
        input: Tensor2<T>,
        fwd: CellTrace<T>,
        bwd: CellTrace<T>,
    },
    MeanPool { rows: usize },
}

/// Stack input: a sparse trigram sequence or a dense sequence tensor.
#[derive(Debug, Clone)]
pub enum Input<T = f32> {
    Sparse(Vec<TrigramVector>),
    Dense(Tensor2<T>),
}

impl<T: Real> Input<T> {
    fn len(&self) -> usize {
        match self {
            Input::Sparse(v) => v.len(),
            Input::Dense(t) => t.rows(),
        }
    }
}

/// Output of [`LayerStack::forward`] together with the activations needed
/// by [`LayerStack::backward`].
#[derive(Debug, Clone)]
pub struct ForwardPass<T = f32> {
    caches: Vec<LayerCache<T>>,
    output: Tensor2<T>,
}

impl<T: Real> ForwardPass<T> {
    pub fn output(&self) -> &Tensor2<T> {
        &self.output
    }

    pub fn into_output(self) -> Tensor2<T> {
        self.output
    }
}

/// Parameter gradients, shape-congruent with a [`LayerStack`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T = f32> {
    layers: Vec<Vec<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_for(stack: &LayerStack<T>) -> Self {
        Self {
            layers: stack
                .layers
                .iter()
                .map(|l| l.spec().param_lengths().into_iter().map(|n| vec![T::zero(); n]).collect())
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Vec<Vec<T>>] {
        &self.layers
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flatten().flatten()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers.iter_mut().flatten().flatten()
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|g| g.as_f64() * g.as_f64()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|g| g.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.iter().all(|g| *g == T::zero())
    }

    pub fn scale(&mut self, s: T) {
        self.iter_mut().for_each(|g| *g *= s);
    }

    pub fn fill_zero(&mut self) {
        self.iter_mut().for_each(|g| *g = T::zero());
    }

    /// Rescales to `max_norm` when the global L2 norm exceeds it; returns
    /// the norm before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.norm();
        if norm > max_norm && norm.is_finite() {
            self.scale(T::of(max_norm / norm));
        }
        norm
    }
}

/// Ordered layers plus the seed they were initialized from.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack<T = f32> {
    layers: Vec<Layer<T>>,
    seed: u64,
}

impl<T: Real> LayerStack<T> {
    pub fn init(specs: &[LayerSpec], seed: u64) -> Result<Self> {
        validate_specs(specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs.iter().map(|&s| Layer::init(s, &mut rng)).collect();
        Ok(Self { layers, seed })
    }

    pub fn from_layers(layers: Vec<Layer<T>>, seed: u64) -> Result<Self> {
        let specs: Vec<LayerSpec> = layers.iter().map(Layer::spec).collect();
        validate_specs(&specs)?;
        for layer in &layers {
            if layer.params().iter().flat_map(|p| p.iter()).any(|v| !v.is_finite()) {
                return Err(Error::ShapeMismatch("non-finite parameter".into()));
            }
        }
        Ok(Self { layers, seed })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec().input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty stack").spec().output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.specs().iter().map(LayerSpec::param_count).sum()
    }

    /// All parameters, layer by layer, in storage order.
    pub fn params(&self) -> Vec<&[T]> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn cast<U: Real>(&self) -> LayerStack<U> {
        LayerStack {
            layers: self.layers.iter().map(Layer::map).collect(),
            seed: self.seed,
        }
    }

    pub fn forward(&self, input: &Input<T>) -> Result<ForwardPass<T>> {
        if input.len() == 0 {
            return Err(Error::ShapeMismatch("empty input sequence".into()));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut current: Option<Tensor2<T>> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let (out, cache) = match (layer, i, input) {
                (Layer::HashProjection { weights }, 0, Input::Sparse(seq)) => {
                    let mut out = Tensor2::zeros(seq.len(), weights.cols());
                    for (t, tv) in seq.iter().enumerate() {
                        if tv.dim() != weights.rows() {
                            return Err(Error::ShapeMismatch(format!(
                                "trigram dim {} for projection of {} rows",
                                tv.dim(),
                                weights.rows()
                            )));
                        }
                        let o = out.row_mut(t);
                        for &(idx, count) in tv.entries() {
                            let c = T::of(f64::from(count));
                            for (ov, &w) in o.iter_mut().zip(weights.row(idx as usize)) {
                                *ov += c * w;
                            }
                        }
                    }
                    (out, LayerCache::Projection { input: seq.clone() })
                }
                (Layer::HashProjection { .. }, _, _) => {
                    return Err(Error::ShapeMismatch(
                        "hash projection must be the first layer and take sparse input".into(),
                    ))
                }
                (_, 0, Input::Sparse(_)) => {
                    return Err(Error::ShapeMismatch(
                        "sparse input requires a hash projection first layer".into(),
                    ))
                }
                (_, 0, Input::Dense(x)) => {
                    if x.cols() != layer.spec().input_dim() {
                        return Err(Error::ShapeMismatch(format!(
                            "input has {} columns, layer expects {}",
                            x.cols(),
                            layer.spec().input_dim()
                        )));
                    }
                    layer.forward_dense(x)
                }
                _ => layer.forward_dense(current.as_ref().expect("previous output")),
            };
            caches.push(cache);
            current = Some(out);
        }
        Ok(ForwardPass {
            caches,
            output: current.expect("non-empty stack"),
        })
    }

    /// Convenience: forward pass output only.
    pub fn predict(&self, input: &Input<T>) -> Result<Tensor2<T>> {
        self.forward(input).map(ForwardPass::into_output)
    }

    pub fn backward(&self, pass: &ForwardPass<T>, upstream: &Tensor2<T>) -> Result<Gradients<T>> {
        let mut grads = Gradients::zeros_for(self);
        self.backward_into(pass, upstream, &mut grads)?;
        Ok(grads)
    }

    /// Accumulates (adds) this pass's gradients into `grads`.
    pub fn backward_into(
        &self,
        pass: &ForwardPass<T>,
        upstream: &Tensor2<T>,
        grads: &mut Gradients<T>,
    ) -> Result<()> {
        if pass.caches.len() != self.layers.len() {
            return Err(Error::StaleCache(format!(
                "{} cached layers for a {}-layer stack",
                pass.caches.len(),
                self.layers.len()
            )));
        }
        if upstream.shape() != pass.output.shape() {
            return Err(Error::StaleCache(format!(
                "upstream gradient {:?} vs output {:?}",
                upstream.shape(),
                pass.output.shape()
            )));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::ShapeMismatch("gradient buffer does not match stack".into()));
        }
        let mut g = upstream.clone();
        for (i, (layer, cache)) in self.layers.iter().zip(&pass.caches).enumerate().rev() {
            match layer.backward_layer(cache, &g, &mut grads.layers[i], i > 0)? {
                Some(dx) => g = dx,
                None if i > 0 => {
                    return Err(Error::StaleCache("missing input gradient".into()));
                }
                None => {}
            }
        }
        Ok(())
    }

    /// `θ ← θ − lr·g`. Rejects the whole step if any gradient is non-finite.
    pub fn sgd_step(&mut self, grads: &Gradients<T>, lr: T) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFiniteGradient);
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::ShapeMismatch("gradient buffer does not match stack".into()));
        }
        // `p − 0·g` can still flip the sign of a zero parameter
        if lr == T::zero() {
            return Ok(());
        }
        for (layer, lg) in self.layers.iter_mut().zip(&grads.layers) {
            for (p, g) in layer.params_mut().into_iter().zip(lg) {
                if p.len() != g.len() {
                    return Err(Error::ShapeMismatch("gradient tensor length".into()));
                }
                for (pv, &gv) in p.iter_mut().zip(g) {
                    *pv -= lr * gv;
                }
            }
        }
        Ok(())
    }
}

fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::ShapeMismatch("empty layer stack".into()));
    }
    for (i, pair) in specs.windows(2).enumerate() {
        if matches!(pair[1], LayerSpec::HashProjection { .. }) {
            return Err(Error::ShapeMismatch(format!(
                "hash projection at position {} (must be first)",
                i + 1
            )));
        }
        if pair[0].output_dim() != pair[1].input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "layer {} ({}) outputs {} but layer {} ({}) expects {}",
                i,
                pair[0].kind(),
                pair[0].output_dim(),
                i + 1,
                pair[1].kind(),
                pair[1].input_dim()
            )));
        }
    }
    for s in specs {
        if s.dims().iter().any(|&d| d == 0) {
            return Err(Error::ShapeMismatch(format!("zero dimension in {}", s.kind())));
        }
    }
    Ok(())
}
