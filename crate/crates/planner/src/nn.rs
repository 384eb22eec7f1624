//! The convolutional planner network and its hand-written backward pass.
//!
//! Layers: `n` stages of 3x3 convolution with stride 2 and zero padding 1,
//! each followed by ReLU; global average pooling; a ReLU hidden layer; a
//! linear output layer whose result is multiplied by a fixed output scale.
//! Activations are stored channel-major (`[c][row][col]`).

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sensorgrade_core::raster::RasterConfig;

use crate::scalar::{matmul, Scalar};
use crate::trajectory::HORIZON;
use crate::PlannerError;

pub const CONV_WIDTHS: [usize; 5] = [16, 32, 64, 64, 64];
pub const HIDDEN: usize = 128;
/// Multiplies the last layer's output so that meter-scale trajectories are
/// reachable with unit-scale weights.
pub const OUTPUT_SCALE: f64 = 4.0;
const LAYOUT_TAG: &str = "conv3x3s2p1-relu/gap/fc-relu/fc";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub in_channels: usize,
    pub input_size: usize,
    pub conv_widths: Vec<usize>,
    pub hidden: usize,
    pub outputs: usize,
    pub output_scale: f64,
}

/// Location of one parameter tensor in the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tensor {
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Copy)]
struct ConvLayer {
    c_in: usize,
    c_out: usize,
    s_in: usize,
    s_out: usize,
    w: Tensor,
    b: Tensor,
}

#[derive(Debug, Clone, Copy)]
struct DenseLayer {
    n_in: usize,
    n_out: usize,
    w: Tensor,
    b: Tensor,
}

#[derive(Debug, Clone)]
struct Layout {
    convs: Vec<ConvLayer>,
    fc1: DenseLayer,
    fc2: DenseLayer,
    total: usize,
}

impl ArchSpec {
    /// The fixed planner architecture for rasters of the given shape.
    pub fn standard(raster: &RasterConfig) -> Self {
        Self {
            in_channels: raster.channels(),
            input_size: raster.size_px,
            conv_widths: CONV_WIDTHS.to_vec(),
            hidden: HIDDEN,
            outputs: 2 * HORIZON,
            output_scale: OUTPUT_SCALE,
        }
    }

    pub fn validate(&self) -> Result<(), PlannerError> {
        if self.in_channels == 0 || self.input_size == 0 || self.hidden == 0 || self.outputs == 0 {
            return Err(PlannerError::Config(format!("degenerate architecture {self:?}")));
        }
        if self.conv_widths.is_empty() || self.conv_widths.contains(&0) {
            return Err(PlannerError::Config("conv widths must be non-empty and positive".into()));
        }
        if !(self.output_scale > 0.0 && self.output_scale.is_finite()) {
            return Err(PlannerError::Config("output_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.input_size * self.input_size
    }

    fn layout(&self) -> Layout {
        let mut offset = 0;
        let mut take = |len: usize| {
            let t = Tensor { offset, len };
            offset += len;
            t
        };
        let mut convs = Vec::new();
        let (mut c, mut s) = (self.in_channels, self.input_size);
        for &w in &self.conv_widths {
            let s_out = s.div_ceil(2);
            convs.push(ConvLayer {
                c_in: c,
                c_out: w,
                s_in: s,
                s_out,
                w: take(w * c * 9),
                b: take(w),
            });
            c = w;
            s = s_out;
        }
        let fc1 = DenseLayer {
            n_in: c,
            n_out: self.hidden,
            w: take(self.hidden * c),
            b: take(self.hidden),
        };
        let fc2 = DenseLayer {
            n_in: self.hidden,
            n_out: self.outputs,
            w: take(self.outputs * self.hidden),
            b: take(self.outputs),
        };
        Layout {
            convs,
            fc1,
            fc2,
            total: offset,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }

    /// Weight tensors with their fan-in, in declaration order.
    fn weight_tensors(&self) -> Vec<(Tensor, usize)> {
        let l = self.layout();
        let mut v: Vec<(Tensor, usize)> = l.convs.iter().map(|c| (c.w, c.c_in * 9)).collect();
        v.push((l.fc1.w, l.fc1.n_in));
        v.push((l.fc2.w, l.fc2.n_in));
        v
    }

    /// Parameters that read the given input channel in the first layer.
    pub fn first_layer_channel_weights(&self, channel: usize) -> Vec<usize> {
        let conv = self.layout().convs[0];
        (0..conv.c_out)
            .flat_map(|o| (0..9).map(move |k| conv.w.offset + (o * conv.c_in + channel) * 9 + k))
            .collect()
    }

    /// Hex SHA-256 of the canonical layer description.
    pub fn fingerprint(&self) -> String {
        let desc = format!(
            "{LAYOUT_TAG};in={}x{}x{};conv={:?};hidden={};out={};scale={:e}",
            self.in_channels,
            self.input_size,
            self.input_size,
            self.conv_widths,
            self.hidden,
            self.outputs,
            self.output_scale
        );
        Sha256::digest(desc.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Activations kept from the forward pass for backpropagation.
#[derive(Debug, Default, Clone)]
pub struct Cache<S> {
    cols: Vec<Vec<S>>,
    acts: Vec<Vec<S>>,
    pooled: Vec<S>,
    hidden: Vec<S>,
}

impl<S: Scalar> Cache<S> {
    /// ReLU activity pattern, used to detect kinks in finite differences.
    pub fn activation_signature(&self) -> Vec<bool> {
        self.acts
            .iter()
            .flatten()
            .chain(self.hidden.iter())
            .map(|v| *v > S::ZERO)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<S> {
    pub arch: ArchSpec,
    pub params: Vec<S>,
}

fn im2col<S: Scalar>(x: &[S], c: usize, s: usize, so: usize, col: &mut [S]) {
    let p = so * so;
    for ci in 0..c {
        let plane = &x[ci * s * s..(ci + 1) * s * s];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((ci * 9) + ky * 3 + kx) * p..((ci * 9) + ky * 3 + kx + 1) * p];
                for oy in 0..so {
                    let iy = (2 * oy + ky) as isize - 1;
                    let dst = &mut row[oy * so..(oy + 1) * so];
                    if iy < 0 || iy >= s as isize {
                        dst.fill(S::ZERO);
                        continue;
                    }
                    let src = &plane[iy as usize * s..(iy as usize + 1) * s];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (2 * ox + kx) as isize - 1;
                        *d = if ix < 0 || ix >= s as isize { S::ZERO } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<S: Scalar>(col: &[S], c: usize, s: usize, so: usize, dx: &mut [S]) {
    let p = so * so;
    for ci in 0..c {
        let plane = &mut dx[ci * s * s..(ci + 1) * s * s];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[((ci * 9) + ky * 3 + kx) * p..((ci * 9) + ky * 3 + kx + 1) * p];
                for oy in 0..so {
                    let iy = (2 * oy + ky) as isize - 1;
                    if iy < 0 || iy >= s as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * s..(iy as usize + 1) * s];
                    for ox in 0..so {
                        let ix = (2 * ox + kx) as isize - 1;
                        if ix >= 0 && ix < s as isize {
                            dst[ix as usize] += row[oy * so + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<S: Scalar> Network<S> {
    pub fn zeros(arch: &ArchSpec) -> Self {
        Self {
            arch: arch.clone(),
            params: vec![S::ZERO; arch.param_count()],
        }
    }

    /// Fan-in scaled normal weights (He for ReLU layers), zero biases.
    pub fn init<R: Rng>(arch: &ArchSpec, rng: &mut R) -> Self {
        let mut net = Self::zeros(arch);
        for (t, fan_in) in arch.weight_tensors() {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            for p in &mut net.params[t.offset..t.offset + t.len] {
                *p = S::from_f64(normal.sample(rng));
            }
        }
        net
    }

    pub fn cast<T: Scalar>(&self) -> Network<T> {
        Network {
            arch: self.arch.clone(),
            params: self.params.iter().map(|p| T::from_f64(p.to_f64())).collect(),
        }
    }

    fn check_input(&self, input: &[S]) -> Result<(), PlannerError> {
        let expected = self.arch.input_len();
        if input.len() != expected {
            return Err(PlannerError::Shape {
                expected: format!("{}x{}x{}", self.arch.in_channels, self.arch.input_size, self.arch.input_size),
                actual: format!("{} values", input.len()),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[S]) -> Result<Vec<S>, PlannerError> {
        let mut cache = Cache::default();
        self.forward_cached(input, &mut cache)
    }

    pub fn forward_cached(&self, input: &[S], cache: &mut Cache<S>) -> Result<Vec<S>, PlannerError> {
        self.check_input(input)?;
        let layout = self.arch.layout();
        let p = &self.params;
        cache.cols.clear();
        cache.acts.clear();
        let mut x: &[S] = input;
        for conv in &layout.convs {
            let np = conv.s_out * conv.s_out;
            let k = conv.c_in * 9;
            let mut col = vec![S::ZERO; k * np];
            im2col(x, conv.c_in, conv.s_in, conv.s_out, &mut col);
            let mut y = vec![S::ZERO; conv.c_out * np];
            for (o, chunk) in y.chunks_mut(np).enumerate() {
                chunk.fill(p[conv.b.offset + o]);
            }
            matmul(conv.c_out, k, np, &p[conv.w.offset..], false, &col, false, &mut y, true);
            for v in &mut y {
                *v = v.relu();
            }
            cache.cols.push(col);
            cache.acts.push(y);
            x = cache.acts.last().unwrap();
        }
        let last = layout.convs.last().unwrap();
        let np = last.s_out * last.s_out;
        let inv = S::from_f64(1.0 / np as f64);
        cache.pooled = x
            .chunks(np)
            .map(|ch| ch.iter().fold(S::ZERO, |a, b| a + *b) * inv)
            .collect();
        cache.hidden = dense(&layout.fc1, p, &cache.pooled);
        for v in &mut cache.hidden {
            *v = v.relu();
        }
        let scale = S::from_f64(self.arch.output_scale);
        let out = dense(&layout.fc2, p, &cache.hidden).into_iter().map(|v| v * scale).collect();
        Ok(out)
    }

    /// Accumulates `d loss / d params` into `grads` given `d loss / d output`.
    pub fn backward(&self, cache: &Cache<S>, d_out: &[S], grads: &mut [S]) {
        let layout = self.arch.layout();
        let p = &self.params;
        let scale = S::from_f64(self.arch.output_scale);
        let dz: Vec<S> = d_out.iter().map(|v| *v * scale).collect();
        let mut dh = dense_backward(&layout.fc2, p, &cache.hidden, &dz, grads);
        for (g, h) in dh.iter_mut().zip(&cache.hidden) {
            if *h <= S::ZERO {
                *g = S::ZERO;
            }
        }
        let dpool = dense_backward(&layout.fc1, p, &cache.pooled, &dh, grads);
        let n = layout.convs.len();
        let last = layout.convs[n - 1];
        let np = last.s_out * last.s_out;
        let inv = S::from_f64(1.0 / np as f64);
        let mut dy: Vec<S> = dpool.iter().flat_map(|g| std::iter::repeat_n(*g * inv, np)).collect();
        for li in (0..n).rev() {
            let conv = layout.convs[li];
            let np = conv.s_out * conv.s_out;
            let k = conv.c_in * 9;
            for (g, a) in dy.iter_mut().zip(&cache.acts[li]) {
                if *a <= S::ZERO {
                    *g = S::ZERO;
                }
            }
            for (o, chunk) in dy.chunks(np).enumerate() {
                grads[conv.b.offset + o] += chunk.iter().fold(S::ZERO, |a, b| a + *b);
            }
            matmul(
                conv.c_out,
                np,
                k,
                &dy,
                false,
                &cache.cols[li],
                true,
                &mut grads[conv.w.offset..conv.w.offset + conv.w.len],
                true,
            );
            if li == 0 {
                break;
            }
            let mut dcol = vec![S::ZERO; k * np];
            matmul(k, conv.c_out, np, &p[conv.w.offset..], true, &dy, false, &mut dcol, false);
            let mut dx = vec![S::ZERO; conv.c_in * conv.s_in * conv.s_in];
            col2im(&dcol, conv.c_in, conv.s_in, conv.s_out, &mut dx);
            dy = dx;
        }
    }
}

fn dense<S: Scalar>(l: &DenseLayer, p: &[S], x: &[S]) -> Vec<S> {
    let mut y = p[l.b.offset..l.b.offset + l.n_out].to_vec();
    matmul(l.n_out, l.n_in, 1, &p[l.w.offset..], false, x, false, &mut y, true);
    y
}

/// Adds weight/bias gradients and returns the gradient w.r.t. the input.
fn dense_backward<S: Scalar>(l: &DenseLayer, p: &[S], x: &[S], dy: &[S], grads: &mut [S]) -> Vec<S> {
    for (o, g) in dy.iter().enumerate() {
        grads[l.b.offset + o] += *g;
    }
    matmul(l.n_out, 1, l.n_in, dy, false, x, false, &mut grads[l.w.offset..l.w.offset + l.w.len], true);
    let mut dx = vec![S::ZERO; l.n_in];
    matmul(l.n_in, l.n_out, 1, &p[l.w.offset..], true, dy, false, &mut dx, false);
    dx
}
