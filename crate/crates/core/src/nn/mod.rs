//! A small CPU convolutional network with explicit backward passes.
//!
//! All parameters of a network live in one flat `f32` vector; layers hold
//! offsets into it. Gradients use the same layout, so optimizers and
//! checkpoints only ever see plain slices. Each sample is processed
//! independently (normalization layers use frozen statistics), which makes
//! per-sample gradients additive across workers.

mod conv;
mod models;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use models::{EncoderKind, Network, Projector};

/// A single-sample `C x H x W` activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), c * h * w, "tensor data does not match its shape");
        Tensor { c, h, w, data }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }
}

/// One layer of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Op {
    Conv {
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        weight: usize,
        bias: Option<usize>,
    },
    /// Per-channel `x * scale + shift`: batch normalization with frozen
    /// running statistics folded in.
    Affine { c: usize, scale: usize, shift: usize },
    Relu,
    MaxPool { k: usize, stride: usize, pad: usize },
    /// `relu(body(x) + shortcut(x))`; an empty shortcut is the identity.
    Residual { body: Vec<Op>, shortcut: Vec<Op> },
    GlobalAvgPool,
}

/// What a layer keeps from its forward pass for the backward pass.
#[derive(Debug)]
pub enum Cache {
    Conv { cols: Vec<f32>, in_shape: (usize, usize, usize) },
    Affine { input: Tensor },
    Relu { output: Tensor },
    MaxPool { argmax: Vec<usize>, in_shape: (usize, usize, usize) },
    Residual { body: Vec<Cache>, shortcut: Vec<Cache>, output: Tensor },
    GlobalAvgPool { in_shape: (usize, usize, usize) },
}

impl Op {
    pub fn output_shape(&self, (c, h, w): (usize, usize, usize)) -> (usize, usize, usize) {
        match self {
            Op::Conv {
                out_c, k, stride, pad, ..
            } => (
                *out_c,
                (h + 2 * pad - k) / stride + 1,
                (w + 2 * pad - k) / stride + 1,
            ),
            Op::MaxPool { k, stride, pad } => (c, (h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1),
            Op::Residual { body, .. } => body.iter().fold((c, h, w), |s, op| op.output_shape(s)),
            Op::GlobalAvgPool => (c, 1, 1),
            Op::Affine { .. } | Op::Relu => (c, h, w),
        }
    }

    pub fn forward(&self, params: &[f32], x: Tensor, cache: Option<&mut Vec<Cache>>) -> Tensor {
        match self {
            Op::Conv {
                in_c,
                out_c,
                k,
                stride,
                pad,
                weight,
                bias,
            } => {
                debug_assert_eq!(x.c, *in_c);
                let geom = conv::ConvGeom::new(*in_c, *out_c, *k, *stride, *pad, x.h, x.w);
                let w = &params[*weight..*weight + geom.weight_len()];
                let b = bias.map(|o| &params[o..o + out_c]);
                let (y, cols) = conv::forward(&geom, w, b, &x.data);
                if let Some(cache) = cache {
                    cache.push(Cache::Conv {
                        cols,
                        in_shape: x.shape(),
                    });
                }
                Tensor::from_vec(*out_c, geom.out_h, geom.out_w, y)
            }
            Op::Affine { c, scale, shift } => {
                let mut y = x.clone();
                let hw = x.h * x.w;
                for ch in 0..*c {
                    let (s, t) = (params[scale + ch], params[shift + ch]);
                    for v in &mut y.data[ch * hw..(ch + 1) * hw] {
                        *v = *v * s + t;
                    }
                }
                if let Some(cache) = cache {
                    cache.push(Cache::Affine { input: x });
                }
                y
            }
            Op::Relu => {
                let mut y = x;
                for v in &mut y.data {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                if let Some(cache) = cache {
                    cache.push(Cache::Relu { output: y.clone() });
                }
                y
            }
            Op::MaxPool { k, stride, pad } => {
                let (c, oh, ow) = self.output_shape(x.shape());
                let mut y = Tensor::zeros(c, oh, ow);
                let mut argmax = vec![0usize; c * oh * ow];
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = f32::NEG_INFINITY;
                            let mut best_idx = 0;
                            for ky in 0..*k {
                                let iy = (oy * stride + ky) as isize - *pad as isize;
                                if iy < 0 || iy >= x.h as isize {
                                    continue;
                                }
                                for kx in 0..*k {
                                    let ix = (ox * stride + kx) as isize - *pad as isize;
                                    if ix < 0 || ix >= x.w as isize {
                                        continue;
                                    }
                                    let idx = ch * x.h * x.w + iy as usize * x.w + ix as usize;
                                    if x.data[idx] > best {
                                        best = x.data[idx];
                                        best_idx = idx;
                                    }
                                }
                            }
                            let o = ch * oh * ow + oy * ow + ox;
                            y.data[o] = best;
                            argmax[o] = best_idx;
                        }
                    }
                }
                if let Some(cache) = cache {
                    cache.push(Cache::MaxPool {
                        argmax,
                        in_shape: x.shape(),
                    });
                }
                y
            }
            Op::Residual { body, shortcut } => match cache {
                Some(cache) => {
                    let mut body_cache = Vec::with_capacity(body.len());
                    let mut short_cache = Vec::with_capacity(shortcut.len());
                    let skip = run(shortcut, params, x.clone(), Some(&mut short_cache));
                    let mut y = run(body, params, x, Some(&mut body_cache));
                    add_relu(&mut y, &skip);
                    cache.push(Cache::Residual {
                        body: body_cache,
                        shortcut: short_cache,
                        output: y.clone(),
                    });
                    y
                }
                None => {
                    let skip = run(shortcut, params, x.clone(), None);
                    let mut y = run(body, params, x, None);
                    add_relu(&mut y, &skip);
                    y
                }
            },
            Op::GlobalAvgPool => {
                let hw = (x.h * x.w) as f32;
                let data = x
                    .data
                    .chunks_exact(x.h * x.w)
                    .map(|ch| ch.iter().sum::<f32>() / hw)
                    .collect();
                if let Some(cache) = cache {
                    cache.push(Cache::GlobalAvgPool { in_shape: x.shape() });
                }
                Tensor::from_vec(x.c, 1, 1, data)
            }
        }
    }

    /// Propagates `dy` back through the layer, accumulating parameter
    /// gradients into `grads` and returning the input gradient.
    pub fn backward(&self, params: &[f32], grads: &mut [f32], dy: Tensor, cache: Cache) -> Tensor {
        match (self, cache) {
            (
                Op::Conv {
                    in_c,
                    out_c,
                    k,
                    stride,
                    pad,
                    weight,
                    bias,
                },
                Cache::Conv { cols, in_shape },
            ) => {
                let geom = conv::ConvGeom::new(*in_c, *out_c, *k, *stride, *pad, in_shape.1, in_shape.2);
                let wlen = geom.weight_len();
                if let Some(b) = bias {
                    let hw = geom.out_h * geom.out_w;
                    for ch in 0..*out_c {
                        grads[b + ch] += dy.data[ch * hw..(ch + 1) * hw].iter().sum::<f32>();
                    }
                }
                let (w, dw) = (&params[*weight..*weight + wlen], &mut grads[*weight..*weight + wlen]);
                let dx = conv::backward(&geom, w, dw, &cols, &dy.data);
                Tensor::from_vec(in_shape.0, in_shape.1, in_shape.2, dx)
            }
            (Op::Affine { c, scale, shift }, Cache::Affine { input }) => {
                let hw = input.h * input.w;
                let mut dx = dy;
                for ch in 0..*c {
                    let s = params[scale + ch];
                    let (mut ds, mut dt) = (0.0f32, 0.0f32);
                    let span = ch * hw..(ch + 1) * hw;
                    for (g, x) in dx.data[span.clone()].iter_mut().zip(&input.data[span]) {
                        ds += *g * x;
                        dt += *g;
                        *g *= s;
                    }
                    grads[scale + ch] += ds;
                    grads[shift + ch] += dt;
                }
                dx
            }
            (Op::Relu, Cache::Relu { output }) => {
                let mut dx = dy;
                for (g, y) in dx.data.iter_mut().zip(&output.data) {
                    if *y <= 0.0 {
                        *g = 0.0;
                    }
                }
                dx
            }
            (Op::MaxPool { .. }, Cache::MaxPool { argmax, in_shape }) => {
                let mut dx = Tensor::zeros(in_shape.0, in_shape.1, in_shape.2);
                for (g, &idx) in dy.data.iter().zip(&argmax) {
                    dx.data[idx] += g;
                }
                dx
            }
            (
                Op::Residual { body, shortcut },
                Cache::Residual {
                    body: body_cache,
                    shortcut: short_cache,
                    output,
                },
            ) => {
                let mut d = dy;
                for (g, y) in d.data.iter_mut().zip(&output.data) {
                    if *y <= 0.0 {
                        *g = 0.0;
                    }
                }
                let mut dx = run_backward(body, params, grads, d.clone(), body_cache);
                let dskip = run_backward(shortcut, params, grads, d, short_cache);
                for (a, b) in dx.data.iter_mut().zip(&dskip.data) {
                    *a += b;
                }
                dx
            }
            (Op::GlobalAvgPool, Cache::GlobalAvgPool { in_shape }) => {
                let hw = in_shape.1 * in_shape.2;
                let mut dx = Tensor::zeros(in_shape.0, in_shape.1, in_shape.2);
                for (ch, g) in dy.data.iter().enumerate() {
                    let v = g / hw as f32;
                    dx.data[ch * hw..(ch + 1) * hw].iter_mut().for_each(|d| *d = v);
                }
                dx
            }
            (op, cache) => unreachable!("cache {cache:?} does not belong to {op:?}"),
        }
    }
}

fn add_relu(y: &mut Tensor, skip: &Tensor) {
    debug_assert_eq!(y.shape(), skip.shape(), "residual branches disagree in shape");
    for (a, b) in y.data.iter_mut().zip(&skip.data) {
        *a = (*a + b).max(0.0);
    }
}

/// Runs a layer sequence, optionally recording caches in order.
pub fn run(ops: &[Op], params: &[f32], mut x: Tensor, mut cache: Option<&mut Vec<Cache>>) -> Tensor {
    for op in ops {
        x = op.forward(params, x, cache.as_deref_mut());
    }
    x
}

pub fn run_backward(ops: &[Op], params: &[f32], grads: &mut [f32], mut dy: Tensor, caches: Vec<Cache>) -> Tensor {
    debug_assert_eq!(ops.len(), caches.len());
    for (op, cache) in ops.iter().zip(caches).rev() {
        dy = op.backward(params, grads, dy, cache);
    }
    dy
}

/// Builds layer lists while handing out parameter offsets.
#[derive(Debug, Default)]
pub struct ParamAllocator {
    len: usize,
    inits: Vec<(usize, usize, Init)>,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    /// He-normal with the given fan.
    Kaiming(usize),
    Constant(f32),
}

impl ParamAllocator {
    fn take(&mut self, n: usize, init: Init) -> usize {
        let offset = self.len;
        self.len += n;
        self.inits.push((offset, n, init));
        offset
    }

    pub fn conv(&mut self, in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize, bias: bool) -> Op {
        let weight = self.take(out_c * in_c * k * k, Init::Kaiming(out_c * k * k));
        let bias = bias.then(|| self.take(out_c, Init::Constant(0.0)));
        Op::Conv {
            in_c,
            out_c,
            k,
            stride,
            pad,
            weight,
            bias,
        }
    }

    pub fn affine(&mut self, c: usize) -> Op {
        let scale = self.take(c, Init::Constant(1.0));
        let shift = self.take(c, Init::Constant(0.0));
        Op::Affine { c, scale, shift }
    }

    /// Affine with zero scale, so a residual body starts as the identity map.
    pub fn affine_zero(&mut self, c: usize) -> Op {
        let scale = self.take(c, Init::Constant(0.0));
        let shift = self.take(c, Init::Constant(0.0));
        Op::Affine { c, scale, shift }
    }

    /// Dense layer as a 1x1 convolution over a `d x 1 x 1` tensor.
    pub fn linear(&mut self, d_in: usize, d_out: usize) -> Op {
        let weight = self.take(d_out * d_in, Init::Kaiming(d_in));
        let bias = Some(self.take(d_out, Init::Constant(0.0)));
        Op::Conv {
            in_c: d_in,
            out_c: d_out,
            k: 1,
            stride: 1,
            pad: 0,
            weight,
            bias,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn initialize<R: Rng>(&self, rng: &mut R) -> Vec<f32> {
        let mut params = vec![0.0f32; self.len];
        for &(offset, n, init) in &self.inits {
            let slot = &mut params[offset..offset + n];
            match init {
                Init::Constant(v) => slot.iter_mut().for_each(|p| *p = v),
                Init::Kaiming(fan) => {
                    let normal = Normal::new(0.0, (2.0 / fan as f64).sqrt()).expect("valid std");
                    slot.iter_mut().for_each(|p| *p = normal.sample(rng) as f32);
                }
            }
        }
        params
    }
}
