use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{run, run_backward, Cache, Op, ParamAllocator, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    /// 50-layer bottleneck residual network, 2048-d output.
    Residual50,
    /// Small residual stack with a 128-d output, for CPU-scale runs.
    ToyCnn,
}

impl EncoderKind {
    pub fn dim(self) -> usize {
        match self {
            EncoderKind::Residual50 => 2048,
            EncoderKind::ToyCnn => 128,
        }
    }

    /// Smallest square input the encoder accepts.
    pub fn min_input(self) -> usize {
        match self {
            EncoderKind::Residual50 => 32,
            EncoderKind::ToyCnn => 8,
        }
    }
}

/// A feed-forward stack ending in global average pooling.
#[derive(Debug, Clone)]
pub struct Network {
    pub ops: Vec<Op>,
    pub in_channels: usize,
    pub out_dim: usize,
    allocator_len: usize,
    allocator: std::sync::Arc<ParamAllocator>,
}

impl Network {
    fn from_parts(ops: Vec<Op>, in_channels: usize, out_dim: usize, allocator: ParamAllocator) -> Self {
        Network {
            ops,
            in_channels,
            out_dim,
            allocator_len: allocator.len(),
            allocator: std::sync::Arc::new(allocator),
        }
    }

    pub fn encoder(kind: EncoderKind) -> Self {
        let mut a = ParamAllocator::default();
        let ops = match kind {
            EncoderKind::ToyCnn => toy_cnn(&mut a),
            EncoderKind::Residual50 => residual50(&mut a),
        };
        Network::from_parts(ops, 3, kind.dim(), a)
    }

    pub fn param_len(&self) -> usize {
        self.allocator_len
    }

    /// Fresh He-initialized parameters.
    pub fn init_params(&self, seed: u64) -> Vec<f32> {
        self.allocator.initialize(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Pooled output for one input; no caches kept.
    pub fn infer(&self, params: &[f32], x: Tensor) -> Vec<f32> {
        run(&self.ops, params, x, None).data
    }

    pub fn forward(&self, params: &[f32], x: Tensor) -> (Vec<f32>, Vec<Cache>) {
        let mut cache = Vec::with_capacity(self.ops.len());
        let y = run(&self.ops, params, x, Some(&mut cache));
        (y.data, cache)
    }

    /// Accumulates parameter gradients for `d_out` into `grads`.
    pub fn backward(&self, params: &[f32], grads: &mut [f32], d_out: &[f32], cache: Vec<Cache>) -> Tensor {
        let dy = Tensor::from_vec(d_out.len(), 1, 1, d_out.to_vec());
        run_backward(&self.ops, params, grads, dy, cache)
    }
}

/// Two-layer perceptron head `z = W2 relu(W1 h + b1) + b2`.
#[derive(Debug, Clone)]
pub struct Projector {
    pub net: Network,
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
}

impl Projector {
    pub fn new(in_dim: usize, hidden: usize, out_dim: usize) -> Self {
        let mut a = ParamAllocator::default();
        let ops = vec![a.linear(in_dim, hidden), Op::Relu, a.linear(hidden, out_dim)];
        Projector {
            net: Network::from_parts(ops, in_dim, out_dim, a),
            in_dim,
            hidden,
            out_dim,
        }
    }

    pub fn param_len(&self) -> usize {
        self.net.param_len()
    }

    pub fn init_params(&self, seed: u64) -> Vec<f32> {
        self.net.init_params(seed)
    }

    pub fn forward(&self, params: &[f32], h: &[f32]) -> (Vec<f32>, Vec<Cache>) {
        self.net.forward(params, Tensor::from_vec(h.len(), 1, 1, h.to_vec()))
    }

    /// Returns the gradient with respect to the projector input.
    pub fn backward(&self, params: &[f32], grads: &mut [f32], dz: &[f32], cache: Vec<Cache>) -> Vec<f32> {
        self.net.backward(params, grads, dz, cache).data
    }
}

fn conv_bn_relu(a: &mut ParamAllocator, in_c: usize, out_c: usize, k: usize, stride: usize) -> Vec<Op> {
    vec![a.conv(in_c, out_c, k, stride, k / 2, false), a.affine(out_c), Op::Relu]
}

fn basic_block(a: &mut ParamAllocator, c: usize) -> Op {
    Op::Residual {
        body: vec![
            a.conv(c, c, 3, 1, 1, false),
            a.affine(c),
            Op::Relu,
            a.conv(c, c, 3, 1, 1, false),
            a.affine_zero(c),
        ],
        shortcut: vec![],
    }
}

fn toy_cnn(a: &mut ParamAllocator) -> Vec<Op> {
    let mut ops = Vec::new();
    ops.extend(conv_bn_relu(a, 3, 16, 3, 1));
    ops.extend(conv_bn_relu(a, 16, 32, 3, 2));
    ops.push(basic_block(a, 32));
    ops.extend(conv_bn_relu(a, 32, 64, 3, 2));
    ops.push(basic_block(a, 64));
    ops.extend(conv_bn_relu(a, 64, 128, 1, 1));
    ops.push(Op::GlobalAvgPool);
    ops
}

/// Bottleneck block with the stride on the 3x3 convolution.
fn bottleneck(a: &mut ParamAllocator, in_c: usize, planes: usize, stride: usize) -> Op {
    let out_c = planes * 4;
    let body = vec![
        a.conv(in_c, planes, 1, 1, 0, false),
        a.affine(planes),
        Op::Relu,
        a.conv(planes, planes, 3, stride, 1, false),
        a.affine(planes),
        Op::Relu,
        a.conv(planes, out_c, 1, 1, 0, false),
        a.affine_zero(out_c),
    ];
    let shortcut = if stride != 1 || in_c != out_c {
        vec![a.conv(in_c, out_c, 1, stride, 0, false), a.affine(out_c)]
    } else {
        vec![]
    };
    Op::Residual { body, shortcut }
}

fn residual50(a: &mut ParamAllocator) -> Vec<Op> {
    let mut ops = vec![a.conv(3, 64, 7, 2, 3, false), a.affine(64), Op::Relu];
    ops.push(Op::MaxPool { k: 3, stride: 2, pad: 1 });
    let mut in_c = 64;
    for (stage, (planes, blocks)) in [(64, 3), (128, 4), (256, 6), (512, 3)].into_iter().enumerate() {
        for b in 0..blocks {
            let stride = if b == 0 && stage > 0 { 2 } else { 1 };
            ops.push(bottleneck(a, in_c, planes, stride));
            in_c = planes * 4;
        }
    }
    ops.push(Op::GlobalAvgPool);
    ops
}
