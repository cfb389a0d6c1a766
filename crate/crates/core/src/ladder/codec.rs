//! A small intra-only transform codec used as an in-process stand-in for a
//! real encoder: 8x8 orthonormal DCT, dead-zone scalar quantization, an
//! exp-Golomb bit-cost model and bisection rate control on the quantizer.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::media::{HdrFrame, Plane};

const N: usize = 8;
const DEAD_ZONE: f64 = 1.0 / 3.0;
/// Side, in blocks, of the groups that share one coded flag.
const GROUP: usize = 4;

fn dct_matrix() -> &'static [[f64; N]; N] {
    static M: OnceLock<[[f64; N]; N]> = OnceLock::new();
    M.get_or_init(|| {
        let mut m = [[0.0; N]; N];
        for (k, row) in m.iter_mut().enumerate() {
            let alpha = if k == 0 { (1.0 / N as f64).sqrt() } else { (2.0 / N as f64).sqrt() };
            for (n, v) in row.iter_mut().enumerate() {
                *v = alpha * (PI * (2 * n + 1) as f64 * k as f64 / (2 * N) as f64).cos();
            }
        }
        m
    })
}

fn zigzag() -> &'static [usize; N * N] {
    static Z: OnceLock<[usize; N * N]> = OnceLock::new();
    Z.get_or_init(|| {
        let mut order: Vec<(usize, usize)> = (0..N).flat_map(|y| (0..N).map(move |x| (x, y))).collect();
        order.sort_by_key(|&(x, y)| {
            let d = x + y;
            (d, if d % 2 == 0 { x } else { y })
        });
        let mut z = [0; N * N];
        for (i, (x, y)) in order.into_iter().enumerate() {
            z[i] = y * N + x;
        }
        z
    })
}

fn transform(block: &[f64; N * N], inverse: bool) -> [f64; N * N] {
    let m = dct_matrix();
    let at = |i: usize, j: usize| if inverse { m[j][i] } else { m[i][j] };
    let mut tmp = [0.0; N * N];
    // rows then columns: out = M X M^T (forward), M^T X M (inverse)
    for y in 0..N {
        for k in 0..N {
            tmp[y * N + k] = (0..N).map(|n| at(k, n) * block[y * N + n]).sum();
        }
    }
    let mut out = [0.0; N * N];
    for x in 0..N {
        for k in 0..N {
            out[k * N + x] = (0..N).map(|n| at(k, n) * tmp[n * N + x]).sum();
        }
    }
    out
}

/// Transform coefficients of one plane, in code-value units.
#[derive(Debug, Clone)]
pub struct PlaneCoeffs {
    width: usize,
    height: usize,
    blocks: Vec<[f64; N * N]>,
}

impl PlaneCoeffs {
    /// Samples are level-shifted to be centred on zero; edge blocks are
    /// padded by replicating the last row and column.
    pub fn analyze(plane: &Plane, max_code: f64) -> Self {
        let (bw, bh) = (plane.width.div_ceil(N), plane.height.div_ceil(N));
        let mid = (max_code + 1.0) / 2.0;
        let mut blocks = Vec::with_capacity(bw * bh);
        for by in 0..bh {
            for bx in 0..bw {
                let mut b = [0.0; N * N];
                for y in 0..N {
                    let sy = (by * N + y).min(plane.height - 1);
                    for x in 0..N {
                        let sx = (bx * N + x).min(plane.width - 1);
                        b[y * N + x] = plane.data[sy * plane.width + sx] as f64 * max_code - mid;
                    }
                }
                blocks.push(transform(&b, false));
            }
        }
        PlaneCoeffs {
            width: plane.width,
            height: plane.height,
            blocks,
        }
    }

    /// Modeled size in bits at quantizer step `q`. Blocks are signalled in
    /// groups of `GROUP x GROUP`: one flag per group, and for a group with
    /// any nonzero level a flag per block plus the levels up to the last
    /// nonzero one in zigzag order.
    pub fn bits(&self, q: f64) -> u64 {
        let z = zigzag();
        let block_bits: Vec<Option<u64>> = self
            .blocks
            .iter()
            .map(|b| {
                let levels = z.map(|i| quantize(b[i], q));
                levels
                    .iter()
                    .rposition(|&l| l != 0)
                    .map(|last| 6 + levels[..=last].iter().map(|&l| signed_golomb_len(l)).sum::<u64>())
            })
            .collect();
        let (bw, bh) = (self.width.div_ceil(N), self.height.div_ceil(N));
        let mut total = 0;
        for gy in (0..bh).step_by(GROUP) {
            for gx in (0..bw).step_by(GROUP) {
                total += 1;
                let members = (gy..(gy + GROUP).min(bh)).flat_map(|y| (gx..(gx + GROUP).min(bw)).map(move |x| y * bw + x));
                if members.clone().any(|i| block_bits[i].is_some()) {
                    total += members.map(|i| 1 + block_bits[i].unwrap_or(0)).sum::<u64>();
                }
            }
        }
        total
    }

    /// Decoded plane after quantization at `q`, rounded to integer codes.
    pub fn reconstruct(&self, q: f64, max_code: f64) -> Plane {
        let bw = self.width.div_ceil(N);
        let mid = (max_code + 1.0) / 2.0;
        let mut out = Plane::new(self.width, self.height);
        for (i, b) in self.blocks.iter().enumerate() {
            let mut deq = [0.0; N * N];
            for k in 0..N * N {
                deq[k] = quantize(b[k], q) as f64 * q;
            }
            let px = transform(&deq, true);
            let (bx, by) = (i % bw, i / bw);
            for y in 0..N {
                let oy = by * N + y;
                if oy >= self.height {
                    break;
                }
                for x in 0..N {
                    let ox = bx * N + x;
                    if ox >= self.width {
                        break;
                    }
                    let code = (px[y * N + x] + mid).round().clamp(0.0, max_code);
                    out.data[oy * self.width + ox] = (code / max_code) as f32;
                }
            }
        }
        out
    }
}

fn quantize(c: f64, q: f64) -> i64 {
    let level = (c.abs() / q + DEAD_ZONE).floor() as i64;
    if c < 0.0 {
        -level
    } else {
        level
    }
}

/// Length of the signed exp-Golomb code of `v`.
fn signed_golomb_len(v: i64) -> u64 {
    let mapped = if v > 0 { 2 * v as u64 - 1 } else { 2 * v.unsigned_abs() };
    2 * (64 - (mapped + 1).leading_zeros() as u64 - 1) + 1
}

/// Result of coding a sequence of frames with one quantizer.
#[derive(Debug, Clone)]
pub struct CodedFrames {
    pub frames: Vec<HdrFrame>,
    pub bits: u64,
    pub q: f64,
}

const LOG2_Q_RANGE: (f64, f64) = (-20.0, 20.0);

/// Codes `frames` with the quantizer whose modeled size is closest to
/// `target_bits`.
pub fn encode_to_budget(frames: &[HdrFrame], target_bits: f64) -> Result<CodedFrames> {
    if frames.is_empty() {
        return Err(Error::InvalidArgument("no frames to encode".into()));
    }
    if !(target_bits > 0.0) {
        return Err(Error::InvalidArgument(format!("bit budget {target_bits} must be positive")));
    }
    let max_code = frames[0].geometry.max_code();
    let coeffs: Vec<[PlaneCoeffs; 3]> = frames
        .iter()
        .map(|f| f.planes.each_ref().map(|p| PlaneCoeffs::analyze(p, max_code)))
        .collect();
    let bits_at = |q: f64| -> u64 { coeffs.iter().flat_map(|c| c.iter()).map(|c| c.bits(q)).sum() };

    // bits(q) is nonincreasing in q
    let (mut lo, mut hi) = LOG2_Q_RANGE;
    for _ in 0..48 {
        let mid = 0.5 * (lo + hi);
        if (bits_at(mid.exp2()) as f64) > target_bits {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (b_lo, b_hi) = (bits_at(lo.exp2()), bits_at(hi.exp2()));
    let (log_q, bits) = if (b_lo as f64 - target_bits).abs() < (b_hi as f64 - target_bits).abs() {
        (lo, b_lo)
    } else {
        (hi, b_hi)
    };
    let q = log_q.exp2();
    let frames = frames
        .iter()
        .zip(&coeffs)
        .map(|(f, c)| HdrFrame::new(f.geometry, c.each_ref().map(|pc| pc.reconstruct(q, max_code))))
        .collect::<Result<Vec<_>>>()?;
    Ok(CodedFrames { frames, bits, q })
}
