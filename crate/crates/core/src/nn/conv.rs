//! im2col convolution on top of `matrixmultiply::sgemm`.

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize, in_h: usize, in_w: usize) -> Self {
        assert!(
            in_h + 2 * pad >= k && in_w + 2 * pad >= k,
            "{in_h}x{in_w} input is smaller than a {k}x{k} kernel"
        );
        ConvGeom {
            in_c,
            out_c,
            k,
            stride,
            pad,
            in_h,
            in_w,
            out_h: (in_h + 2 * pad - k) / stride + 1,
            out_w: (in_w + 2 * pad - k) / stride + 1,
        }
    }

    pub fn weight_len(&self) -> usize {
        self.out_c * self.in_c * self.k * self.k
    }

    fn patch_len(&self) -> usize {
        self.in_c * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// A 1x1 stride-1 unpadded convolution reads its input directly.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col(g: &ConvGeom, x: &[f32]) -> Vec<f32> {
    let p = g.positions();
    let mut cols = vec![0.0f32; g.patch_len() * p];
    for c in 0..g.in_c {
        let plane = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    let out_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.in_w as isize {
                            *o = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(g: &ConvGeom, cols: &[f32]) -> Vec<f32> {
    let p = g.positions();
    let mut x = vec![0.0f32; g.in_c * g.in_h * g.in_w];
    for c in 0..g.in_c {
        let plane = &mut x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.in_w as isize {
                            dst_row[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

/// `C = alpha * A(m x k) * B(k x n) + beta * C` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (isize, isize),
    b: &[f32],
    (rsb, csb): (isize, isize),
    beta: f32,
    c: &mut [f32],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: every index reachable through the given strides lies inside
    // the slices: A is m x k, B is k x n and C is m x n row-major.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Returns the output and the column matrix needed by the backward pass.
pub(crate) fn forward(g: &ConvGeom, w: &[f32], bias: Option<&[f32]>, x: &[f32]) -> (Vec<f32>, Vec<f32>) {
    let cols = if g.is_pointwise() { x.to_vec() } else { im2col(g, x) };
    let (kk, p) = (g.patch_len(), g.positions());
    let mut y = vec![0.0f32; g.out_c * p];
    if let Some(b) = bias {
        for (o, row) in y.chunks_exact_mut(p).enumerate() {
            row.iter_mut().for_each(|v| *v = b[o]);
        }
    }
    let beta = if bias.is_some() { 1.0 } else { 0.0 };
    gemm(g.out_c, kk, p, w, (kk as isize, 1), &cols, (p as isize, 1), beta, &mut y);
    (y, cols)
}

/// Accumulates the weight gradient into `dw` and returns the input gradient.
pub(crate) fn backward(g: &ConvGeom, w: &[f32], dw: &mut [f32], cols: &[f32], dy: &[f32]) -> Vec<f32> {
    let (kk, p) = (g.patch_len(), g.positions());
    // dW += dY (out_c x P) * cols^T (P x kk)
    gemm(g.out_c, p, kk, dy, (p as isize, 1), cols, (1, p as isize), 1.0, dw);
    // dcols = W^T (kk x out_c) * dY (out_c x P)
    let mut dcols = vec![0.0f32; kk * p];
    gemm(kk, g.out_c, p, w, (1, kk as isize), dy, (p as isize, 1), 0.0, &mut dcols);
    if g.is_pointwise() {
        dcols
    } else {
        col2im(g, &dcols)
    }
}
