//! Non-constant-luminance BT.2020 Y'CbCr <-> R'G'B' conversion.

use super::{ChromaSiting, ColorPrimaries, FrameGeometry, HdrFrame, PixelLayout, Plane};
use crate::error::{Error, Result};

/// Luma coefficients of a non-constant-luminance Y'CbCr matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bt2020Matrix {
    pub kr: f64,
    pub kb: f64,
}

impl Default for Bt2020Matrix {
    fn default() -> Self {
        Bt2020Matrix {
            kr: 0.2627,
            kb: 0.0593,
        }
    }
}

impl Bt2020Matrix {
    pub fn kg(&self) -> f64 {
        1.0 - self.kr - self.kb
    }

    /// Y' in [0,1], Cb/Cr in [-0.5, 0.5] to R'G'B'.
    #[inline]
    pub fn to_rgb(&self, y: f64, cb: f64, cr: f64) -> [f64; 3] {
        let (kr, kb, kg) = (self.kr, self.kb, self.kg());
        let r = y + 2.0 * (1.0 - kr) * cr;
        let b = y + 2.0 * (1.0 - kb) * cb;
        let g = y - (2.0 * kb * (1.0 - kb) / kg) * cb - (2.0 * kr * (1.0 - kr) / kg) * cr;
        [r, g, b]
    }

    #[inline]
    pub fn to_ycbcr(&self, r: f64, g: f64, b: f64) -> [f64; 3] {
        let y = self.kr * r + self.kg() * g + self.kb * b;
        let cb = (b - y) / (2.0 * (1.0 - self.kb));
        let cr = (r - y) / (2.0 * (1.0 - self.kr));
        [y, cb, cr]
    }
}

/// Maps normalized stored values to (Y' in [0,1], chroma centred on zero).
struct RangeCodec {
    max: f64,
    scale: f64,
    half: f64,
    full: bool,
}

impl RangeCodec {
    fn new(g: &FrameGeometry) -> Self {
        RangeCodec {
            max: g.max_code(),
            scale: (1u32 << (g.bit_depth - 8)) as f64,
            half: (1u32 << (g.bit_depth - 1)) as f64,
            full: g.full_range,
        }
    }

    #[inline]
    fn expand_luma(&self, v: f32) -> f64 {
        let code = v as f64 * self.max;
        if self.full {
            code / self.max
        } else {
            (code - 16.0 * self.scale) / (219.0 * self.scale)
        }
    }

    #[inline]
    fn expand_chroma(&self, v: f32) -> f64 {
        let code = v as f64 * self.max;
        if self.full {
            (code - self.half) / self.max
        } else {
            (code - 128.0 * self.scale) / (224.0 * self.scale)
        }
    }

    #[inline]
    fn compress_luma(&self, y: f64) -> f32 {
        let code = if self.full {
            y * self.max
        } else {
            y * 219.0 * self.scale + 16.0 * self.scale
        };
        (code / self.max).clamp(0.0, 1.0) as f32
    }

    #[inline]
    fn compress_chroma(&self, c: f64) -> f32 {
        let code = if self.full {
            c * self.max + self.half
        } else {
            c * 224.0 * self.scale + 128.0 * self.scale
        };
        (code / self.max).clamp(0.0, 1.0) as f32
    }
}

/// Bilinear 2x upsampling with chroma samples co-sited on even luma positions.
fn upsample_cosited(p: &Plane, width: usize, height: usize) -> Plane {
    let sample = |i: usize, n: usize| -> (usize, usize, f32) {
        let i0 = (i / 2).min(n - 1);
        if i % 2 == 0 {
            (i0, i0, 0.0)
        } else {
            (i0, (i0 + 1).min(n - 1), 0.5)
        }
    };
    let mut out = Plane::new(width, height);
    for y in 0..height {
        let (y0, y1, fy) = sample(y, p.height);
        for x in 0..width {
            let (x0, x1, fx) = sample(x, p.width);
            let top = p.get(x0, y0) * (1.0 - fx) + p.get(x1, y0) * fx;
            let bottom = p.get(x0, y1) * (1.0 - fx) + p.get(x1, y1) * fx;
            out.set(x, y, top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// 2x decimation with a [1 2 1] kernel centred on even (co-sited) positions.
fn downsample_cosited(p: &Plane) -> Plane {
    let (w, h) = (p.width / 2, p.height / 2);
    let tap = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut out = Plane::new(w, h);
    const K: [f32; 3] = [0.25, 0.5, 0.25];
    for cy in 0..h {
        for cx in 0..w {
            let mut acc = 0.0;
            for (dy, ky) in K.iter().enumerate() {
                let sy = tap(2 * cy as isize + dy as isize - 1, p.height);
                for (dx, kx) in K.iter().enumerate() {
                    let sx = tap(2 * cx as isize + dx as isize - 1, p.width);
                    acc += ky * kx * p.get(sx, sy);
                }
            }
            out.set(cx, cy, acc);
        }
    }
    out
}

/// Converts a BT.2020 Y'CbCr frame to full-range 4:4:4 R'G'B', clipped to
/// `[0, 1]`. Transfer and primaries are carried over unchanged.
pub fn ycbcr_to_rgb(frame: &HdrFrame) -> Result<HdrFrame> {
    let g = frame.geometry;
    if g.pixel_layout != PixelLayout::YCbCr {
        return Err(Error::Layout {
            expected: "YCbCr",
            found: g.pixel_layout.to_string(),
        });
    }
    if g.color_primaries != ColorPrimaries::Rec2020 {
        return Err(Error::Layout {
            expected: "Rec2020 primaries",
            found: format!("{:?}", g.color_primaries),
        });
    }
    let (w, h) = (g.width, g.height);
    let [luma, cb, cr] = &frame.planes;
    let (cb, cr) = match g.chroma {
        ChromaSiting::Cs444 => (cb.clone(), cr.clone()),
        ChromaSiting::Cs420 => (upsample_cosited(cb, w, h), upsample_cosited(cr, w, h)),
    };
    let codec = RangeCodec::new(&g);
    let m = Bt2020Matrix::default();
    let mut planes = [Plane::new(w, h), Plane::new(w, h), Plane::new(w, h)];
    for i in 0..w * h {
        let rgb = m.to_rgb(
            codec.expand_luma(luma.data[i]),
            codec.expand_chroma(cb.data[i]),
            codec.expand_chroma(cr.data[i]),
        );
        for c in 0..3 {
            planes[c].data[i] = rgb[c].clamp(0.0, 1.0) as f32;
        }
    }
    Ok(HdrFrame {
        geometry: FrameGeometry {
            pixel_layout: PixelLayout::Rgb,
            chroma: ChromaSiting::Cs444,
            full_range: true,
            ..g
        },
        planes,
    })
}

/// Converts full-range R'G'B' to BT.2020 Y'CbCr with the requested siting
/// and code range.
pub fn rgb_to_ycbcr(frame: &HdrFrame, chroma: ChromaSiting, full_range: bool) -> Result<HdrFrame> {
    let g = frame.geometry;
    if g.pixel_layout != PixelLayout::Rgb {
        return Err(Error::Layout {
            expected: "RGB",
            found: g.pixel_layout.to_string(),
        });
    }
    if g.color_primaries != ColorPrimaries::Rec2020 {
        return Err(Error::Layout {
            expected: "Rec2020 primaries",
            found: format!("{:?}", g.color_primaries),
        });
    }
    let out_geometry = FrameGeometry {
        pixel_layout: PixelLayout::YCbCr,
        chroma,
        full_range,
        ..g
    };
    out_geometry.validate()?;
    let codec = RangeCodec::new(&out_geometry);
    let m = Bt2020Matrix::default();
    let (w, h) = (g.width, g.height);
    let mut planes = [Plane::new(w, h), Plane::new(w, h), Plane::new(w, h)];
    let [r, gp, b] = &frame.planes;
    for i in 0..w * h {
        let [y, cb, cr] = m.to_ycbcr(r.data[i] as f64, gp.data[i] as f64, b.data[i] as f64);
        planes[0].data[i] = codec.compress_luma(y);
        planes[1].data[i] = codec.compress_chroma(cb);
        planes[2].data[i] = codec.compress_chroma(cr);
    }
    if chroma == ChromaSiting::Cs420 {
        let [y, cb, cr] = planes;
        planes = [y, downsample_cosited(&cb), downsample_cosited(&cr)];
    }
    Ok(HdrFrame {
        geometry: out_geometry,
        planes,
    })
}
