//! Separable resampling. Downscaling widens the kernel by the scale factor
//! so it also acts as the anti-aliasing prefilter.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{ChromaSiting, HdrFrame, Plane};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Filter {
    #[default]
    Lanczos3,
    Bilinear,
    Box,
}

impl Filter {
    pub fn radius(self) -> f64 {
        match self {
            Filter::Lanczos3 => 3.0,
            Filter::Bilinear => 1.0,
            Filter::Box => 0.5,
        }
    }

    pub fn weight(self, x: f64) -> f64 {
        let ax = x.abs();
        match self {
            Filter::Lanczos3 => {
                if ax < 1e-12 {
                    1.0
                } else if ax < 3.0 {
                    let px = PI * x;
                    3.0 * px.sin() * (px / 3.0).sin() / (px * px)
                } else {
                    0.0
                }
            }
            Filter::Bilinear => (1.0 - ax).max(0.0),
            Filter::Box => {
                if ax <= 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Per-output-sample tap lists for one axis.
struct Taps {
    starts: Vec<usize>,
    weights: Vec<Vec<f64>>,
}

fn taps(src: usize, dst: usize, filter: Filter) -> Taps {
    let ratio = src as f64 / dst as f64;
    let stretch = ratio.max(1.0);
    let support = filter.radius() * stretch;
    let mut starts = Vec::with_capacity(dst);
    let mut weights = Vec::with_capacity(dst);
    for o in 0..dst {
        let centre = (o as f64 + 0.5) * ratio - 0.5;
        let lo = (centre - support).floor() as isize;
        let hi = (centre + support).ceil() as isize;
        // Taps outside the image are folded onto the edge sample.
        let first = lo.max(0) as usize;
        let last = (hi.min(src as isize - 1)) as usize;
        let mut w = vec![0.0; last - first + 1];
        for k in lo..=hi {
            let wk = filter.weight((k as f64 - centre) / stretch);
            if wk != 0.0 {
                let idx = k.clamp(0, src as isize - 1) as usize;
                w[idx - first] += wk;
            }
        }
        let sum: f64 = w.iter().sum();
        if sum.abs() > 1e-12 {
            w.iter_mut().for_each(|v| *v /= sum);
        } else {
            // Box filter on exact half-sample boundaries can miss every tap.
            let nearest = centre.round().clamp(0.0, (src - 1) as f64) as usize;
            w.iter_mut().for_each(|v| *v = 0.0);
            w[nearest - first] = 1.0;
        }
        starts.push(first);
        weights.push(w);
    }
    Taps { starts, weights }
}

/// Resamples one plane to `width x height`, clipping to `[0, 1]`.
pub fn resize_plane(p: &Plane, width: usize, height: usize, filter: Filter) -> Plane {
    if p.width == width && p.height == height {
        return p.clone();
    }
    let hx = taps(p.width, width, filter);
    let vy = taps(p.height, height, filter);

    let mut tmp = vec![0.0f32; width * p.height];
    for y in 0..p.height {
        let row = &p.data[y * p.width..(y + 1) * p.width];
        let out = &mut tmp[y * width..(y + 1) * width];
        for (x, o) in out.iter_mut().enumerate() {
            let s = hx.starts[x];
            *o = hx.weights[x]
                .iter()
                .zip(&row[s..])
                .map(|(w, v)| w * *v as f64)
                .sum::<f64>() as f32;
        }
    }

    let mut out = Plane::new(width, height);
    let mut acc = vec![0.0f64; width];
    for y in 0..height {
        acc.iter_mut().for_each(|a| *a = 0.0);
        let s = vy.starts[y];
        for (k, w) in vy.weights[y].iter().enumerate() {
            let row = &tmp[(s + k) * width..(s + k + 1) * width];
            for (a, v) in acc.iter_mut().zip(row) {
                *a += w * *v as f64;
            }
        }
        for (o, a) in out.data[y * width..(y + 1) * width].iter_mut().zip(&acc) {
            *o = a.clamp(0.0, 1.0) as f32;
        }
    }
    out
}

/// Resamples every plane of a frame to the target luma size.
pub fn rescale(frame: &HdrFrame, width: usize, height: usize, filter: Filter) -> Result<HdrFrame> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!(
            "target size {width}x{height} must be positive"
        )));
    }
    let mut geometry = frame.geometry;
    geometry.width = width;
    geometry.height = height;
    geometry.validate()?;
    if frame.width() == width && frame.height() == height {
        return Ok(frame.clone());
    }
    let dims = geometry.plane_dims();
    let planes = [0, 1, 2].map(|i| resize_plane(&frame.planes[i], dims[i].0, dims[i].1, filter));
    debug_assert!(geometry.chroma == ChromaSiting::Cs444 || planes[1].width == width / 2);
    Ok(HdrFrame { geometry, planes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::{FrameGeometry, PixelLayout};

    fn rgb(w: usize, h: usize) -> FrameGeometry {
        FrameGeometry {
            pixel_layout: PixelLayout::Rgb,
            chroma: ChromaSiting::Cs444,
            ..FrameGeometry::hdr10(w, h)
        }
    }

    /// Direct 2-D weighted sum over every source pixel, with the same
    /// kernel definition but no separable decomposition or tap tables.
    fn oracle(p: &Plane, w: usize, h: usize, filter: Filter) -> Vec<f64> {
        let rx = p.width as f64 / w as f64;
        let ry = p.height as f64 / h as f64;
        let (sx, sy) = (rx.max(1.0), ry.max(1.0));
        let mut out = vec![0.0; w * h];
        for oy in 0..h {
            for ox in 0..w {
                let cx = (ox as f64 + 0.5) * rx - 0.5;
                let cy = (oy as f64 + 0.5) * ry - 0.5;
                let (mut num, mut den) = (0.0, 0.0);
                // Extended range covers edge-clamped taps.
                for ky in -8isize..(p.height as isize + 8) {
                    for kx in -8isize..(p.width as isize + 8) {
                        let wt = filter.weight((kx as f64 - cx) / sx) * filter.weight((ky as f64 - cy) / sy);
                        if wt == 0.0 {
                            continue;
                        }
                        let x = kx.clamp(0, p.width as isize - 1) as usize;
                        let y = ky.clamp(0, p.height as isize - 1) as usize;
                        num += wt * p.get(x, y) as f64;
                        den += wt;
                    }
                }
                out[oy * w + ox] = (num / den).clamp(0.0, 1.0);
            }
        }
        out
    }

    fn ramp(w: usize, h: usize) -> Plane {
        Plane {
            width: w,
            height: h,
            data: (0..w * h).map(|i| i as f32 / (w * h - 1) as f32).collect(),
        }
    }

    #[test]
    fn identity_resize_is_bit_identical() {
        let f = HdrFrame::new(rgb(4, 4), [ramp(4, 4), ramp(4, 4), ramp(4, 4)]).unwrap();
        assert_eq!(rescale(&f, 4, 4, Filter::Lanczos3).unwrap(), f);
    }

    #[test]
    fn constant_frame_stays_constant() {
        let f = HdrFrame::constant(rgb(6, 5), [0.3, 0.6, 0.9]).unwrap();
        for (w, h) in [(12, 10), (3, 2), (7, 9), (1, 1)] {
            for filter in [Filter::Lanczos3, Filter::Bilinear, Filter::Box] {
                let r = rescale(&f, w, h, filter).unwrap();
                assert_eq!((r.width(), r.height()), (w, h));
                for (c, want) in [0.3f32, 0.6, 0.9].iter().enumerate() {
                    assert!(r.planes[c].data.iter().all(|v| (v - want).abs() < 1e-6));
                }
            }
        }
    }

    #[test]
    fn ramp_downscale_matches_direct_convolution() {
        let p = ramp(4, 4);
        for filter in [Filter::Lanczos3, Filter::Bilinear, Filter::Box] {
            let got = resize_plane(&p, 2, 2, filter);
            let want = oracle(&p, 2, 2, filter);
            for (g, w) in got.data.iter().zip(&want) {
                assert!((*g as f64 - w).abs() < 1e-5, "{filter:?}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn upscale_matches_direct_convolution() {
        let p = ramp(3, 4);
        let got = resize_plane(&p, 8, 7, Filter::Lanczos3);
        let want = oracle(&p, 8, 7, Filter::Lanczos3);
        for (g, w) in got.data.iter().zip(&want) {
            assert!((*g as f64 - w).abs() < 1e-5);
        }
    }

    #[test]
    fn chroma_planes_follow_subsampling() {
        let g = FrameGeometry::hdr10(8, 4);
        let f = HdrFrame::constant(g, [0.2, 0.5, 0.5]).unwrap();
        let r = rescale(&f, 16, 8, Filter::Bilinear).unwrap();
        assert_eq!(r.planes[1].width, 8);
        assert_eq!(r.planes[2].height, 4);
        assert_eq!(r.geometry.transfer, g.transfer);
        assert!(rescale(&f, 7, 8, Filter::Bilinear).is_err());
        assert!(rescale(&f, 0, 8, Filter::Bilinear).is_err());
    }
}
