//! Procedural HDR content and an in-memory ladder corpus for desk-scale
//! experiments: every content appears once per distortion class.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;

use super::{default_ladder, distort, LadderRung, SyntheticTranscoder};
use crate::error::Result;
use crate::media::{rgb_to_ycbcr, ChromaSiting, Filter, FrameGeometry, HdrFrame, PixelLayout, Plane};
use crate::seed;

/// A PQ Y'CbCr 4:2:0 frame of edges, gratings and fine texture.
pub fn procedural_frame(content_seed: u64, width: usize, height: usize) -> Result<HdrFrame> {
    let mut rng = seed::stream(content_seed, &[]);
    let (w, h) = (width as f64, height as f64);
    let mut rgb = [vec![0.0f64; width * height], vec![0.0; width * height], vec![0.0; width * height]];

    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.25..0.55));
    let tilt: [f64; 2] = [rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15)];
    for y in 0..height {
        for x in 0..width {
            let g = tilt[0] * (x as f64 / w - 0.5) + tilt[1] * (y as f64 / h - 0.5);
            for c in 0..3 {
                rgb[c][y * width + x] = base[c] + g;
            }
        }
    }

    for _ in 0..rng.random_range(2..6) {
        let (cx, cy) = (rng.random_range(0.0..w), rng.random_range(0.0..h));
        let (rx, ry) = (rng.random_range(0.05..0.35) * w, rng.random_range(0.05..0.35) * h);
        let disc = rng.random_bool(0.5);
        let delta: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.25..0.25));
        for y in 0..height {
            for x in 0..width {
                let (dx, dy) = ((x as f64 - cx) / rx, (y as f64 - cy) / ry);
                let inside = if disc { dx * dx + dy * dy <= 1.0 } else { dx.abs() <= 1.0 && dy.abs() <= 1.0 };
                if inside {
                    for c in 0..3 {
                        rgb[c][y * width + x] += delta[c];
                    }
                }
            }
        }
    }

    for _ in 0..rng.random_range(1..4) {
        let theta = rng.random_range(0.0..PI);
        let freq = rng.random_range(0.04..0.45);
        let amp = rng.random_range(0.02..0.12);
        let phase = rng.random_range(0.0..2.0 * PI);
        let (kx, ky) = (theta.cos() * freq * 2.0 * PI, theta.sin() * freq * 2.0 * PI);
        let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.5..1.0));
        for y in 0..height {
            for x in 0..width {
                let v = amp * (kx * x as f64 + ky * y as f64 + phase).sin();
                for c in 0..3 {
                    rgb[c][y * width + x] += tint[c] * v;
                }
            }
        }
    }

    let grain = rng.random_range(0.0..0.06);
    for i in 0..width * height {
        let n = grain * (rng.random::<f64>() - 0.5);
        for c in rgb.iter_mut() {
            c[i] += n;
        }
    }

    let g = FrameGeometry {
        pixel_layout: PixelLayout::Rgb,
        chroma: ChromaSiting::Cs444,
        full_range: true,
        ..FrameGeometry::hdr10(width, height)
    };
    let planes = rgb.map(|c| Plane {
        width,
        height,
        data: c.into_iter().map(|v| v.clamp(0.02, 0.92) as f32).collect(),
    });
    rgb_to_ycbcr(&HdrFrame::new(g, planes)?, ChromaSiting::Cs420, false)
}

/// Frames in the encoder input space with class and content labels.
#[derive(Debug, Clone)]
pub struct LabeledCorpus {
    pub frames: Vec<HdrFrame>,
    pub classes: Vec<usize>,
    pub contents: Vec<usize>,
    pub n_classes: usize,
}

/// `n_contents` procedural sources, each kept pristine (class 0) and passed
/// through every rung of `ladder` (classes 1 onwards) with the synthetic
/// codec. `fps` sets the bit budget per frame.
pub fn ladder_corpus(
    n_contents: usize,
    canvas: (usize, usize),
    ladder: Option<&[LadderRung]>,
    fps: f64,
    seed: u64,
) -> Result<LabeledCorpus> {
    let default = default_ladder();
    let ladder = ladder.unwrap_or(&default);
    let scratch = std::env::temp_dir();
    let per_content: Vec<Vec<HdrFrame>> = (0..n_contents)
        .into_par_iter()
        .map(|c| -> Result<Vec<HdrFrame>> {
            let pristine = procedural_frame(seed::derive_seed(seed, &[c as u64]), canvas.0, canvas.1)?;
            let mut out = vec![pristine.to_pq_rgb()?];
            for rung in ladder {
                let d = distort(
                    std::slice::from_ref(&pristine),
                    rung,
                    &SyntheticTranscoder,
                    canvas,
                    Filter::Lanczos3,
                    fps,
                    &scratch,
                )?;
                out.push(d.frames[0].to_pq_rgb()?);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let n_classes = ladder.len() + 1;
    let mut corpus = LabeledCorpus {
        frames: Vec::with_capacity(n_contents * n_classes),
        classes: Vec::new(),
        contents: Vec::new(),
        n_classes,
    };
    for (c, frames) in per_content.into_iter().enumerate() {
        for (class, f) in frames.into_iter().enumerate() {
            corpus.frames.push(f);
            corpus.classes.push(class);
            corpus.contents.push(c);
        }
    }
    Ok(corpus)
}
