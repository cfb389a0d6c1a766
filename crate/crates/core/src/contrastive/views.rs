//! Two-view construction for the per-frame contrastive objective: a random
//! crop at native resolution and its half-scale counterpart, with
//! horizontal flips as the only photometric-free augmentation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::media::{rescale, Filter, HdrFrame};
use crate::nn::Tensor;

/// Which views may be mirrored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlipPolicy {
    /// A fair coin per view.
    #[default]
    Independent,
    /// Anchor untouched, a fair coin for the positive.
    PositiveOnly,
    Never,
}

/// Anchor at native scale and positive at half scale, both `3 x H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair {
    pub anchor: Tensor,
    pub positive: Tensor,
    pub crop_origin: (usize, usize),
    pub flips: (bool, bool),
}

/// Crops `crop x crop` at a uniform position of a PQ R'G'B' frame and
/// derives the half-scale positive from the same crop.
pub fn build_views<R: Rng>(frame: &HdrFrame, crop: usize, flip: FlipPolicy, rng: &mut R) -> Result<ViewPair> {
    if crop < 2 || frame.width() < crop || frame.height() < crop {
        return Err(Error::InvalidArgument(format!(
            "{}x{} frame cannot supply a {crop}x{crop} crop",
            frame.width(),
            frame.height()
        )));
    }
    let x0 = rng.random_range(0..=frame.width() - crop);
    let y0 = rng.random_range(0..=frame.height() - crop);
    let (flip_a, flip_p) = match flip {
        FlipPolicy::Independent => (rng.random_bool(0.5), rng.random_bool(0.5)),
        FlipPolicy::PositiveOnly => (false, rng.random_bool(0.5)),
        FlipPolicy::Never => (false, false),
    };
    let native = frame.crop(x0, y0, crop, crop)?;
    let half = rescale(&native, crop / 2, crop / 2, Filter::Lanczos3)?;
    let orient = |f: HdrFrame, flip: bool| -> Result<Tensor> {
        let f = if flip { f.flip_horizontal() } else { f };
        Ok(Tensor::from_vec(3, f.height(), f.width(), f.to_chw()?))
    };
    Ok(ViewPair {
        anchor: orient(native, flip_a)?,
        positive: orient(half, flip_p)?,
        crop_origin: (x0, y0),
        flips: (flip_a, flip_p),
    })
}

/// Non-overlapping `patch x patch` tiles in row-major order.
pub fn patchify(view: &Tensor, patch: usize) -> Result<Vec<Tensor>> {
    let (c, h, w) = view.shape();
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::InvalidArgument(format!("{h}x{w} view does not tile into {patch}x{patch} patches")));
    }
    let mut out = Vec::with_capacity((h / patch) * (w / patch));
    for py in 0..h / patch {
        for px in 0..w / patch {
            let mut data = Vec::with_capacity(c * patch * patch);
            for ch in 0..c {
                for y in py * patch..(py + 1) * patch {
                    let start = (ch * h + y) * w + px * patch;
                    data.extend_from_slice(&view.data[start..start + patch]);
                }
            }
            out.push(Tensor::from_vec(c, patch, patch, data));
        }
    }
    Ok(out)
}

/// Inverse of [`patchify`] for an `h x w` view.
pub fn unpatchify(patches: &[Tensor], h: usize, w: usize) -> Result<Tensor> {
    let first = patches
        .first()
        .ok_or_else(|| Error::InvalidArgument("no patches to reassemble".into()))?;
    let (c, patch, _) = first.shape();
    if patch == 0 || h % patch != 0 || w % patch != 0 || patches.len() != (h / patch) * (w / patch) {
        return Err(Error::InvalidArgument(format!(
            "{} patches of {patch} pixels do not form a {h}x{w} view",
            patches.len()
        )));
    }
    let mut out = Tensor::zeros(c, h, w);
    let cols = w / patch;
    for (i, p) in patches.iter().enumerate() {
        if p.shape() != (c, patch, patch) {
            return Err(Error::InvalidArgument("patches differ in shape".into()));
        }
        let (py, px) = (i / cols, i % cols);
        for ch in 0..c {
            for y in 0..patch {
                let dst = (ch * h + py * patch + y) * w + px * patch;
                out.data[dst..dst + patch].copy_from_slice(&p.data[(ch * patch + y) * patch..][..patch]);
            }
        }
    }
    Ok(out)
}
