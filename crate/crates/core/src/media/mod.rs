//! HDR frame representation, raw planar I/O, color conversion, transfer
//! functions and resampling.
//!
//! Frames are stored as three planes of normalized code values in `[0, 1]`
//! (`code / (2^bit_depth - 1)`). Transfer math runs in `f64`; planes are `f32`.

mod color;
mod raw;
mod resize;
pub mod transfer;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use color::{rgb_to_ycbcr, ycbcr_to_rgb, Bt2020Matrix};
pub use raw::{load_frames, write_frames, RawVideo};
pub use resize::{rescale, resize_plane, Filter};
pub use transfer::{hlg_to_pq, DEFAULT_PEAK_NITS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorPrimaries {
    Rec2020,
    Rec709,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transfer {
    Pq,
    Hlg,
    Gamma709,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PixelLayout {
    YCbCr,
    Rgb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChromaSiting {
    #[serde(rename = "444")]
    Cs444,
    #[serde(rename = "420")]
    Cs420,
}

impl fmt::Display for PixelLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PixelLayout::YCbCr => f.write_str("YCbCr"),
            PixelLayout::Rgb => f.write_str("RGB"),
        }
    }
}

impl fmt::Display for Transfer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transfer::Pq => f.write_str("PQ"),
            Transfer::Hlg => f.write_str("HLG"),
            Transfer::Gamma709 => f.write_str("BT.709 gamma"),
        }
    }
}

fn default_chroma() -> ChromaSiting {
    ChromaSiting::Cs420
}

/// Everything needed to interpret a headerless raw planar video.
///
/// Serialized as the TOML sidecar that accompanies raw `.yuv` files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameGeometry {
    pub width: usize,
    pub height: usize,
    pub bit_depth: u32,
    pub pixel_layout: PixelLayout,
    pub transfer: Transfer,
    pub color_primaries: ColorPrimaries,
    #[serde(default = "default_chroma")]
    pub chroma: ChromaSiting,
    /// Code values span the full `0..2^n` range instead of video range.
    #[serde(default)]
    pub full_range: bool,
}

impl FrameGeometry {
    /// 10-bit limited-range 4:2:0 PQ BT.2020, the HDR10 delivery format.
    pub fn hdr10(width: usize, height: usize) -> Self {
        FrameGeometry {
            width,
            height,
            bit_depth: 10,
            pixel_layout: PixelLayout::YCbCr,
            transfer: Transfer::Pq,
            color_primaries: ColorPrimaries::Rec2020,
            chroma: ChromaSiting::Cs420,
            full_range: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Geometry(format!(
                "dimensions must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        if !matches!(self.bit_depth, 8 | 10 | 12) {
            return Err(Error::Geometry(format!(
                "bit depth must be 8, 10 or 12, got {}",
                self.bit_depth
            )));
        }
        if self.chroma == ChromaSiting::Cs420 {
            if self.pixel_layout == PixelLayout::Rgb {
                return Err(Error::Geometry("RGB frames cannot be 4:2:0 subsampled".into()));
            }
            if self.width % 2 != 0 || self.height % 2 != 0 {
                return Err(Error::Geometry(format!(
                    "4:2:0 requires even dimensions, got {}x{}",
                    self.width, self.height
                )));
            }
        }
        Ok(())
    }

    /// Plane dimensions in storage order.
    pub fn plane_dims(&self) -> [(usize, usize); 3] {
        let luma = (self.width, self.height);
        let chroma = match self.chroma {
            ChromaSiting::Cs444 => luma,
            ChromaSiting::Cs420 => (self.width / 2, self.height / 2),
        };
        [luma, chroma, chroma]
    }

    pub fn samples_per_frame(&self) -> usize {
        self.plane_dims().iter().map(|(w, h)| w * h).sum()
    }

    pub fn bytes_per_sample(&self) -> usize {
        if self.bit_depth > 8 {
            2
        } else {
            1
        }
    }

    pub fn frame_bytes(&self) -> usize {
        self.samples_per_frame() * self.bytes_per_sample()
    }

    pub fn max_code(&self) -> f64 {
        ((1u32 << self.bit_depth) - 1) as f64
    }

    pub fn read_sidecar(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let geometry: FrameGeometry = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        geometry.validate()?;
        Ok(geometry)
    }

    pub fn write_sidecar(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Conventional sidecar location: `clip.yuv` -> `clip.yuv.geom.toml`.
    pub fn sidecar_path(video: &Path) -> std::path::PathBuf {
        let mut name = video.as_os_str().to_owned();
        name.push(".geom.toml");
        name.into()
    }
}

/// A single-channel image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(width: usize, height: usize) -> Self {
        Plane {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Plane {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }
}

/// A decoded video frame with its color metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct HdrFrame {
    pub geometry: FrameGeometry,
    pub planes: [Plane; 3],
}

impl HdrFrame {
    /// Builds a frame, checking plane shapes against the geometry and that
    /// every sample lies in `[0, 1]`.
    pub fn new(geometry: FrameGeometry, planes: [Plane; 3]) -> Result<Self> {
        geometry.validate()?;
        for (plane, (w, h)) in planes.iter().zip(geometry.plane_dims()) {
            if plane.width != w || plane.height != h || plane.data.len() != w * h {
                return Err(Error::Geometry(format!(
                    "plane is {}x{} ({} samples), geometry expects {w}x{h}",
                    plane.width,
                    plane.height,
                    plane.data.len()
                )));
            }
            if let Some(v) = plane.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Geometry(format!("sample {v} outside [0, 1]")));
            }
        }
        Ok(HdrFrame { geometry, planes })
    }

    /// Uniform frame; handy for tests and padding.
    pub fn constant(geometry: FrameGeometry, values: [f32; 3]) -> Result<Self> {
        let dims = geometry.plane_dims();
        let planes = [0, 1, 2].map(|i| Plane::filled(dims[i].0, dims[i].1, values[i]));
        HdrFrame::new(geometry, planes)
    }

    pub fn width(&self) -> usize {
        self.geometry.width
    }

    pub fn height(&self) -> usize {
        self.geometry.height
    }

    /// Interleaves an RGB frame into a `3 x H x W` channel-major buffer.
    pub fn to_chw(&self) -> Result<Vec<f32>> {
        if self.geometry.pixel_layout != PixelLayout::Rgb {
            return Err(Error::Layout {
                expected: "RGB",
                found: self.geometry.pixel_layout.to_string(),
            });
        }
        let mut out = Vec::with_capacity(3 * self.width() * self.height());
        for p in &self.planes {
            out.extend_from_slice(&p.data);
        }
        Ok(out)
    }

    /// Brings a frame to the encoder's input space: R'G'B' 4:4:4 with PQ
    /// coding. Y'CbCr is converted first, then HLG is re-encoded to PQ.
    pub fn to_pq_rgb(&self) -> Result<HdrFrame> {
        let rgb = match self.geometry.pixel_layout {
            PixelLayout::YCbCr => ycbcr_to_rgb(self)?,
            PixelLayout::Rgb if self.geometry.chroma == ChromaSiting::Cs444 => self.clone(),
            PixelLayout::Rgb => {
                return Err(Error::Layout {
                    expected: "4:4:4 RGB",
                    found: "4:2:0 RGB".into(),
                })
            }
        };
        match rgb.geometry.transfer {
            Transfer::Pq => Ok(rgb),
            Transfer::Hlg => hlg_to_pq(&rgb, DEFAULT_PEAK_NITS),
            Transfer::Gamma709 => Err(Error::InvalidArgument(
                "SDR gamma frames are not accepted by the HDR encoder".into(),
            )),
        }
    }

    /// Mirrors every plane left to right.
    pub fn flip_horizontal(&self) -> HdrFrame {
        let planes = self.planes.clone().map(|mut p| {
            for row in p.data.chunks_mut(p.width) {
                row.reverse();
            }
            p
        });
        HdrFrame {
            geometry: self.geometry,
            planes,
        }
    }

    /// Extracts a rectangular window of a 4:4:4 frame.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<HdrFrame> {
        if self.geometry.chroma != ChromaSiting::Cs444 {
            return Err(Error::Layout {
                expected: "4:4:4 frame",
                found: "4:2:0".into(),
            });
        }
        if width == 0 || height == 0 || x0 + width > self.width() || y0 + height > self.height() {
            return Err(Error::InvalidArgument(format!(
                "crop {width}x{height}+{x0}+{y0} does not fit a {}x{} frame",
                self.width(),
                self.height()
            )));
        }
        let planes = self.planes.clone().map(|p| {
            let mut out = Vec::with_capacity(width * height);
            for y in y0..y0 + height {
                out.extend_from_slice(&p.data[y * p.width + x0..y * p.width + x0 + width]);
            }
            Plane {
                width,
                height,
                data: out,
            }
        });
        Ok(HdrFrame {
            geometry: FrameGeometry {
                width,
                height,
                ..self.geometry
            },
            planes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hdr10_geometry_arithmetic() {
        let g = FrameGeometry::hdr10(4, 4);
        assert_eq!(g.plane_dims(), [(4, 4), (2, 2), (2, 2)]);
        assert_eq!(g.samples_per_frame(), 24);
        assert_eq!(g.frame_bytes(), 48);
        assert_eq!(g.max_code(), 1023.0);
    }

    #[test]
    fn rejects_bad_geometry() {
        let mut g = FrameGeometry::hdr10(3, 4);
        assert!(g.validate().is_err());
        g.width = 4;
        g.bit_depth = 9;
        assert!(g.validate().is_err());
        g.bit_depth = 12;
        g.width = 0;
        assert!(g.validate().is_err());
    }

    #[test]
    fn rejects_out_of_range_samples() {
        let g = FrameGeometry::hdr10(2, 2);
        let planes = [
            Plane::filled(2, 2, 1.5),
            Plane::filled(1, 1, 0.5),
            Plane::filled(1, 1, 0.5),
        ];
        assert!(HdrFrame::new(g, planes).is_err());
    }

    #[test]
    fn sidecar_round_trip_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.geom.toml");
        let g = FrameGeometry::hdr10(8, 6);
        g.write_sidecar(&path).unwrap();
        assert_eq!(FrameGeometry::read_sidecar(&path).unwrap(), g);

        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("fps = 25\n");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(FrameGeometry::read_sidecar(&path), Err(Error::Config(_))));
    }

    #[test]
    fn flip_twice_is_identity() {
        let g = FrameGeometry {
            chroma: ChromaSiting::Cs444,
            pixel_layout: PixelLayout::Rgb,
            ..FrameGeometry::hdr10(3, 2)
        };
        let p = Plane {
            width: 3,
            height: 2,
            data: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
        };
        let f = HdrFrame::new(g, [p.clone(), p.clone(), p]).unwrap();
        let flipped = f.flip_horizontal();
        assert_eq!(flipped.planes[0].data, vec![0.2, 0.1, 0.0, 0.5, 0.4, 0.3]);
        assert_eq!(flipped.flip_horizontal(), f);
    }

    #[test]
    fn encoder_input_conversion() {
        let yuv = HdrFrame::constant(FrameGeometry::hdr10(4, 2), [0.5, 0.5, 0.5]).unwrap();
        let rgb = yuv.to_pq_rgb().unwrap();
        assert_eq!(rgb.geometry.pixel_layout, PixelLayout::Rgb);
        assert_eq!(rgb.geometry.chroma, ChromaSiting::Cs444);
        assert_eq!(rgb.geometry.transfer, Transfer::Pq);
        assert_eq!(rgb.to_pq_rgb().unwrap(), rgb);

        let hlg = FrameGeometry {
            transfer: Transfer::Hlg,
            ..rgb.geometry
        };
        let black = HdrFrame::constant(hlg, [0.0; 3]).unwrap().to_pq_rgb().unwrap();
        assert_eq!(black.geometry.transfer, Transfer::Pq);
        assert!(black.planes.iter().all(|p| p.data.iter().all(|&v| v == 0.0)));

        let sdr = FrameGeometry {
            transfer: Transfer::Gamma709,
            ..rgb.geometry
        };
        assert!(HdrFrame::constant(sdr, [0.5; 3]).unwrap().to_pq_rgb().is_err());
    }
}
