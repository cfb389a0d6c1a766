//! Headerless planar video: `Y` plane, then `Cb`, then `Cr` (or `R`, `G`,
//! `B`), frames back to back. Samples above 8 bits are stored little-endian
//! in 16-bit containers.

use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use super::{FrameGeometry, HdrFrame, Plane};
use crate::error::{Error, Result};

/// An open raw video file with a known geometry.
#[derive(Debug)]
pub struct RawVideo {
    path: PathBuf,
    file: File,
    geometry: FrameGeometry,
    frame_count: usize,
}

impl RawVideo {
    pub fn open(path: impl AsRef<Path>, geometry: FrameGeometry) -> Result<Self> {
        let path = path.as_ref();
        geometry.validate()?;
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let len = file.metadata().map_err(|e| Error::io(path, e))?.len() as usize;
        let stride = geometry.frame_bytes();
        if len % stride != 0 {
            return Err(Error::Geometry(format!(
                "{}: {len} bytes is not a multiple of the {stride}-byte frame size of {}x{} {}-bit",
                path.display(),
                geometry.width,
                geometry.height,
                geometry.bit_depth
            )));
        }
        Ok(RawVideo {
            path: path.to_owned(),
            file,
            geometry,
            frame_count: len / stride,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    pub fn geometry(&self) -> &FrameGeometry {
        &self.geometry
    }

    pub fn read_frame(&mut self, index: usize) -> Result<HdrFrame> {
        if index >= self.frame_count {
            return Err(Error::IndexOutOfRange {
                index,
                count: self.frame_count,
            });
        }
        let g = self.geometry;
        let stride = g.frame_bytes();
        let mut buf = vec![0u8; stride];
        self.file
            .seek(SeekFrom::Start((index * stride) as u64))
            .and_then(|_| self.file.read_exact(&mut buf))
            .map_err(|e| Error::io(&self.path, e))?;

        let max = g.max_code();
        let max_code = max as u32;
        let bps = g.bytes_per_sample();
        let mut offset = 0;
        let mut planes = Vec::with_capacity(3);
        for (w, h) in g.plane_dims() {
            let mut data = Vec::with_capacity(w * h);
            for s in buf[offset..offset + w * h * bps].chunks_exact(bps) {
                let code = if bps == 2 {
                    u16::from_le_bytes([s[0], s[1]]) as u32
                } else {
                    s[0] as u32
                };
                if code > max_code {
                    return Err(Error::Corrupted {
                        path: self.path.clone(),
                        reason: format!(
                            "sample {code} exceeds {}-bit range in frame {index}",
                            g.bit_depth
                        ),
                    });
                }
                data.push((code as f64 / max) as f32);
            }
            offset += w * h * bps;
            planes.push(Plane {
                width: w,
                height: h,
                data,
            });
        }
        let planes: [Plane; 3] = planes.try_into().expect("three planes");
        Ok(HdrFrame {
            geometry: g,
            planes,
        })
    }
}

/// Reads the requested frames of a raw video.
pub fn load_frames(
    path: impl AsRef<Path>,
    geometry: FrameGeometry,
    frame_indices: &[usize],
) -> Result<Vec<HdrFrame>> {
    let mut video = RawVideo::open(path, geometry)?;
    frame_indices.iter().map(|&i| video.read_frame(i)).collect()
}

/// Quantizes frames to code values and writes them as raw planar video.
pub fn write_frames(path: impl AsRef<Path>, frames: &[HdrFrame]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let Some(first) = frames.first() else {
        return out.flush().map_err(|e| Error::io(path, e));
    };
    let g = first.geometry;
    let max = g.max_code();
    let mut buf = Vec::with_capacity(g.frame_bytes());
    for frame in frames {
        if frame.geometry != g {
            return Err(Error::Geometry(
                "all frames written to one raw file must share a geometry".into(),
            ));
        }
        buf.clear();
        for plane in &frame.planes {
            for &v in &plane.data {
                let code = (v as f64 * max).round().clamp(0.0, max) as u16;
                if g.bytes_per_sample() == 2 {
                    buf.extend_from_slice(&code.to_le_bytes());
                } else {
                    buf.push(code as u8);
                }
            }
        }
        out.write_all(&buf).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
