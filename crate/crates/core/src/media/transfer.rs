//! SMPTE ST 2084 (PQ) and ARIB STD-B67 / BT.2100 (HLG) transfer functions.
//!
//! Inputs outside a function's domain are errors; nothing is clipped inside
//! the curves themselves.

use super::{FrameGeometry, HdrFrame, PixelLayout, Plane, Transfer};
use crate::error::{Error, Result};

/// Absolute peak of the PQ signal, cd/m^2.
pub const PQ_PEAK_NITS: f64 = 10_000.0;

/// Display peak used when rendering HLG into PQ.
pub const DEFAULT_PEAK_NITS: f64 = 1000.0;

const M1: f64 = 2610.0 / 16384.0;
const M2: f64 = 2523.0 / 4096.0 * 128.0;
const C1: f64 = 3424.0 / 4096.0;
const C2: f64 = 2413.0 / 4096.0 * 32.0;
const C3: f64 = 2392.0 / 4096.0 * 32.0;

const HLG_A: f64 = 0.178_832_77;
const HLG_B: f64 = 1.0 - 4.0 * HLG_A;
// c = 0.5 - a ln(4a)
const HLG_C: f64 = 0.559_910_729_529_562_3;

/// Nominal HLG system gamma at a 1000 cd/m^2 display.
pub const HLG_SYSTEM_GAMMA: f64 = 1.2;

fn check(function: &'static str, value: f64, lo: f64, hi: f64, domain: &'static str) -> Result<()> {
    if value.is_nan() || value < lo || value > hi {
        return Err(Error::Domain {
            function,
            value,
            domain,
        });
    }
    Ok(())
}

/// PQ code value in `[0, 1]` to display luminance in cd/m^2.
pub fn pq_eotf(code: f64) -> Result<f64> {
    check("pq_eotf", code, 0.0, 1.0, "[0, 1]")?;
    let e = code.powf(1.0 / M2);
    let num = (e - C1).max(0.0);
    let den = C2 - C3 * e;
    Ok(PQ_PEAK_NITS * (num / den).powf(1.0 / M1))
}

/// Display luminance in cd/m^2 to PQ code value.
///
/// The closed form does not vanish exactly at zero: `pq_oetf(0) = c1^m2`,
/// about `7.3e-7`.
pub fn pq_oetf(nits: f64) -> Result<f64> {
    check("pq_oetf", nits, 0.0, PQ_PEAK_NITS, "[0, 10000] cd/m^2")?;
    let y = (nits / PQ_PEAK_NITS).powf(M1);
    Ok(((C1 + C2 * y) / (1.0 + C3 * y)).powf(M2))
}

/// HLG OETF: relative scene light in `[0, 1]` to signal in `[0, 1]`.
pub fn hlg_oetf(scene: f64) -> Result<f64> {
    check("hlg_oetf", scene, 0.0, 1.0, "[0, 1]")?;
    Ok(if scene <= 1.0 / 12.0 {
        (3.0 * scene).sqrt()
    } else {
        HLG_A * (12.0 * scene - HLG_B).ln() + HLG_C
    })
}

/// Inverse HLG OETF: signal in `[0, 1]` to relative scene light in `[0, 1]`.
pub fn hlg_inverse_oetf(signal: f64) -> Result<f64> {
    check("hlg_inverse_oetf", signal, 0.0, 1.0, "[0, 1]")?;
    Ok(if signal <= 0.5 {
        signal * signal / 3.0
    } else {
        (((signal - HLG_C) / HLG_A).exp() + HLG_B) / 12.0
    })
}

/// HLG OOTF: scene-linear BT.2020 RGB to display light in cd/m^2.
pub fn hlg_ootf(rgb: [f64; 3], peak_nits: f64, gamma: f64) -> [f64; 3] {
    let ys = 0.2627 * rgb[0] + 0.6780 * rgb[1] + 0.0593 * rgb[2];
    let gain = if ys > 0.0 {
        peak_nits * ys.powf(gamma - 1.0)
    } else {
        0.0
    };
    rgb.map(|c| gain * c)
}

/// Renders an HLG R'G'B' frame on a display of `peak_nits` and re-encodes
/// the result with the PQ curve.
pub fn hlg_to_pq(frame: &HdrFrame, peak_nits: f64) -> Result<HdrFrame> {
    let g = frame.geometry;
    if g.transfer != Transfer::Hlg {
        return Err(Error::Layout {
            expected: "HLG transfer",
            found: g.transfer.to_string(),
        });
    }
    if g.pixel_layout != PixelLayout::Rgb {
        return Err(Error::Layout {
            expected: "RGB",
            found: g.pixel_layout.to_string(),
        });
    }
    if !(peak_nits > 0.0 && peak_nits <= PQ_PEAK_NITS) {
        return Err(Error::InvalidArgument(format!(
            "display peak {peak_nits} cd/m^2 outside (0, 10000]"
        )));
    }
    let n = g.width * g.height;
    let mut planes = [0, 1, 2].map(|_| Plane::new(g.width, g.height));
    for i in 0..n {
        let mut scene = [0.0; 3];
        for c in 0..3 {
            scene[c] = hlg_inverse_oetf(frame.planes[c].data[i] as f64)?;
        }
        let display = hlg_ootf(scene, peak_nits, HLG_SYSTEM_GAMMA);
        for c in 0..3 {
            let code = if display[c] == 0.0 {
                0.0
            } else {
                pq_oetf(display[c].min(PQ_PEAK_NITS))?
            };
            planes[c].data[i] = code.clamp(0.0, 1.0) as f32;
        }
    }
    Ok(HdrFrame {
        geometry: FrameGeometry {
            transfer: Transfer::Pq,
            ..g
        },
        planes,
    })
}
