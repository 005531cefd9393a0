//! Image corruptions for domain-shift evaluation. Images are rows of a
//! `N x (height * width)` matrix with values in `[0, 1]`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use qbnn::Tensor;

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentKind {
    /// Multiply by the strength, then clamp to `[0, 1]`.
    Brightness,
    /// Rotate by the strength in degrees about the image centre.
    Rotation,
    /// Shift right by `round(strength * width)` pixels.
    Hshift,
}

impl fmt::Display for AugmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AugmentKind::Brightness => "brightness",
            AugmentKind::Rotation => "rotation",
            AugmentKind::Hshift => "hshift",
        })
    }
}

impl FromStr for AugmentKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "brightness" => Ok(AugmentKind::Brightness),
            "rotation" => Ok(AugmentKind::Rotation),
            "hshift" => Ok(AugmentKind::Hshift),
            other => Err(HarnessError::Config(format!(
                "unknown augmentation `{other}` (expected brightness, rotation or hshift)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Augmentation {
    pub kind: AugmentKind,
    pub strength: f64,
}

impl Augmentation {
    pub fn label(&self) -> String {
        format!("{}-{}", self.kind, self.strength)
    }
}

pub fn augment(images: &Tensor<f32>, height: usize, width: usize, kind: AugmentKind, strength: f64) -> Result<Tensor<f32>> {
    if images.shape().len() != 2 || images.cols() != height * width {
        return Err(HarnessError::Format(format!(
            "images {:?} are not {height}x{width}",
            images.shape()
        )));
    }
    if !strength.is_finite() {
        return Err(HarnessError::Config(format!("augmentation strength {strength} is not finite")));
    }
    let mut out = images.clone();
    match kind {
        AugmentKind::Brightness => {
            if strength < 0.0 {
                return Err(HarnessError::Config("brightness factor must be non-negative".into()));
            }
            let s = strength as f32;
            out.data_mut().iter_mut().for_each(|p| *p = (*p * s).clamp(0.0, 1.0));
        }
        AugmentKind::Hshift => {
            if !(0.0..=1.0).contains(&strength) {
                return Err(HarnessError::Config("horizontal shift must be a fraction in [0, 1]".into()));
            }
            let shift = (strength * width as f64).round() as usize;
            for (src, dst) in images.data().chunks(height * width).zip(out.data_mut().chunks_mut(height * width)) {
                for r in 0..height {
                    for c in 0..width {
                        dst[r * width + c] = if c >= shift { src[r * width + c - shift] } else { 0.0 };
                    }
                }
            }
        }
        AugmentKind::Rotation => {
            let (sin, cos) = strength.to_radians().sin_cos();
            let (cy, cx) = ((height as f64 - 1.0) / 2.0, (width as f64 - 1.0) / 2.0);
            // Inverse map each destination pixel to its nearest source pixel.
            let mut source = Vec::with_capacity(height * width);
            for r in 0..height {
                for c in 0..width {
                    let (dy, dx) = (r as f64 - cy, c as f64 - cx);
                    let sx = (cos * dx + sin * dy + cx).round();
                    let sy = (-sin * dx + cos * dy + cy).round();
                    let inside = sx >= 0.0 && sy >= 0.0 && (sx as usize) < width && (sy as usize) < height;
                    source.push(inside.then(|| sy as usize * width + sx as usize));
                }
            }
            for (src, dst) in images.data().chunks(height * width).zip(out.data_mut().chunks_mut(height * width)) {
                for (d, s) in dst.iter_mut().zip(&source) {
                    *d = s.map_or(0.0, |i| src[i]);
                }
            }
        }
    }
    Ok(out)
}
