use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mid-rise uniform quantizer over `[−clip, clip]` with `2^bits` levels.
///
/// Level `j` reconstructs to `−clip + (j + ½)·step`, `step = 2·clip / 2^bits`.
/// Inputs outside the range saturate at the outermost level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformQuantizer {
    pub bits: u32,
    pub clip: f64,
}

impl UniformQuantizer {
    pub fn new(bits: u32, clip: f64) -> Result<Self> {
        if !(1..=24).contains(&bits) {
            return Err(Error::InvalidArgument(format!("quantizer bits {bits} outside 1..=24")));
        }
        if !(clip > 0.0 && clip.is_finite()) {
            return Err(Error::InvalidArgument(format!("clip scale {clip} must be positive")));
        }
        Ok(Self { bits, clip })
    }

    pub fn levels(&self) -> u64 {
        1u64 << self.bits
    }

    pub fn step(&self) -> f64 {
        2.0 * self.clip / self.levels() as f64
    }

    pub fn index(&self, x: f64) -> u64 {
        let top = self.levels() - 1;
        if x.is_nan() {
            return top / 2;
        }
        let j = ((x + self.clip) / self.step()).floor();
        if j <= 0.0 {
            0
        } else if j >= top as f64 {
            top
        } else {
            j as u64
        }
    }

    pub fn value(&self, j: u64) -> f64 {
        -self.clip + (j as f64 + 0.5) * self.step()
    }

    pub fn quantize(&self, x: f64) -> f64 {
        self.value(self.index(x))
    }
}

/// Clip scale of three times the RMS of `values` (0 for an empty input).
pub fn calibrate_clip(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    if n == 0 {
        0.0
    } else {
        3.0 * (sum / n as f64).sqrt()
    }
}
