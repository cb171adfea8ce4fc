use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pyramid and angle-codec configuration shared by every scale-pooling
/// layer of a network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleSpec {
    pub n_scales: usize,
    /// Size ratio between neighbouring pyramid levels.
    pub factor: f64,
    /// Levels larger than the input.
    pub n_up: usize,
    /// Levels smaller than the input.
    pub n_down: usize,
    /// Angle in degrees between the smallest and the largest level.
    pub angle_range: f64,
}

impl Default for ScaleSpec {
    fn default() -> Self {
        ScaleSpec {
            n_scales: 8,
            factor: 1.25,
            n_up: 3,
            n_down: 4,
            angle_range: 120.0,
        }
    }
}

impl ScaleSpec {
    pub fn new(n_up: usize, n_down: usize, factor: f64, angle_range: f64) -> Result<Self> {
        let spec = ScaleSpec {
            n_scales: n_up + n_down + 1,
            factor,
            n_up,
            n_down,
            angle_range,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_up + self.n_down + 1 != self.n_scales {
            return Err(Error::config(format!(
                "n_up ({}) + n_down ({}) + 1 must equal n_scales ({})",
                self.n_up, self.n_down, self.n_scales
            )));
        }
        if self.n_scales < 2 {
            return Err(Error::config("a scale pyramid needs at least two levels"));
        }
        if self.n_scales > u8::MAX as usize {
            return Err(Error::config(format!("too many scales: {}", self.n_scales)));
        }
        if !(self.factor.is_finite() && self.factor > 1.0) {
            return Err(Error::config(format!(
                "scale factor must be > 1, got {}",
                self.factor
            )));
        }
        // Beyond 180° the extreme scales stop being the most dissimilar pair.
        if !(self.angle_range > 0.0 && self.angle_range <= 180.0) {
            return Err(Error::config(format!(
                "angle range must lie in (0°, 180°], got {}°",
                self.angle_range
            )));
        }
        Ok(())
    }

    /// Angle step between neighbouring levels, in degrees.
    pub fn angle_step(&self) -> f64 {
        self.angle_range / (self.n_scales - 1) as f64
    }

    /// Codec angle of scale index `i` in degrees; index 0 is the smallest
    /// pyramid level.
    pub fn angle_of_index(&self, i: usize) -> Result<f64> {
        if i >= self.n_scales {
            return Err(Error::config(format!(
                "scale index {i} out of range for {} scales",
                self.n_scales
            )));
        }
        Ok(i as f64 * self.angle_step())
    }

    /// Pyramid exponent of index `i`: `i − n_down`.
    pub fn exponent(&self, i: usize) -> i32 {
        i as i32 - self.n_down as i32
    }

    pub fn identity_index(&self) -> usize {
        self.n_down
    }

    /// Extent of one axis at pyramid exponent `k`: `round(n·factor^k)`,
    /// rounding half away from zero, at least 1.
    pub fn level_extent(&self, n: usize, k: i32) -> usize {
        ((n as f64 * self.factor.powi(k)).round() as usize).max(1)
    }

    /// `(h, w)` of every level, smallest first.
    pub fn level_sizes(&self, h: usize, w: usize) -> Vec<(usize, usize)> {
        (0..self.n_scales)
            .map(|i| {
                let k = self.exponent(i);
                (self.level_extent(h, k), self.level_extent(w, k))
            })
            .collect()
    }
}
