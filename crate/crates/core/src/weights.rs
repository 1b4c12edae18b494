//! The fixed-step clamped weight rule shared by seeds and config operators.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightParams {
    pub w_init: f64,
    pub w_step: f64,
    pub w_min: f64,
    pub w_max: f64,
}

impl Default for WeightParams {
    fn default() -> Self {
        Self {
            w_init: 1.0,
            w_step: 0.2,
            w_min: 0.25,
            w_max: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("weight parameters must satisfy 0 < w_min <= w_init <= w_max and w_step > 0 (got {0:?})")]
pub struct InvalidWeightParams(pub WeightParams);

impl WeightParams {
    pub fn validate(&self) -> Result<(), InvalidWeightParams> {
        let ok = self.w_min > 0.0
            && self.w_min <= self.w_init
            && self.w_init <= self.w_max
            && self.w_step > 0.0
            && [self.w_init, self.w_step, self.w_min, self.w_max]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(InvalidWeightParams(*self))
        }
    }

    /// `w + step` capped at `w_max` on gain, `w - step` floored at `w_min`
    /// otherwise.
    pub fn step(&self, w: f64, gained: bool) -> f64 {
        if gained {
            (w + self.w_step).min(self.w_max)
        } else {
            (w - self.w_step).max(self.w_min)
        }
    }
}
