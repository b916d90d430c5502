use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::LoadParams;

/// Van der Corput radical inverse of `index` in `base`, formed as an exact
/// fraction so that every point with fewer than 53 bits of denominator is
/// correctly rounded.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let b = base as u128;
    let (mut num, mut den) = (0u128, 1u128);
    while index > 0 {
        num = num * b + (index % base) as u128;
        den *= b;
        index /= base;
    }
    num as f64 / den as f64
}

/// Point `index` (1-based) of the 2D Halton sequence in bases 2 and 3.
pub fn halton_point(index: u64) -> [f64; 2] {
    assert!(index >= 1, "Halton indices start at 1");
    [radical_inverse(index, 2), radical_inverse(index, 3)]
}

/// Axis-aligned parameter box in N/m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub px: [f64; 2],
    pub py: [f64; 2],
}

impl Default for ParamBox {
    fn default() -> Self {
        ParamBox {
            px: [-3000.0, 3000.0],
            py: [-3000.0, 3000.0],
        }
    }
}

impl ParamBox {
    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [("px", self.px), ("py", self.py)] {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(Error::config(
                    format!("sampling.domain.{name}"),
                    format!("expected finite min <= max, got [{lo}, {hi}]"),
                ));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &LoadParams) -> bool {
        (self.px[0]..=self.px[1]).contains(&p.px) && (self.py[0]..=self.py[1]).contains(&p.py)
    }

    fn map(&self, unit: [f64; 2]) -> LoadParams {
        LoadParams::new(
            self.px[0] + (self.px[1] - self.px[0]) * unit[0],
            self.py[0] + (self.py[1] - self.py[0]) * unit[1],
        )
    }
}

/// `count` Halton points starting at sequence index `start_index`, mapped onto `domain`.
pub fn sample_parameters(count: usize, domain: &ParamBox, start_index: u64) -> Vec<LoadParams> {
    (0..count as u64)
        .map(|k| domain.map(halton_point(start_index + k)))
        .collect()
}
