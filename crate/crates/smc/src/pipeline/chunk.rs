//! Decode-side windowing: overlapping window placement and linear
//! crossfade stitching.
//!
//! Windows advance by window·(1 − overlap). Inside an overlap region of
//! length L, sample j takes gains (1 − j/L, j/L) for the outgoing and
//! incoming window. Because the incoming gain g is in [0, 1], the float
//! sum g + fl(1 − g) always rounds to exactly 1.0, so stitched gains sum
//! to one at every sample with no tolerance needed.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkPlan {
    pub window_samples: usize,
    pub stride_samples: usize,
    pub overlap_samples: usize,
    /// Sample offset of each decode window.
    pub starts: Vec<usize>,
    /// Samples covered before trimming: last start + window.
    pub covered_samples: usize,
    /// Target output length after trimming.
    pub needed_samples: usize,
}

impl ChunkPlan {
    pub fn plan(
        needed_samples: usize,
        window_samples: usize,
        overlap_fraction: f64,
    ) -> Result<ChunkPlan> {
        if needed_samples == 0 {
            return Err(Error::Config("cannot plan decode of zero samples".into()));
        }
        if window_samples == 0 {
            return Err(Error::Config("decode window must be positive".into()));
        }
        if !(0.0..0.5).contains(&overlap_fraction) {
            return Err(Error::Config(format!(
                "overlap fraction {overlap_fraction} outside [0, 0.5)"
            )));
        }
        let overlap_samples = (window_samples as f64 * overlap_fraction).round() as usize;
        let stride_samples = window_samples - overlap_samples;
        let count = if needed_samples <= window_samples {
            1
        } else {
            1 + (needed_samples - window_samples).div_ceil(stride_samples)
        };
        let starts: Vec<usize> = (0..count).map(|w| w * stride_samples).collect();
        let covered_samples = starts.last().unwrap() + window_samples;
        Ok(ChunkPlan {
            window_samples,
            stride_samples,
            overlap_samples,
            starts,
            covered_samples,
            needed_samples,
        })
    }

    /// Per-sample gain ramp for window `w`: a rising ramp over the leading
    /// overlap (absent on the first window), unity in the middle, a falling
    /// ramp over the trailing overlap (absent on the last).
    pub fn gains(&self, w: usize) -> Vec<f64> {
        let n = self.window_samples;
        let ol = self.overlap_samples;
        let mut g = vec![1.0; n];
        if ol > 0 {
            if w > 0 {
                for (j, gj) in g.iter_mut().take(ol).enumerate() {
                    *gj = j as f64 / ol as f64;
                }
            }
            if w + 1 < self.starts.len() {
                for j in 0..ol {
                    g[n - ol + j] = 1.0 - (j as f64 / ol as f64);
                }
            }
        }
        g
    }

    /// Overlap-add the decoded windows and trim to the target length.
    pub fn stitch(&self, windows: &[Vec<f64>]) -> Result<Vec<f64>> {
        if windows.len() != self.starts.len() {
            return Err(Error::Shape(format!(
                "stitch got {} windows, plan has {}",
                windows.len(),
                self.starts.len()
            )));
        }
        let mut out = vec![0.0; self.covered_samples];
        for (w, (data, &start)) in windows.iter().zip(&self.starts).enumerate() {
            if data.len() != self.window_samples {
                return Err(Error::Shape(format!(
                    "window {w} has {} samples, expected {}",
                    data.len(),
                    self.window_samples
                )));
            }
            let gains = self.gains(w);
            for j in 0..self.window_samples {
                out[start + j] += gains[j] * data[j];
            }
        }
        out.truncate(self.needed_samples);
        Ok(out)
    }
}
