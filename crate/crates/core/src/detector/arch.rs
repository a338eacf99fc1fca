//! Architecture description and the flat parameter vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{nominal_dims, ClassId};
use crate::seed::rng_from;

/// Point feature channels: relative x, y, z plus intensity.
pub const POINT_CHANNELS: usize = 4;
/// Class logits: the three object classes plus background (last).
pub const N_LOGITS: usize = 4;
/// Raw box outputs: center and dim deltas plus the yaw sin/cos pair.
pub const BOX_OUTPUTS: usize = 8;

/// Layer widths and target-encoding constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub point_hidden: usize,
    pub feature_dim: usize,
    pub head_hidden: usize,
    /// Per-class mean (length, width, height) subtracted from dim targets,
    /// indexed by [`ClassId::index`].
    pub mean_dims: [[f64; 3]; 3],
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            point_hidden: 16,
            feature_dim: 16,
            head_hidden: 32,
            mean_dims: [
                nominal_dims(ClassId::Car),
                nominal_dims(ClassId::Pedestrian),
                nominal_dims(ClassId::Cyclist),
            ],
        }
    }
}

/// Offsets of the named parameter blocks inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub point_l1_w: (usize, usize),
    pub point_l1_b: (usize, usize),
    pub point_l2_w: (usize, usize),
    pub point_l2_b: (usize, usize),
    pub head_l1_w: (usize, usize),
    pub head_l1_b: (usize, usize),
    pub head_out_w: (usize, usize),
    pub head_out_b: (usize, usize),
    pub total: usize,
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.point_hidden == 0 || self.feature_dim == 0 || self.head_hidden == 0 {
            return Err(Error::Config("architecture widths must be positive".into()));
        }
        for dims in &self.mean_dims {
            for d in dims {
                if !(d.is_finite() && *d > 0.0) {
                    return Err(Error::Config("mean_dims must be positive".into()));
                }
            }
        }
        Ok(())
    }

    pub fn head_input(&self) -> usize {
        self.feature_dim + 3
    }

    pub fn head_outputs(&self) -> usize {
        N_LOGITS + BOX_OUTPUTS
    }

    pub fn layout(&self) -> Layout {
        let mut at = 0usize;
        let mut block = |len: usize| {
            let r = (at, at + len);
            at += len;
            r
        };
        let point_l1_w = block(self.point_hidden * POINT_CHANNELS);
        let point_l1_b = block(self.point_hidden);
        let point_l2_w = block(self.feature_dim * self.point_hidden);
        let point_l2_b = block(self.feature_dim);
        let head_l1_w = block(self.head_hidden * self.head_input());
        let head_l1_b = block(self.head_hidden);
        let head_out_w = block(self.head_outputs() * self.head_hidden);
        let head_out_b = block(self.head_outputs());
        Layout {
            point_l1_w,
            point_l1_b,
            point_l2_w,
            point_l2_b,
            head_l1_w,
            head_l1_b,
            head_out_w,
            head_out_b,
            total: at,
        }
    }

    pub fn n_params(&self) -> usize {
        self.layout().total
    }
}

/// The detector: an architecture plus its flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorParams {
    pub arch: ArchConfig,
    pub theta: Vec<f64>,
}

impl DetectorParams {
    pub fn zeros(arch: ArchConfig) -> DetectorParams {
        DetectorParams {
            theta: vec![0.0; arch.n_params()],
            arch,
        }
    }

    /// Seeded uniform initialization with per-layer fan-based ranges.
    pub fn init(arch: ArchConfig, seed: u64) -> DetectorParams {
        let layout = arch.layout();
        let mut theta = vec![0.0f64; layout.total];
        let mut rng = rng_from(seed);
        let mut fill = |range: (usize, usize), fan_in: usize, fan_out: usize, theta: &mut [f64]| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut theta[range.0..range.1] {
                *v = rng.random_range(-a..a);
            }
        };
        fill(
            layout.point_l1_w,
            POINT_CHANNELS,
            arch.point_hidden,
            &mut theta,
        );
        fill(
            layout.point_l2_w,
            arch.point_hidden,
            arch.feature_dim,
            &mut theta,
        );
        fill(
            layout.head_l1_w,
            arch.head_input(),
            arch.head_hidden,
            &mut theta,
        );
        fill(
            layout.head_out_w,
            arch.head_hidden,
            arch.head_outputs(),
            &mut theta,
        );
        // Biases start at zero.
        DetectorParams { arch, theta }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.theta.len() != self.arch.n_params() {
            return Err(Error::Invariant(format!(
                "parameter vector length {} does not match architecture ({} expected)",
                self.theta.len(),
                self.arch.n_params()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_partitions_consistently() {
        let arch = ArchConfig::default();
        let l = arch.layout();
        // 16*4+16 + 16*16+16 + 32*19+32 + 12*32+12
        assert_eq!(l.total, 64 + 16 + 256 + 16 + 608 + 32 + 384 + 12);
        assert_eq!(l.total, arch.n_params());
        assert_eq!(l.point_l1_w.0, 0);
        assert_eq!(l.head_out_b.1, l.total);
    }

    #[test]
    fn init_is_deterministic() {
        let arch = ArchConfig::default();
        let a = DetectorParams::init(arch, 5);
        let b = DetectorParams::init(arch, 5);
        assert_eq!(a, b);
        let c = DetectorParams::init(arch, 6);
        assert_ne!(a, c);
    }
}
