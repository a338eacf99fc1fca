//! Snapshot and loss-curve serialization.
//!
//! Snapshot layout, all little-endian:
//! magic `GRVSNAP1`, version u32, point_hidden u32, feature_dim u32,
//! head_hidden u32, mean_dims 9 x f64, stage u8 (0 early / 1 late),
//! epoch u64, n_params u64, then the parameter vector as f64s.

use std::fs;
use std::path::Path;

use crate::detector::arch::{ArchConfig, DetectorParams};
use crate::detector::train::{DetectorSnapshot, LossCurve, Stage};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GRVSNAP1";
const VERSION: u32 = 1;

pub fn save_snapshot(snapshot: &DetectorSnapshot, path: &Path) -> Result<()> {
    let arch = &snapshot.params.arch;
    let mut bytes = Vec::with_capacity(64 + snapshot.params.theta.len() * 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    for v in [arch.point_hidden, arch.feature_dim, arch.head_hidden] {
        bytes.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for dims in &arch.mean_dims {
        for d in dims {
            bytes.extend_from_slice(&d.to_le_bytes());
        }
    }
    bytes.push(match snapshot.stage {
        Stage::Early => 0,
        Stage::Late => 1,
    });
    bytes.extend_from_slice(&(snapshot.epoch as u64).to_le_bytes());
    bytes.extend_from_slice(&(snapshot.params.theta.len() as u64).to_le_bytes());
    for v in &snapshot.params.theta {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_snapshot(path: &Path) -> Result<DetectorSnapshot> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut at = 0usize;
    let take = |at: &mut usize, n: usize| -> Result<&[u8]> {
        if *at + n > bytes.len() {
            return Err(Error::malformed(path, "truncated snapshot"));
        }
        let s = &bytes[*at..*at + n];
        *at += n;
        Ok(s)
    };
    if take(&mut at, 8)? != MAGIC {
        return Err(Error::malformed(path, "bad magic"));
    }
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap());
    let u64_at = |s: &[u8]| u64::from_le_bytes(s.try_into().unwrap());
    let f64_at = |s: &[u8]| f64::from_le_bytes(s.try_into().unwrap());
    let version = u32_at(take(&mut at, 4)?);
    if version != VERSION {
        return Err(Error::malformed(path, format!("unknown version {version}")));
    }
    let point_hidden = u32_at(take(&mut at, 4)?) as usize;
    let feature_dim = u32_at(take(&mut at, 4)?) as usize;
    let head_hidden = u32_at(take(&mut at, 4)?) as usize;
    let mut mean_dims = [[0.0f64; 3]; 3];
    for dims in &mut mean_dims {
        for d in dims.iter_mut() {
            *d = f64_at(take(&mut at, 8)?);
        }
    }
    let stage = match take(&mut at, 1)?[0] {
        0 => Stage::Early,
        1 => Stage::Late,
        other => return Err(Error::malformed(path, format!("unknown stage {other}"))),
    };
    let epoch = u64_at(take(&mut at, 8)?) as usize;
    let n_params = u64_at(take(&mut at, 8)?) as usize;
    let arch = ArchConfig {
        point_hidden,
        feature_dim,
        head_hidden,
        mean_dims,
    };
    if n_params != arch.n_params() {
        return Err(Error::malformed(
            path,
            format!(
                "parameter count {n_params} does not match architecture ({})",
                arch.n_params()
            ),
        ));
    }
    let mut theta = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        theta.push(f64_at(take(&mut at, 8)?));
    }
    if at != bytes.len() {
        return Err(Error::malformed(path, "trailing bytes"));
    }
    Ok(DetectorSnapshot {
        params: DetectorParams { arch, theta },
        stage,
        epoch,
    })
}

/// Loss curve as CSV: `epoch,cls_loss,loc_loss,total`.
pub fn loss_curve_csv(curve: &LossCurve) -> String {
    let mut out = String::from("epoch,cls_loss,loc_loss,total\n");
    for r in &curve.rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.epoch, r.cls_loss, r.loc_loss, r.total
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let params = DetectorParams::init(ArchConfig::default(), 42);
        let snap = DetectorSnapshot {
            params,
            stage: Stage::Late,
            epoch: 30,
        };
        let f = tempfile::NamedTempFile::new().unwrap();
        save_snapshot(&snap, f.path()).unwrap();
        let back = load_snapshot(f.path()).unwrap();
        assert_eq!(back.stage, snap.stage);
        assert_eq!(back.epoch, snap.epoch);
        assert_eq!(back.params.arch, snap.params.arch);
        assert_eq!(back.params.theta.len(), snap.params.theta.len());
        for (a, b) in back.params.theta.iter().zip(&snap.params.theta) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn corrupt_snapshots_are_rejected() {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), b"not a snapshot").unwrap();
        assert!(load_snapshot(f.path()).is_err());
    }
}
