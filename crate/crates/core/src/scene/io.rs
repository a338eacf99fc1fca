//! On-disk formats: point binaries and label CSVs.
//!
//! Point binary: consecutive 16-byte records of four little-endian IEEE-754
//! 32-bit floats `(x, y, z, intensity)`, record order preserved.
//!
//! Label CSV: one `class,cx,cy,cz,length,width,height,yaw` line per box,
//! UTF-8, `#`-prefixed comment lines and blank lines ignored. Coordinates are
//! in the LiDAR frame; there is no camera calibration.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::{Box3D, ClassId, Point, Scene};

/// Decodes a point binary into a scene with no ground-truth boxes.
///
/// The scene id is the file stem.
pub fn load_point_bin(path: &Path) -> Result<Scene> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 16 != 0 {
        return Err(Error::malformed(
            path,
            format!("byte length {} is not a multiple of 16", bytes.len()),
        ));
    }
    let mut points = Vec::with_capacity(bytes.len() / 16);
    for (rec, chunk) in bytes.chunks_exact(16).enumerate() {
        let f = |i: usize| {
            let mut b = [0u8; 4];
            b.copy_from_slice(&chunk[i * 4..i * 4 + 4]);
            f64::from(f32::from_le_bytes(b))
        };
        let (x, y, z, intensity) = (f(0), f(1), f(2), f(3));
        let p = Point::new(x, y, z, intensity)
            .map_err(|e| Error::malformed(path, format!("record {rec}: {e}")))?;
        points.push(p);
    }
    let scene_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Scene::new(scene_id, points, Vec::new()))
}

/// Encodes scene points in the point-binary format.
pub fn save_point_bin(scene: &Scene, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(scene.points.len() * 16);
    for p in &scene.points {
        for v in [p.x, p.y, p.z, p.intensity] {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parses a label CSV into a list of boxes, enforcing box invariants.
pub fn load_labels(path: &Path) -> Result<Vec<Box3D>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut boxes = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 8 {
            return Err(Error::Parse {
                path: path.into(),
                line: lineno + 1,
                reason: format!("expected 8 comma-separated fields, got {}", fields.len()),
            });
        }
        let class_id = ClassId::from_name(fields[0]).ok_or_else(|| Error::Parse {
            path: path.into(),
            line: lineno + 1,
            reason: format!("unknown class {:?}", fields[0]),
        })?;
        let mut nums = [0.0f64; 7];
        for (i, f) in fields[1..].iter().enumerate() {
            nums[i] = f.parse::<f64>().map_err(|e| Error::Parse {
                path: path.into(),
                line: lineno + 1,
                reason: format!("field {}: {e}", i + 2),
            })?;
        }
        let b = Box3D::new(
            nums[0], nums[1], nums[2], nums[3], nums[4], nums[5], nums[6], class_id,
        )
        .map_err(|e| Error::Parse {
            path: path.into(),
            line: lineno + 1,
            reason: e.to_string(),
        })?;
        boxes.push(b);
    }
    Ok(boxes)
}

/// Writes boxes in the label-CSV format.
pub fn save_labels(boxes: &[Box3D], path: &Path) -> Result<()> {
    let mut out = String::from("# class,cx,cy,cz,length,width,height,yaw\n");
    for b in boxes {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            b.class_id, b.cx, b.cy, b.cz, b.length, b.width, b.height, b.yaw
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn empty_bin_decodes_to_empty_scene() {
        let f = tempfile::NamedTempFile::new().unwrap();
        let scene = load_point_bin(f.path()).unwrap();
        assert!(scene.points.is_empty());
        assert!(scene.gt_boxes.is_empty());
    }

    #[test]
    fn single_record_decodes() {
        // Bytes constructed by an independent encoder: four f32 LE values.
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for v in [1.0f32, 2.0, -0.5, 0.25] {
            f.write_all(&v.to_le_bytes()).unwrap();
        }
        f.flush().unwrap();
        let scene = load_point_bin(f.path()).unwrap();
        assert_eq!(scene.points.len(), 1);
        let p = scene.points[0];
        assert_eq!((p.x, p.y, p.z, p.intensity), (1.0, 2.0, -0.5, 0.25));
    }

    #[test]
    fn ragged_length_is_malformed() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(&[0u8; 17]).unwrap();
        f.flush().unwrap();
        match load_point_bin(f.path()) {
            Err(Error::MalformedFile { .. }) => {}
            other => panic!("expected malformed-file error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_record_is_malformed() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for v in [f32::NAN, 2.0, 3.0, 0.5] {
            f.write_all(&v.to_le_bytes()).unwrap();
        }
        f.flush().unwrap();
        assert!(matches!(
            load_point_bin(f.path()),
            Err(Error::MalformedFile { .. })
        ));
    }

    #[test]
    fn bin_round_trip_is_identity() {
        let scene = Scene::new(
            "rt",
            vec![
                Point::new(1.5, -2.25, 0.125, 0.5).unwrap(),
                Point::new(-10.0, 4.0, 1.0, 1.0).unwrap(),
            ],
            vec![],
        );
        let f = tempfile::NamedTempFile::new().unwrap();
        save_point_bin(&scene, f.path()).unwrap();
        let back = load_point_bin(f.path()).unwrap();
        // All fixture values are exactly representable in f32.
        assert_eq!(back.points, scene.points);
    }

    #[test]
    fn empty_label_file_gives_empty_list() {
        let f = tempfile::NamedTempFile::new().unwrap();
        assert!(load_labels(f.path()).unwrap().is_empty());
    }

    #[test]
    fn label_line_maps_fields_directly() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# comment").unwrap();
        writeln!(f, "Car,10.0,2.0,-0.8,4.0,1.8,1.5,0.3").unwrap();
        f.flush().unwrap();
        let boxes = load_labels(f.path()).unwrap();
        assert_eq!(boxes.len(), 1);
        let b = boxes[0];
        assert_eq!(b.class_id, ClassId::Car);
        assert_eq!(
            (b.cx, b.cy, b.cz, b.length, b.width, b.height, b.yaw),
            (10.0, 2.0, -0.8, 4.0, 1.8, 1.5, 0.3)
        );
    }

    #[test]
    fn label_yaw_is_normalized_on_load() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "Cyclist,0,0,0,1.7,0.6,1.7,4.0").unwrap();
        f.flush().unwrap();
        let boxes = load_labels(f.path()).unwrap();
        // Hand arithmetic: 4.0 - 2*pi.
        assert!((boxes[0].yaw - (4.0 - 2.0 * std::f64::consts::PI)).abs() < 1e-15);
    }

    #[test]
    fn label_errors_carry_line_numbers() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "Car,0,0,0,4,1.8,1.5,0").unwrap();
        writeln!(f, "Car,0,0,0,4,1.8,-1.5,0").unwrap();
        f.flush().unwrap();
        match load_labels(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
