//! Point clouds, oriented ground-truth boxes, and scene construction.

mod io;
mod synth;

pub use io::{load_labels, load_point_bin, save_labels, save_point_bin};
pub use synth::{
    generate_scene, nominal_dims, ClassCounts, ClassPointRanges, PointRange, SynthConfig,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned bounds in meters, half-open per axis: a coordinate `v` is
/// inside when `min <= v < max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Bounds {
    pub fn contains(&self, x: f64, y: f64, z: f64) -> bool {
        let p = [x, y, z];
        (0..3).all(|a| self.min[a] <= p[a] && p[a] < self.max[a])
    }

    pub fn size(&self) -> [f64; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }
}

/// Object classes of the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClassId {
    Car,
    Pedestrian,
    Cyclist,
}

impl ClassId {
    pub const ALL: [ClassId; 3] = [ClassId::Car, ClassId::Pedestrian, ClassId::Cyclist];

    pub fn name(self) -> &'static str {
        match self {
            ClassId::Car => "Car",
            ClassId::Pedestrian => "Pedestrian",
            ClassId::Cyclist => "Cyclist",
        }
    }

    pub fn from_name(s: &str) -> Option<ClassId> {
        match s {
            "Car" => Some(ClassId::Car),
            "Pedestrian" => Some(ClassId::Pedestrian),
            "Cyclist" => Some(ClassId::Cyclist),
            _ => None,
        }
    }

    /// Stable per-class index into fixed-size arrays.
    pub fn index(self) -> usize {
        match self {
            ClassId::Car => 0,
            ClassId::Pedestrian => 1,
            ClassId::Cyclist => 2,
        }
    }
}

impl std::fmt::Display for ClassId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A single LiDAR return: position in meters plus a unit-range intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

impl Point {
    /// All coordinates must be finite and intensity must lie in `[0, 1]`.
    pub fn new(x: f64, y: f64, z: f64, intensity: f64) -> Result<Point> {
        if !(x.is_finite() && y.is_finite() && z.is_finite() && intensity.is_finite()) {
            return Err(Error::Invariant("point with non-finite component".into()));
        }
        if !(0.0..=1.0).contains(&intensity) {
            return Err(Error::Invariant(format!(
                "point intensity {intensity} outside [0, 1]"
            )));
        }
        Ok(Point { x, y, z, intensity })
    }
}

/// Normalizes an angle to `[-pi, pi)`.
pub fn normalize_yaw(yaw: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut y = yaw.rem_euclid(two_pi);
    if y >= std::f64::consts::PI {
        y -= two_pi;
    }
    y
}

/// An oriented 3D box: center, dimensions, and rotation about the vertical
/// axis. `length` runs along the heading, `width` across it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub yaw: f64,
    pub class_id: ClassId,
}

impl Box3D {
    /// Builds a box, normalizing yaw to `[-pi, pi)` and rejecting
    /// non-positive dimensions.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        cx: f64,
        cy: f64,
        cz: f64,
        length: f64,
        width: f64,
        height: f64,
        yaw: f64,
        class_id: ClassId,
    ) -> Result<Box3D> {
        for (v, name) in [(cx, "cx"), (cy, "cy"), (cz, "cz"), (yaw, "yaw")] {
            if !v.is_finite() {
                return Err(Error::Invariant(format!("box field {name} not finite")));
            }
        }
        for (v, name) in [(length, "length"), (width, "width"), (height, "height")] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Invariant(format!(
                    "box {name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(Box3D {
            cx,
            cy,
            cz,
            length,
            width,
            height,
            yaw: normalize_yaw(yaw),
            class_id,
        })
    }

    /// Strict-interior containment test. A point exactly on a face is outside.
    pub fn contains(&self, p: &Point) -> bool {
        let (dx, dy, dz) = (p.x - self.cx, p.y - self.cy, p.z - self.cz);
        let (s, c) = self.yaw.sin_cos();
        // Rotate into the box frame (inverse rotation).
        let lx = c * dx + s * dy;
        let ly = -s * dx + c * dy;
        lx.abs() < self.length / 2.0 && ly.abs() < self.width / 2.0 && dz.abs() < self.height / 2.0
    }

    /// BEV footprint corners in counterclockwise order.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hl, hw) = (self.length / 2.0, self.width / 2.0);
        let rot = |lx: f64, ly: f64| [self.cx + c * lx - s * ly, self.cy + s * lx + c * ly];
        [rot(hl, hw), rot(-hl, hw), rot(-hl, -hw), rot(hl, -hw)]
    }

    pub fn volume(&self) -> f64 {
        self.length * self.width * self.height
    }

    pub fn z_interval(&self) -> (f64, f64) {
        (self.cz - self.height / 2.0, self.cz + self.height / 2.0)
    }
}

/// A point cloud plus its ground-truth boxes. Point order is stable: indices
/// are identities used by the voxelizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub scene_id: String,
    pub points: Vec<Point>,
    pub gt_boxes: Vec<Box3D>,
}

impl Scene {
    pub fn new(scene_id: impl Into<String>, points: Vec<Point>, gt_boxes: Vec<Box3D>) -> Scene {
        Scene {
            scene_id: scene_id.into(),
            points,
            gt_boxes,
        }
    }
}

/// Indices of scene points strictly inside the yaw-rotated box.
pub fn points_in_box(scene: &Scene, bbox: &Box3D) -> Vec<usize> {
    scene
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| bbox.contains(p))
        .map(|(i, _)| i)
        .collect()
}
