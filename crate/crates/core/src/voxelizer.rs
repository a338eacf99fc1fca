//! Sparse voxelization of scenes with capped per-cell point sampling.
//!
//! Cell assignment follows the floor convention: a point lands in cell
//! `floor((p - origin) / cell)` per axis, so a point exactly on an upper cell
//! boundary belongs to the higher cell. Points outside the grid extent are
//! dropped. Cells holding more than `max_points` points keep a uniform
//! without-replacement sample whose seed derives from the voxelization seed
//! and the cell index, making per-cell subsets independent of cell order.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{Bounds, ClassId, Scene};
use crate::seed::{derive_cell_seed, rng_from};

/// Regular-grid geometry: origin, cell dimensions, and the covered extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub origin: [f64; 3],
    pub cell: [f64; 3],
    pub extent: Bounds,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        for (axis, c) in self.cell.iter().enumerate() {
            if !(c.is_finite() && *c > 0.0) {
                return Err(Error::Config(format!(
                    "cell dimension on axis {axis} must be positive, got {c}"
                )));
            }
        }
        for axis in 0..3 {
            if !(self.extent.min[axis] < self.extent.max[axis]) {
                return Err(Error::Config(format!("extent degenerate on axis {axis}")));
            }
            if !(self.extent.min[axis] <= self.origin[axis]
                && self.origin[axis] < self.extent.max[axis])
            {
                return Err(Error::Config(format!(
                    "extent must contain the origin on axis {axis}"
                )));
            }
        }
        Ok(())
    }

    /// Cell index of a point under the floor convention.
    pub fn cell_index(&self, x: f64, y: f64, z: f64) -> VoxelIndex {
        let p = [x, y, z];
        let mut idx = [0i32; 3];
        for a in 0..3 {
            idx[a] = ((p[a] - self.origin[a]) / self.cell[a]).floor() as i32;
        }
        VoxelIndex(idx)
    }

    /// Center of a cell in world coordinates.
    pub fn cell_center(&self, idx: VoxelIndex) -> [f64; 3] {
        let mut c = [0.0f64; 3];
        for a in 0..3 {
            c[a] = self.origin[a] + (idx.0[a] as f64 + 0.5) * self.cell[a];
        }
        c
    }
}

/// Integer cell index triple. Ordering is lexicographic on (i, j, k) and
/// defines the canonical voxel order everywhere in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VoxelIndex(pub [i32; 3]);

impl std::fmt::Display for VoxelIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{})", self.0[0], self.0[1], self.0[2])
    }
}

/// One occupied cell: its index and the (sampled) point indices it holds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Voxel {
    pub index: VoxelIndex,
    /// Indices into the source scene, ascending, at most `max_points` long.
    pub point_indices: Vec<u32>,
}

impl Voxel {
    /// Number of points after sampling; the per-voxel normalizer of the
    /// gradient-magnitude average.
    pub fn n_points(&self) -> usize {
        self.point_indices.len()
    }
}

/// All occupied voxels of one scene in canonical (lexicographic) order.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelSet {
    pub spec: GridSpec,
    pub voxels: Vec<Voxel>,
    pub scene_id: String,
}

impl VoxelSet {
    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn indices(&self) -> impl Iterator<Item = VoxelIndex> + '_ {
        self.voxels.iter().map(|v| v.index)
    }

    /// Row position of a voxel index in canonical order.
    pub fn row_of(&self, index: VoxelIndex) -> Option<usize> {
        self.voxels
            .binary_search_by(|v| v.index.cmp(&index))
            .ok()
    }
}

/// Class label of a voxel; `None` marks background.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VoxelLabel {
    pub index: VoxelIndex,
    pub label: Option<ClassId>,
}

impl VoxelLabel {
    pub fn name(&self) -> &'static str {
        self.label.map_or("Background", ClassId::name)
    }
}

/// Converts a scene into its occupied sparse voxels.
pub fn voxelize(scene: &Scene, spec: &GridSpec, max_points: usize, seed: u64) -> Result<VoxelSet> {
    spec.validate()?;
    if max_points == 0 {
        return Err(Error::Config("max_points must be positive".into()));
    }
    let mut cells: BTreeMap<VoxelIndex, Vec<u32>> = BTreeMap::new();
    for (i, p) in scene.points.iter().enumerate() {
        if !spec.extent.contains(p.x, p.y, p.z) {
            continue;
        }
        cells
            .entry(spec.cell_index(p.x, p.y, p.z))
            .or_default()
            .push(i as u32);
    }
    let mut voxels = Vec::with_capacity(cells.len());
    for (index, mut members) in cells {
        if members.len() > max_points {
            let mut rng = rng_from(derive_cell_seed(seed, index.0));
            let picks = rand::seq::index::sample(&mut rng, members.len(), max_points);
            let mut kept: Vec<u32> = picks.iter().map(|i| members[i]).collect();
            kept.sort_unstable();
            members = kept;
        }
        voxels.push(Voxel {
            index,
            point_indices: members,
        });
    }
    Ok(VoxelSet {
        spec: *spec,
        voxels,
        scene_id: scene.scene_id.clone(),
    })
}

/// Labels each voxel with the class of the first ground-truth box (in gt
/// order) that strictly contains any of its points, or background.
pub fn label_voxels(voxel_set: &VoxelSet, scene: &Scene) -> Vec<VoxelLabel> {
    voxel_set
        .voxels
        .iter()
        .map(|v| {
            let label = scene.gt_boxes.iter().find_map(|b| {
                v.point_indices
                    .iter()
                    .any(|&pi| b.contains(&scene.points[pi as usize]))
                    .then_some(b.class_id)
            });
            VoxelLabel {
                index: v.index,
                label,
            }
        })
        .collect()
}

/// Sub-voxel-set of exactly the kept indices, canonical order preserved.
///
/// Every index in `keep` must be present in `voxel_set`.
pub fn restrict(voxel_set: &VoxelSet, keep: &BTreeSet<VoxelIndex>) -> Result<VoxelSet> {
    for idx in keep {
        if voxel_set.row_of(*idx).is_none() {
            return Err(Error::Contract(format!(
                "restrict: voxel {idx} not present in the set"
            )));
        }
    }
    Ok(VoxelSet {
        spec: voxel_set.spec,
        voxels: voxel_set
            .voxels
            .iter()
            .filter(|v| keep.contains(&v.index))
            .cloned()
            .collect(),
        scene_id: voxel_set.scene_id.clone(),
    })
}

/// Occupancy export: `i,j,k,n_points` rows in canonical order.
pub fn voxel_set_csv(voxel_set: &VoxelSet) -> String {
    let mut out = String::from("i,j,k,n_points\n");
    for v in &voxel_set.voxels {
        out.push_str(&format!(
            "{},{},{},{}\n",
            v.index.0[0],
            v.index.0[1],
            v.index.0[2],
            v.n_points()
        ));
    }
    out
}

/// Membership sidecar export: `voxel_row,point_index` rows.
pub fn memberships_csv(voxel_set: &VoxelSet) -> String {
    let mut out = String::from("voxel_row,point_index\n");
    for (row, v) in voxel_set.voxels.iter().enumerate() {
        for pi in &v.point_indices {
            out.push_str(&format!("{row},{pi}\n"));
        }
    }
    out
}
