//! Field-of-view computation and the ROI/RONI partition.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::{GridDims, Tissue, VoxelPhantom};

/// Sorted set of voxel indices with O(1) membership.
#[derive(Debug, Clone)]
pub struct VoxelMask {
    dims: GridDims,
    indices: Vec<u32>,
    bits: Vec<bool>,
}

impl VoxelMask {
    pub fn from_indices(dims: GridDims, mut indices: Vec<u32>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        let mut bits = vec![false; dims.len()];
        for &i in &indices {
            bits[i as usize] = true;
        }
        VoxelMask { dims, indices, bits }
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    /// Voxel indices in ascending order; this is the column order of any
    /// Jacobian restricted to the mask.
    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    #[inline]
    pub fn contains(&self, voxel: u32) -> bool {
        self.bits[voxel as usize]
    }

    /// Dense boolean volume.
    pub fn to_bits(&self) -> &[bool] {
        &self.bits
    }

    /// Positions of this mask's voxels inside an enclosing mask's index list.
    pub fn positions_in(&self, enclosing: &VoxelMask) -> Result<Vec<usize>> {
        self.indices
            .iter()
            .map(|v| {
                enclosing
                    .indices
                    .binary_search(v)
                    .map_err(|_| Error::Shape(format!("voxel {v} not inside enclosing mask")))
            })
            .collect()
    }
}

/// The FOV split into a region of interest and its complement.
#[derive(Debug, Clone)]
pub struct RegionMasks {
    pub fov: VoxelMask,
    pub roi: VoxelMask,
    pub roni: VoxelMask,
}

impl RegionMasks {
    pub fn n_roi(&self) -> usize {
        self.roi.len()
    }

    pub fn n_roni(&self) -> usize {
        self.roni.len()
    }
}

/// Geometric or tissue-based selector for the region of interest.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RoiSpec {
    /// ROI covers the whole FOV; the RONI is empty.
    WholeFov,
    /// Keep the FOV voxels on one side of an axis-aligned plane.
    HalfSpace {
        axis: Axis,
        threshold_mm: f64,
        keep_below: bool,
    },
    /// Keep the FOV voxels whose tissue is in the set.
    Tissues { tissues: Vec<Tissue> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// Determine the field of view from a total Jacobian.
///
/// Voxel j (column j) belongs to the FOV iff for at least one row the
/// sensitivity magnitude exceeds `threshold_fraction` times that row's
/// maximum magnitude over brain columns. Log-amplitude and phase rows are
/// treated alike.
pub fn compute_fov(
    j_total: &DMatrix<f64>,
    columns: &[u32],
    brain_column: &[bool],
    threshold_fraction: f64,
    dims: GridDims,
) -> Result<VoxelMask> {
    if !(threshold_fraction > 0.0 && threshold_fraction < 1.0) {
        return Err(Error::Config(format!(
            "FOV threshold fraction {threshold_fraction} outside (0, 1)"
        )));
    }
    if j_total.ncols() != columns.len() || j_total.ncols() != brain_column.len() {
        return Err(Error::Shape(format!(
            "Jacobian has {} columns for {} voxels / {} brain flags",
            j_total.ncols(),
            columns.len(),
            brain_column.len()
        )));
    }
    let mut in_fov = vec![false; columns.len()];
    let mut any_signal = false;
    for r in 0..j_total.nrows() {
        let row = j_total.row(r);
        let mut row_max = 0.0f64;
        for (c, flag) in brain_column.iter().enumerate() {
            if *flag {
                row_max = row_max.max(row[c].abs());
            }
        }
        if row_max == 0.0 {
            continue;
        }
        any_signal = true;
        let cut = threshold_fraction * row_max;
        for c in 0..columns.len() {
            if row[c].abs() > cut {
                in_fov[c] = true;
            }
        }
    }
    if !any_signal {
        return Err(Error::EmptyFov);
    }
    let indices = columns
        .iter()
        .zip(&in_fov)
        .filter_map(|(v, keep)| keep.then_some(*v))
        .collect();
    Ok(VoxelMask::from_indices(dims, indices))
}

/// Split the FOV into ROI and RONI according to the selector.
pub fn split_roi_roni(
    phantom: &VoxelPhantom,
    fov: &VoxelMask,
    spec: &RoiSpec,
) -> Result<RegionMasks> {
    let keep = |voxel: u32| -> bool {
        match spec {
            RoiSpec::WholeFov => true,
            RoiSpec::HalfSpace {
                axis,
                threshold_mm,
                keep_below,
            } => {
                let c = phantom.voxel_center(phantom.dims.voxel(voxel as usize));
                let v = c[axis.index()];
                if *keep_below {
                    v < *threshold_mm
                } else {
                    v >= *threshold_mm
                }
            }
            RoiSpec::Tissues { tissues } => {
                Tissue::from_label(phantom.labels[voxel as usize])
                    .map_or(false, |t| tissues.contains(&t))
            }
        }
    };
    let mut roi = Vec::new();
    let mut roni = Vec::new();
    for &v in fov.indices() {
        if keep(v) {
            roi.push(v);
        } else {
            roni.push(v);
        }
    }
    if roi.is_empty() {
        return Err(Error::Config(
            "ROI selector matches no FOV voxel".to_string(),
        ));
    }
    Ok(RegionMasks {
        fov: fov.clone(),
        roi: VoxelMask::from_indices(phantom.dims, roi),
        roni: VoxelMask::from_indices(phantom.dims, roni),
    })
}
