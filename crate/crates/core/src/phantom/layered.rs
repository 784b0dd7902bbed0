//! Concentric layered phantoms and spherical absorption perturbations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::{
    dist3, GridDims, OpticalProperties, Tissue, VoxelPhantom, EXTERIOR,
};

/// Overall geometry of a layered phantom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomShape {
    /// Dome pointing +z with a flat base through the sphere center.
    Hemisphere,
    /// Horizontal layers below a flat top face, inset one voxel in x and y
    /// so the exterior stays connected around the block.
    Slab,
}

/// A spherical pocket of clear cerebrospinal fluid inside the brain.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Csf2Pocket {
    pub center_mm: [f64; 3],
    pub radius_mm: f64,
}

/// Construction parameters for [`build_layered_phantom`].
///
/// Layers are ordered from the outside in: scalp & skull, subarachnoid CSF,
/// gray matter, and a white-matter core filling the remainder. Thicknesses
/// of zero are allowed and simply skip the layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayeredPhantomSpec {
    pub dims: [usize; 3],
    pub voxel_size_mm: f64,
    pub shape: PhantomShape,
    /// Sphere center (hemisphere) or top-face center (slab), mm.
    pub center_mm: [f64; 3],
    /// Outer radius (hemisphere) or total thickness (slab), mm.
    pub radius_mm: f64,
    pub scalp_skull_mm: f64,
    pub csf1_mm: f64,
    pub gray_mm: f64,
    #[serde(default)]
    pub csf2_pockets: Vec<Csf2Pocket>,
    /// Optional per-tissue overrides of the reference optical properties.
    #[serde(default)]
    pub tissue_overrides: Vec<(Tissue, OpticalProperties)>,
}

impl LayeredPhantomSpec {
    fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d < 16) {
            return Err(Error::Config(format!(
                "grid {:?} too small, need at least 16 voxels per axis",
                self.dims
            )));
        }
        if !(self.voxel_size_mm > 0.0) {
            return Err(Error::Config("voxel size must be positive".into()));
        }
        for (name, t) in [
            ("scalp_skull", self.scalp_skull_mm),
            ("csf1", self.csf1_mm),
            ("gray", self.gray_mm),
        ] {
            if t < 0.0 {
                return Err(Error::Config(format!("negative {name} thickness {t}")));
            }
        }
        let shells = self.scalp_skull_mm + self.csf1_mm + self.gray_mm;
        if shells > self.radius_mm {
            return Err(Error::Config(format!(
                "layer thicknesses sum to {shells} mm, exceeding the {} mm radius",
                self.radius_mm
            )));
        }
        Ok(())
    }

    fn tissue_table(&self) -> Result<Vec<OpticalProperties>> {
        let mut table = super::reference_tissue_table();
        for (tissue, props) in &self.tissue_overrides {
            props.validate(&format!("{tissue:?} override"))?;
            table[tissue.label() as usize] = *props;
        }
        Ok(table)
    }
}

/// Build a deterministic layered phantom from its spec.
pub fn build_layered_phantom(spec: &LayeredPhantomSpec) -> Result<VoxelPhantom> {
    spec.validate()?;
    let dims = GridDims::new(spec.dims[0], spec.dims[1], spec.dims[2]);
    let extent = [
        dims.nx as f64 * spec.voxel_size_mm,
        dims.ny as f64 * spec.voxel_size_mm,
        dims.nz as f64 * spec.voxel_size_mm,
    ];
    let min_half = 0.5 * extent[0].min(extent[1]).min(extent[2]);
    if spec.radius_mm > min_half + 1e-9 {
        return Err(Error::Config(format!(
            "radius {} mm exceeds the grid half-extent {min_half} mm",
            spec.radius_mm
        )));
    }

    let tissue_table = spec.tissue_table()?;
    let mut labels = vec![EXTERIOR; dims.len()];
    let r_csf1 = spec.radius_mm - spec.scalp_skull_mm;
    let r_gray = r_csf1 - spec.csf1_mm;
    let r_white = r_gray - spec.gray_mm;

    for idx in 0..dims.len() {
        let v = dims.voxel(idx);
        let c = [
            (v[0] as f64 + 0.5) * spec.voxel_size_mm,
            (v[1] as f64 + 0.5) * spec.voxel_size_mm,
            (v[2] as f64 + 0.5) * spec.voxel_size_mm,
        ];
        let depth = match spec.shape {
            PhantomShape::Hemisphere => {
                if c[2] < spec.center_mm[2] {
                    continue;
                }
                let r = dist3(c, spec.center_mm);
                if r > spec.radius_mm {
                    continue;
                }
                r
            }
            PhantomShape::Slab => {
                // One-voxel rim keeps the exterior connected around the slab.
                if c[0] < spec.voxel_size_mm
                    || c[1] < spec.voxel_size_mm
                    || c[0] > extent[0] - spec.voxel_size_mm
                    || c[1] > extent[1] - spec.voxel_size_mm
                {
                    continue;
                }
                let below_top = spec.center_mm[2] - c[2];
                if below_top < 0.0 || below_top > spec.radius_mm {
                    continue;
                }
                spec.radius_mm - below_top
            }
        };
        // `depth` decreases toward the core for the slab and is the radius
        // for the hemisphere; the shell comparisons are identical.
        let label = if depth > r_csf1 {
            Tissue::ScalpSkull.label()
        } else if depth > r_gray {
            Tissue::Csf1.label()
        } else if depth > r_white {
            Tissue::GrayMatter.label()
        } else {
            Tissue::WhiteMatter.label()
        };
        labels[idx] = label;
    }

    // CSF-2 pockets replace brain tissue only.
    for pocket in &spec.csf2_pockets {
        for idx in 0..dims.len() {
            let v = dims.voxel(idx);
            let c = [
                (v[0] as f64 + 0.5) * spec.voxel_size_mm,
                (v[1] as f64 + 0.5) * spec.voxel_size_mm,
                (v[2] as f64 + 0.5) * spec.voxel_size_mm,
            ];
            let l = labels[idx];
            let in_brain = l == Tissue::GrayMatter.label() || l == Tissue::WhiteMatter.label();
            if in_brain && dist3(c, pocket.center_mm) <= pocket.radius_mm {
                labels[idx] = Tissue::Csf2.label();
            }
        }
    }

    let phantom = VoxelPhantom {
        dims,
        voxel_size: spec.voxel_size_mm,
        labels,
        tissue_table,
    };
    phantom.validate()?;
    Ok(phantom)
}

/// Sparse per-voxel absorption change, 1/mm.
#[derive(Debug, Clone, Default)]
pub struct PerturbationField {
    /// (voxel index, delta mu_a) sorted by voxel index.
    deltas: Vec<(u32, f64)>,
}

impl PerturbationField {
    pub fn entries(&self) -> impl Iterator<Item = &(u32, f64)> {
        self.deltas.iter()
    }

    pub fn support_len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    /// Merge another field into this one; overlapping voxels add.
    pub fn merge(&mut self, other: &PerturbationField) {
        let mut merged = Vec::with_capacity(self.deltas.len() + other.deltas.len());
        let (mut i, mut j) = (0, 0);
        while i < self.deltas.len() || j < other.deltas.len() {
            let take_self = match (self.deltas.get(i), other.deltas.get(j)) {
                (Some(a), Some(b)) => {
                    if a.0 == b.0 {
                        merged.push((a.0, a.1 + b.1));
                        i += 1;
                        j += 1;
                        continue;
                    }
                    a.0 < b.0
                }
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (None, None) => break,
            };
            if take_self {
                merged.push(self.deltas[i]);
                i += 1;
            } else {
                merged.push(other.deltas[j]);
                j += 1;
            }
        }
        merged.retain(|(_, v)| *v != 0.0);
        self.deltas = merged;
    }

    /// Dense representation over the full grid.
    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        for &(i, v) in &self.deltas {
            out[i as usize] = v;
        }
        out
    }

    /// Values restricted to a list of voxel indices (mask column order).
    pub fn restrict(&self, voxels: &[u32]) -> Vec<f64> {
        voxels
            .iter()
            .map(|v| match self.deltas.binary_search_by_key(v, |e| e.0) {
                Ok(k) => self.deltas[k].1,
                Err(_) => 0.0,
            })
            .collect()
    }
}

/// Mark a spherical absorption change of the given contrast on the phantom.
///
/// The change applies to labeled voxels whose centers lie within `radius_mm`
/// of `center_mm`, optionally restricted to a tissue set. A sphere entirely
/// outside the phantom yields an empty field; the caller decides whether
/// that warrants a warning.
pub fn insert_perturbation(
    phantom: &VoxelPhantom,
    center_mm: [f64; 3],
    radius_mm: f64,
    contrast: f64,
    tissue_filter: Option<&[Tissue]>,
) -> Result<PerturbationField> {
    if !(radius_mm > 0.0) {
        return Err(Error::Config(format!("perturbation radius {radius_mm}")));
    }
    let extent = [
        phantom.dims.nx as f64 * phantom.voxel_size,
        phantom.dims.ny as f64 * phantom.voxel_size,
        phantom.dims.nz as f64 * phantom.voxel_size,
    ];
    if (0..3).any(|a| center_mm[a] < 0.0 || center_mm[a] > extent[a]) {
        return Err(Error::Config(format!(
            "perturbation center {center_mm:?} outside the grid"
        )));
    }
    let mut deltas = Vec::new();
    if contrast != 0.0 {
        for idx in 0..phantom.dims.len() {
            let label = phantom.labels[idx];
            if label == EXTERIOR {
                continue;
            }
            if let Some(filter) = tissue_filter {
                let tissue = Tissue::from_label(label);
                if !tissue.map_or(false, |t| filter.contains(&t)) {
                    continue;
                }
            }
            let c = phantom.voxel_center(phantom.dims.voxel(idx));
            if dist3(c, center_mm) <= radius_mm {
                deltas.push((idx as u32, contrast));
            }
        }
    }
    Ok(PerturbationField { deltas })
}
