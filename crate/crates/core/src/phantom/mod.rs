//! Voxel phantoms: labeled grids, tissue optical properties, optode layouts,
//! absorption perturbations, and the FOV/ROI/RONI masks.

mod layered;
mod masks;
mod optodes;

pub use layered::{
    build_layered_phantom, insert_perturbation, Csf2Pocket, LayeredPhantomSpec, PerturbationField,
    PhantomShape,
};
pub use masks::{compute_fov, split_roi_roni, Axis, RegionMasks, RoiSpec, VoxelMask};
pub use optodes::{place_optodes, DetectorSpec, OptodeConfig, SourceSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label reserved for air / outside the phantom.
pub const EXTERIOR: u8 = 0;

/// The five tissue types of the bundled layered head phantoms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tissue {
    ScalpSkull,
    Csf1,
    Csf2,
    GrayMatter,
    WhiteMatter,
}

impl Tissue {
    pub const ALL: [Tissue; 5] = [
        Tissue::ScalpSkull,
        Tissue::Csf1,
        Tissue::Csf2,
        Tissue::GrayMatter,
        Tissue::WhiteMatter,
    ];

    /// Voxel label carried by this tissue (exterior is 0).
    pub fn label(self) -> u8 {
        match self {
            Tissue::ScalpSkull => 1,
            Tissue::Csf1 => 2,
            Tissue::Csf2 => 3,
            Tissue::GrayMatter => 4,
            Tissue::WhiteMatter => 5,
        }
    }

    pub fn from_label(label: u8) -> Option<Tissue> {
        Tissue::ALL.iter().copied().find(|t| t.label() == label)
    }

    /// Tissues inside the skull; the FOV sensitivity rule normalizes
    /// against the maximum over these.
    pub fn is_brain(self) -> bool {
        matches!(self, Tissue::Csf2 | Tissue::GrayMatter | Tissue::WhiteMatter)
    }

    /// Reference optical properties at 798 nm.
    pub fn reference_properties(self) -> OpticalProperties {
        match self {
            Tissue::ScalpSkull => OpticalProperties::new(0.015, 16.0, 0.9, 1.4),
            Tissue::Csf1 => OpticalProperties::new(0.004, 1.6, 0.9, 1.4),
            Tissue::Csf2 => OpticalProperties::new(0.002, 0.4, 0.9, 1.4),
            Tissue::GrayMatter => OpticalProperties::new(0.048, 5.0, 0.9, 1.4),
            Tissue::WhiteMatter => OpticalProperties::new(0.037, 10.0, 0.9, 1.4),
        }
    }
}

/// Optical properties of one tissue type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticalProperties {
    /// Absorption coefficient, 1/mm.
    pub mu_a: f64,
    /// Scattering coefficient, 1/mm.
    pub mu_s: f64,
    /// Scattering anisotropy, in (-1, 1).
    pub g: f64,
    /// Refractive index, >= 1.
    pub nu: f64,
}

impl OpticalProperties {
    pub fn new(mu_a: f64, mu_s: f64, g: f64, nu: f64) -> Self {
        OpticalProperties { mu_a, mu_s, g, nu }
    }

    /// Properties of the exterior (air).
    pub fn exterior() -> Self {
        OpticalProperties::new(0.0, 0.0, 0.0, 1.0)
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        if !(self.mu_a >= 0.0
            && self.mu_s > 0.0
            && self.g.abs() < 1.0
            && self.nu >= 1.0
            && self.mu_a.is_finite()
            && self.mu_s.is_finite())
        {
            return Err(Error::Config(format!(
                "invalid optical properties for {what}: mu_a {} mu_s {} g {} nu {}",
                self.mu_a, self.mu_s, self.g, self.nu
            )));
        }
        Ok(())
    }
}

/// Reference tissue table indexed by voxel label. Entry 0 is the exterior.
pub fn reference_tissue_table() -> Vec<OpticalProperties> {
    let mut table = vec![OpticalProperties::exterior()];
    table.extend(Tissue::ALL.iter().map(|t| t.reference_properties()));
    table
}

/// Grid dimensions in voxels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl GridDims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        GridDims { nx, ny, nz }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn contains(&self, v: [i32; 3]) -> bool {
        v[0] >= 0
            && v[1] >= 0
            && v[2] >= 0
            && (v[0] as usize) < self.nx
            && (v[1] as usize) < self.ny
            && (v[2] as usize) < self.nz
    }

    #[inline]
    pub fn index(&self, v: [i32; 3]) -> usize {
        debug_assert!(self.contains(v));
        v[0] as usize + self.nx * (v[1] as usize + self.ny * v[2] as usize)
    }

    #[inline]
    pub fn voxel(&self, index: usize) -> [i32; 3] {
        let x = index % self.nx;
        let y = (index / self.nx) % self.ny;
        let z = index / (self.nx * self.ny);
        [x as i32, y as i32, z as i32]
    }
}

/// Labeled voxel grid with per-tissue optical properties.
#[derive(Debug, Clone)]
pub struct VoxelPhantom {
    pub dims: GridDims,
    /// Edge length of the cubic voxels, mm.
    pub voxel_size: f64,
    /// Per-voxel tissue label, x fastest, then y, then z.
    pub labels: Vec<u8>,
    /// Optical properties indexed by label; entry 0 is the exterior.
    pub tissue_table: Vec<OpticalProperties>,
}

impl VoxelPhantom {
    #[inline]
    pub fn label(&self, v: [i32; 3]) -> u8 {
        if self.dims.contains(v) {
            self.labels[self.dims.index(v)]
        } else {
            EXTERIOR
        }
    }

    #[inline]
    pub fn properties(&self, label: u8) -> &OpticalProperties {
        &self.tissue_table[label as usize]
    }

    /// Center of voxel `v` in mm.
    #[inline]
    pub fn voxel_center(&self, v: [i32; 3]) -> [f64; 3] {
        [
            (v[0] as f64 + 0.5) * self.voxel_size,
            (v[1] as f64 + 0.5) * self.voxel_size,
            (v[2] as f64 + 0.5) * self.voxel_size,
        ]
    }

    /// Linear indices of all labeled (non-exterior) voxels, ascending.
    pub fn interior_voxels(&self) -> Vec<u32> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l != EXTERIOR).then_some(i as u32))
            .collect()
    }

    /// Labeled voxels with at least one exterior face (grid boundary counts).
    pub fn surface_voxels(&self) -> Vec<u32> {
        let mut out = Vec::new();
        for (i, &l) in self.labels.iter().enumerate() {
            if l == EXTERIOR {
                continue;
            }
            let v = self.dims.voxel(i);
            let exposed = FACE_STEPS.iter().any(|s| {
                let n = [v[0] + s[0], v[1] + s[1], v[2] + s[2]];
                self.label(n) == EXTERIOR
            });
            if exposed {
                out.push(i as u32);
            }
        }
        out
    }

    /// Dense per-voxel absorption field: tissue baseline, optional per-tissue
    /// overrides, plus an optional perturbation field.
    pub fn mu_a_field(
        &self,
        overrides: &[(Tissue, f64)],
        delta: Option<&PerturbationField>,
    ) -> Vec<f64> {
        let mut per_label: Vec<f64> = self.tissue_table.iter().map(|p| p.mu_a).collect();
        for (t, v) in overrides {
            per_label[t.label() as usize] = *v;
        }
        let mut field: Vec<f64> = self
            .labels
            .iter()
            .map(|&l| per_label[l as usize])
            .collect();
        if let Some(d) = delta {
            for (idx, dv) in d.entries() {
                field[*idx as usize] += dv;
            }
        }
        field
    }

    /// Fraction-of-total voxel counts per label, for reporting.
    pub fn label_histogram(&self) -> Vec<(u8, usize)> {
        let max = self.tissue_table.len();
        let mut counts = vec![0usize; max];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
            .into_iter()
            .enumerate()
            .map(|(l, c)| (l as u8, c))
            .collect()
    }

    /// Check structural invariants: label coverage by the tissue table and a
    /// connected exterior.
    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.dims.len() {
            return Err(Error::Shape(format!(
                "label array has {} entries for a {}x{}x{} grid",
                self.labels.len(),
                self.dims.nx,
                self.dims.ny,
                self.dims.nz
            )));
        }
        for prop in self.tissue_table.iter().skip(1) {
            prop.validate("tissue table")?;
        }
        if let Some(&l) = self
            .labels
            .iter()
            .find(|&&l| l as usize >= self.tissue_table.len())
        {
            return Err(Error::Config(format!(
                "voxel label {l} has no tissue table entry"
            )));
        }
        self.check_exterior_connected()
    }

    fn check_exterior_connected(&self) -> Result<()> {
        // Flood fill the exterior from the grid boundary; any exterior voxel
        // left unvisited is an enclosed air pocket.
        let n = self.dims.len();
        let mut seen = vec![false; n];
        let mut stack = Vec::new();
        for i in 0..n {
            let v = self.dims.voxel(i);
            let on_boundary = v[0] == 0
                || v[1] == 0
                || v[2] == 0
                || v[0] as usize == self.dims.nx - 1
                || v[1] as usize == self.dims.ny - 1
                || v[2] as usize == self.dims.nz - 1;
            if on_boundary && self.labels[i] == EXTERIOR && !seen[i] {
                seen[i] = true;
                stack.push(v);
            }
        }
        while let Some(v) = stack.pop() {
            for s in FACE_STEPS {
                let nb = [v[0] + s[0], v[1] + s[1], v[2] + s[2]];
                if self.dims.contains(nb) {
                    let idx = self.dims.index(nb);
                    if !seen[idx] && self.labels[idx] == EXTERIOR {
                        seen[idx] = true;
                        stack.push(nb);
                    }
                }
            }
        }
        let pocket = self
            .labels
            .iter()
            .enumerate()
            .find(|(i, &l)| l == EXTERIOR && !seen[*i]);
        match pocket {
            Some((i, _)) => Err(Error::Config(format!(
                "exterior is not connected: enclosed air pocket at voxel {:?}",
                self.dims.voxel(i)
            ))),
            None => Ok(()),
        }
    }
}

pub(crate) const FACE_STEPS: [[i32; 3]; 6] = [
    [1, 0, 0],
    [-1, 0, 0],
    [0, 1, 0],
    [0, -1, 0],
    [0, 0, 1],
    [0, 0, -1],
];

pub(crate) fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_table_matches_published_values() {
        let t = reference_tissue_table();
        assert_eq!(t.len(), 6);
        assert_eq!(t[Tissue::ScalpSkull.label() as usize].mu_a, 0.015);
        assert_eq!(t[Tissue::ScalpSkull.label() as usize].mu_s, 16.0);
        assert_eq!(t[Tissue::Csf1.label() as usize].mu_a, 0.004);
        assert_eq!(t[Tissue::Csf1.label() as usize].mu_s, 1.6);
        assert_eq!(t[Tissue::Csf2.label() as usize].mu_a, 0.002);
        assert_eq!(t[Tissue::Csf2.label() as usize].mu_s, 0.4);
        assert_eq!(t[Tissue::GrayMatter.label() as usize].mu_a, 0.048);
        assert_eq!(t[Tissue::GrayMatter.label() as usize].mu_s, 5.0);
        assert_eq!(t[Tissue::WhiteMatter.label() as usize].mu_a, 0.037);
        assert_eq!(t[Tissue::WhiteMatter.label() as usize].mu_s, 10.0);
        for tissue in Tissue::ALL {
            let p = t[tissue.label() as usize];
            assert_eq!(p.g, 0.9);
            assert_eq!(p.nu, 1.4);
        }
    }

    #[test]
    fn grid_index_round_trip() {
        let d = GridDims::new(4, 5, 6);
        for i in 0..d.len() {
            assert_eq!(d.index(d.voxel(i)), i);
        }
    }

    #[test]
    fn enclosed_pocket_is_rejected() {
        // Solid 5x5x5 block with a single interior air voxel.
        let dims = GridDims::new(7, 7, 7);
        let mut labels = vec![EXTERIOR; dims.len()];
        for x in 1..6 {
            for y in 1..6 {
                for z in 1..6 {
                    labels[dims.index([x, y, z])] = Tissue::GrayMatter.label();
                }
            }
        }
        labels[dims.index([3, 3, 3])] = EXTERIOR;
        let phantom = VoxelPhantom {
            dims,
            voxel_size: 1.0,
            labels,
            tissue_table: reference_tissue_table(),
        };
        assert!(matches!(phantom.validate(), Err(Error::Config(_))));
    }
}
