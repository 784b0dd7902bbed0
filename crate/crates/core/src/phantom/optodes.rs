//! Optode placement: snapping requested coordinates to surface voxels,
//! estimating surface normals, and enumerating source-detector pairs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::{dist3, VoxelPhantom, EXTERIOR};

/// Sites farther than this many voxels from the surface are rejected rather
/// than silently snapped across the phantom.
const MAX_SNAP_VOXELS: f64 = 4.0;

/// Width (in voxels) of the Gaussian used to smooth the inside-indicator
/// before taking its gradient as the surface normal.
const NORMAL_SMOOTHING_SIGMA: f64 = 1.25;
const NORMAL_SMOOTHING_RADIUS: i32 = 3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceSpec {
    /// Snapped surface voxel center, mm.
    pub position: [f64; 3],
    /// Inward unit normal along which packets are launched.
    pub normal: [f64; 3],
    /// Beam waist (half-width) of the Gaussian launch profile, mm.
    pub waist_mm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorSpec {
    /// Snapped surface voxel center, mm.
    pub position: [f64; 3],
    /// Capture radius around the detector center, mm.
    pub radius_mm: f64,
}

/// Optode layout plus the source-major pair list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptodeConfig {
    pub sources: Vec<SourceSpec>,
    pub detectors: Vec<DetectorSpec>,
    /// Intensity modulation frequency, Hz.
    pub frequency_hz: f64,
    pub sds_cutoff_mm: f64,
    /// (source, detector) pairs with separation within the cutoff,
    /// enumerated source-major. Row k of a measurement vector is the
    /// log-amplitude of pair k; row k + m is its phase.
    pub pairs: Vec<(u32, u32)>,
}

impl OptodeConfig {
    /// Number of source-detector pairs m.
    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    /// Total number of optodes l.
    pub fn n_optodes(&self) -> usize {
        self.sources.len() + self.detectors.len()
    }

    /// Pairs involving source `s`, with their pair indices.
    pub fn pairs_of_source(&self, s: u32) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.pairs
            .iter()
            .enumerate()
            .filter(move |(_, (src, _))| *src == s)
            .map(|(k, (_, det))| (k, *det))
    }

    pub fn source_detector_distance(&self, pair: usize) -> f64 {
        let (s, d) = self.pairs[pair];
        dist3(
            self.sources[s as usize].position,
            self.detectors[d as usize].position,
        )
    }
}

/// Snap optode sites onto the phantom surface and enumerate pairs.
///
/// Sites are given in mm; each is moved to the nearest surface voxel center.
/// Surface normals come from the gradient of a Gaussian-smoothed
/// inside-indicator so that beams are not locked to the grid axes.
pub fn place_optodes(
    phantom: &VoxelPhantom,
    source_sites: &[[f64; 3]],
    detector_sites: &[[f64; 3]],
    source_waist_mm: f64,
    detector_radius_mm: f64,
    frequency_hz: f64,
    sds_cutoff_mm: f64,
) -> Result<OptodeConfig> {
    if source_sites.is_empty() || detector_sites.is_empty() {
        return Err(Error::Config("need at least one source and one detector".into()));
    }
    if !(source_waist_mm > 0.0) || !(detector_radius_mm > 0.0) {
        return Err(Error::Config("optode radii must be positive".into()));
    }
    if frequency_hz < 0.0 {
        return Err(Error::Config(format!("negative frequency {frequency_hz}")));
    }

    let surface = phantom.surface_voxels();
    if surface.is_empty() {
        return Err(Error::Placement("phantom has no surface voxels".into()));
    }
    let surface_centers: Vec<[f64; 3]> = surface
        .iter()
        .map(|&i| phantom.voxel_center(phantom.dims.voxel(i as usize)))
        .collect();

    let snap = |site: [f64; 3], what: &str| -> Result<[f64; 3]> {
        let (best, dist) = surface_centers
            .iter()
            .enumerate()
            .map(|(k, c)| (k, dist3(*c, site)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("surface is nonempty");
        if dist > MAX_SNAP_VOXELS * phantom.voxel_size {
            return Err(Error::Placement(format!(
                "{what} site {site:?} is {dist:.1} mm from the nearest surface voxel"
            )));
        }
        Ok(surface_centers[best])
    };

    let mut sources = Vec::with_capacity(source_sites.len());
    for (i, site) in source_sites.iter().enumerate() {
        let position = snap(*site, "source")?;
        let normal = inward_normal(phantom, position)
            .ok_or_else(|| Error::Placement(format!("source {i}: degenerate surface normal")))?;
        sources.push(SourceSpec {
            position,
            normal,
            waist_mm: source_waist_mm,
        });
    }
    let mut detectors = Vec::with_capacity(detector_sites.len());
    for site in detector_sites {
        detectors.push(DetectorSpec {
            position: snap(*site, "detector")?,
            radius_mm: detector_radius_mm,
        });
    }

    let mut pairs = Vec::new();
    for (s, src) in sources.iter().enumerate() {
        for (d, det) in detectors.iter().enumerate() {
            if dist3(src.position, det.position) <= sds_cutoff_mm {
                pairs.push((s as u32, d as u32));
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::Config(format!(
            "no source-detector pair within the {sds_cutoff_mm} mm cutoff"
        )));
    }

    Ok(OptodeConfig {
        sources,
        detectors,
        frequency_hz,
        sds_cutoff_mm,
        pairs,
    })
}

/// Gaussian-smoothed inside-indicator evaluated at an arbitrary point.
fn smoothed_indicator(phantom: &VoxelPhantom, p: [f64; 3]) -> f64 {
    let h = phantom.voxel_size;
    let base = [
        (p[0] / h - 0.5).round() as i32,
        (p[1] / h - 0.5).round() as i32,
        (p[2] / h - 0.5).round() as i32,
    ];
    let sigma = NORMAL_SMOOTHING_SIGMA * h;
    let mut acc = 0.0;
    let mut norm = 0.0;
    for dx in -NORMAL_SMOOTHING_RADIUS..=NORMAL_SMOOTHING_RADIUS {
        for dy in -NORMAL_SMOOTHING_RADIUS..=NORMAL_SMOOTHING_RADIUS {
            for dz in -NORMAL_SMOOTHING_RADIUS..=NORMAL_SMOOTHING_RADIUS {
                let v = [base[0] + dx, base[1] + dy, base[2] + dz];
                let c = phantom.voxel_center(v);
                let r2 = (c[0] - p[0]).powi(2) + (c[1] - p[1]).powi(2) + (c[2] - p[2]).powi(2);
                let w = (-0.5 * r2 / (sigma * sigma)).exp();
                norm += w;
                if phantom.label(v) != EXTERIOR {
                    acc += w;
                }
            }
        }
    }
    acc / norm
}

/// Inward unit normal at a surface position, or None if the smoothed
/// gradient vanishes.
pub(crate) fn inward_normal(phantom: &VoxelPhantom, position: [f64; 3]) -> Option<[f64; 3]> {
    let h = phantom.voxel_size;
    let mut grad = [0.0; 3];
    for axis in 0..3 {
        let mut plus = position;
        let mut minus = position;
        plus[axis] += h;
        minus[axis] -= h;
        grad[axis] = (smoothed_indicator(phantom, plus) - smoothed_indicator(phantom, minus))
            / (2.0 * h);
    }
    let norm = (grad[0] * grad[0] + grad[1] * grad[1] + grad[2] * grad[2]).sqrt();
    if norm < 1e-12 {
        return None;
    }
    // The indicator increases toward the inside, so the gradient points inward.
    Some([grad[0] / norm, grad[1] / norm, grad[2] / norm])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{
        build_layered_phantom, LayeredPhantomSpec, PhantomShape,
    };

    fn dome() -> VoxelPhantom {
        build_layered_phantom(&LayeredPhantomSpec {
            dims: [32, 32, 32],
            voxel_size_mm: 1.0,
            shape: PhantomShape::Hemisphere,
            center_mm: [16.0, 16.0, 4.0],
            radius_mm: 12.0,
            scalp_skull_mm: 3.0,
            csf1_mm: 1.0,
            gray_mm: 3.0,
            csf2_pockets: vec![],
            tissue_overrides: vec![],
        })
        .unwrap()
    }

    fn dome_sites(n: usize, zenith_deg: f64) -> Vec<[f64; 3]> {
        // Ring of sites on the dome at the given zenith angle.
        let r = 12.0;
        (0..n)
            .map(|k| {
                let az = std::f64::consts::TAU * k as f64 / n as f64;
                let zen = zenith_deg.to_radians();
                [
                    16.0 + r * zen.sin() * az.cos(),
                    16.0 + r * zen.sin() * az.sin(),
                    4.0 + r * zen.cos(),
                ]
            })
            .collect()
    }

    #[test]
    fn pairs_match_brute_force_filter() {
        let phantom = dome();
        let sources = dome_sites(4, 30.0);
        let detectors = dome_sites(6, 55.0);
        let cfg =
            place_optodes(&phantom, &sources, &detectors, 1.25, 1.82, 100e6, 25.0).unwrap();
        assert_eq!(cfg.n_optodes(), 10);

        let mut oracle = Vec::new();
        for (s, src) in cfg.sources.iter().enumerate() {
            for (d, det) in cfg.detectors.iter().enumerate() {
                if dist3(src.position, det.position) <= 25.0 {
                    oracle.push((s as u32, d as u32));
                }
            }
        }
        assert_eq!(cfg.pairs, oracle);
        assert!(!cfg.pairs.is_empty());
    }

    #[test]
    fn zero_cutoff_is_a_configuration_error() {
        let phantom = dome();
        let sources = dome_sites(2, 30.0);
        let detectors = dome_sites(3, 55.0);
        let out = place_optodes(&phantom, &sources, &detectors, 1.25, 1.82, 100e6, 0.0);
        assert!(matches!(out, Err(Error::Config(_))));
    }

    #[test]
    fn interior_site_is_a_placement_error() {
        let phantom = dome();
        let sources = vec![[16.5, 16.5, 10.0]]; // deep inside the dome
        let detectors = dome_sites(3, 55.0);
        let out = place_optodes(&phantom, &sources, &detectors, 1.25, 1.82, 100e6, 30.0);
        assert!(matches!(out, Err(Error::Placement(_))));
    }

    #[test]
    fn snapped_sites_lie_on_surface_voxels() {
        let phantom = dome();
        let cfg = place_optodes(
            &phantom,
            &dome_sites(4, 30.0),
            &dome_sites(6, 55.0),
            1.25,
            1.82,
            100e6,
            25.0,
        )
        .unwrap();
        let surface: Vec<[f64; 3]> = phantom
            .surface_voxels()
            .iter()
            .map(|&i| phantom.voxel_center(phantom.dims.voxel(i as usize)))
            .collect();
        for src in &cfg.sources {
            assert!(surface.iter().any(|c| *c == src.position));
        }
        for det in &cfg.detectors {
            assert!(surface.iter().any(|c| *c == det.position));
        }
    }

    #[test]
    fn dome_normals_point_toward_center() {
        let phantom = dome();
        let cfg = place_optodes(
            &phantom,
            &dome_sites(6, 40.0),
            &dome_sites(6, 60.0),
            1.25,
            1.82,
            100e6,
            30.0,
        )
        .unwrap();
        for src in &cfg.sources {
            let to_center = [
                16.0 - src.position[0],
                16.0 - src.position[1],
                4.0 - src.position[2],
            ];
            let norm = dist3([0.0; 3], to_center);
            let dot = (0..3).map(|a| src.normal[a] * to_center[a] / norm).sum::<f64>();
            assert!(
                dot > 0.7,
                "normal {:?} misaligned with center direction at {:?} (dot {dot})",
                src.normal,
                src.position
            );
            let len: f64 = src.normal.iter().map(|x| x * x).sum::<f64>();
            assert!((len - 1.0).abs() < 1e-12);
        }
    }
}
