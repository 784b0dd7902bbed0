//! Exact voxel-by-voxel ray marching.
//!
//! The dimensionless scattering budget `s` (sampled as -ln u) is consumed at
//! rate `mu_s` per millimeter, so a step that crosses into a voxel with a
//! different scattering coefficient automatically rescales the remaining
//! physical distance. Per-voxel chord lengths are accumulated exactly as the
//! difference of face-crossing parameters, which is what makes the replayed
//! Jacobians agree with finite differences.

use crate::phantom::{VoxelPhantom, EXTERIOR};
use crate::transport::vec3::V3;

/// Speed of light in vacuum, mm/s.
pub const C0_MM_PER_S: f64 = 2.997_924_58e11;

/// Guard against pathological loops (a packet crossing this many voxel faces
/// in one flight is far beyond any physical time budget used here).
const MAX_STEPS: u64 = 50_000_000;

/// Mutable flight state of one packet.
#[derive(Debug, Clone)]
pub struct PacketState {
    pub voxel: [i32; 3],
    /// Position in mm; kept exactly on the crossed face after each crossing.
    pub position: V3,
    pub direction: V3,
    /// Optical time of flight accumulated so far, seconds.
    pub time_of_flight: f64,
    /// Total geometric path length inside the domain, mm.
    pub total_length: f64,
}

/// Per-voxel path lengths accumulated along a trajectory.
#[derive(Debug, Default, Clone)]
pub struct PathAccumulator {
    pub segments: Vec<(u32, f64)>,
}

impl PathAccumulator {
    #[inline]
    fn push(&mut self, voxel_index: u32, length: f64) {
        if length > 0.0 {
            self.segments.push((voxel_index, length));
        }
    }

    /// Consolidate into a sorted voxel -> total length map.
    pub fn into_sorted_merged(mut self) -> Vec<(u32, f64)> {
        self.segments.sort_unstable_by_key(|(v, _)| *v);
        let mut out: Vec<(u32, f64)> = Vec::with_capacity(self.segments.len());
        for (v, l) in self.segments {
            match out.last_mut() {
                Some((pv, pl)) if *pv == v => *pl += l,
                _ => out.push((v, l)),
            }
        }
        out
    }
}

/// Why a call to [`advance_packet`] stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvanceEvent {
    /// The budget ran out inside a voxel; scatter at the current position.
    Scatter,
    /// The packet reached a face beyond which lies the exterior. The state
    /// still sits in the inside voxel, positioned exactly on the face.
    Boundary { axis: usize, positive: bool },
    /// The time-of-flight budget was exhausted mid-flight.
    Expired,
}

/// Distance to the nearest voxel face along `direction`, and its axis.
#[inline]
fn face_exit(position: V3, direction: V3, voxel: [i32; 3], h: f64) -> (f64, usize) {
    let mut best = f64::INFINITY;
    let mut axis = 0;
    for a in 0..3 {
        let d = direction[a];
        if d == 0.0 {
            continue;
        }
        let bound = if d > 0.0 {
            (voxel[a] + 1) as f64 * h
        } else {
            voxel[a] as f64 * h
        };
        // Rounding can leave the position a hair past the face; clamp.
        let t = ((bound - position[a]) / d).max(0.0);
        if t < best {
            best = t;
            axis = a;
        }
    }
    (best, axis)
}

/// March the packet until its scattering budget is spent, it reaches the
/// exterior boundary, or its time budget expires. Returns the event and the
/// unconsumed dimensionless budget (nonzero only for boundary events).
pub fn advance_packet(
    phantom: &VoxelPhantom,
    state: &mut PacketState,
    mut budget: f64,
    acc: &mut PathAccumulator,
    max_time_of_flight: f64,
) -> (AdvanceEvent, f64) {
    let h = phantom.voxel_size;
    let inv_c0 = 1.0 / C0_MM_PER_S;
    let mut steps = 0u64;
    loop {
        steps += 1;
        if steps > MAX_STEPS {
            return (AdvanceEvent::Expired, budget);
        }
        let index = phantom.dims.index(state.voxel);
        let label = phantom.labels[index];
        debug_assert_ne!(label, EXTERIOR, "packet advanced inside the exterior");
        let props = phantom.properties(label);
        let mu_s = props.mu_s;
        let nu_over_c0 = props.nu * inv_c0;

        let scatter_dist = if budget <= 0.0 { 0.0 } else { budget / mu_s };
        let (face_dist, axis) = face_exit(state.position, state.direction, state.voxel, h);

        if scatter_dist < face_dist {
            // Budget runs out inside this voxel: move and scatter here.
            acc.push(index as u32, scatter_dist);
            state.total_length += scatter_dist;
            state.time_of_flight += scatter_dist * nu_over_c0;
            for a in 0..3 {
                state.position[a] += scatter_dist * state.direction[a];
            }
            if state.time_of_flight > max_time_of_flight {
                return (AdvanceEvent::Expired, 0.0);
            }
            return (AdvanceEvent::Scatter, 0.0);
        }

        // Cross into the next voxel.
        acc.push(index as u32, face_dist);
        state.total_length += face_dist;
        state.time_of_flight += face_dist * nu_over_c0;
        budget -= face_dist * mu_s;
        let positive = state.direction[axis] > 0.0;
        let bound = if positive {
            (state.voxel[axis] + 1) as f64 * h
        } else {
            state.voxel[axis] as f64 * h
        };
        for a in 0..3 {
            state.position[a] += face_dist * state.direction[a];
        }
        state.position[axis] = bound;
        if state.time_of_flight > max_time_of_flight {
            return (AdvanceEvent::Expired, budget.max(0.0));
        }

        let mut next = state.voxel;
        next[axis] += if positive { 1 } else { -1 };
        if phantom.label(next) == EXTERIOR {
            return (AdvanceEvent::Boundary { axis, positive }, budget.max(0.0));
        }
        state.voxel = next;
    }
}

/// Walk a ray from outside (or inside) the grid to the first labeled voxel.
///
/// Returns the entry voxel and the position on its face, or None when the
/// ray misses the phantom within `max_march` mm.
pub fn find_entry(
    phantom: &VoxelPhantom,
    start: V3,
    direction: V3,
    max_march: f64,
) -> Option<([i32; 3], V3)> {
    let h = phantom.voxel_size;
    let extent = [
        phantom.dims.nx as f64 * h,
        phantom.dims.ny as f64 * h,
        phantom.dims.nz as f64 * h,
    ];
    // Clip to the grid box.
    let mut t0 = 0.0f64;
    let mut t1 = max_march;
    for a in 0..3 {
        let d = direction[a];
        if d == 0.0 {
            if start[a] < 0.0 || start[a] > extent[a] {
                return None;
            }
            continue;
        }
        let ta = (0.0 - start[a]) / d;
        let tb = (extent[a] - start[a]) / d;
        t0 = t0.max(ta.min(tb));
        t1 = t1.min(ta.max(tb));
    }
    if t0 > t1 {
        return None;
    }
    let mut position = [
        start[0] + t0 * direction[0],
        start[1] + t0 * direction[1],
        start[2] + t0 * direction[2],
    ];
    let mut voxel = [0i32; 3];
    for a in 0..3 {
        let max_idx = [phantom.dims.nx, phantom.dims.ny, phantom.dims.nz][a] as i32 - 1;
        voxel[a] = ((position[a] / h).floor() as i32).clamp(0, max_idx);
    }
    if phantom.labels[phantom.dims.index(voxel)] != EXTERIOR {
        return Some((voxel, position));
    }
    let mut traveled = t0;
    loop {
        let (dist, axis) = face_exit(position, direction, voxel, h);
        if !dist.is_finite() {
            return None;
        }
        traveled += dist;
        if traveled > max_march + 1e-9 {
            return None;
        }
        let positive = direction[axis] > 0.0;
        let bound = if positive {
            (voxel[axis] + 1) as f64 * h
        } else {
            voxel[axis] as f64 * h
        };
        for a in 0..3 {
            position[a] += dist * direction[a];
        }
        position[axis] = bound;
        voxel[axis] += if positive { 1 } else { -1 };
        if !phantom.dims.contains(voxel) {
            return None;
        }
        if phantom.labels[phantom.dims.index(voxel)] != EXTERIOR {
            return Some((voxel, position));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{reference_tissue_table, GridDims, OpticalProperties, Tissue, VoxelPhantom};

    /// Homogeneous 16^3 block of one tissue with a one-voxel air rim.
    fn block(props: OpticalProperties) -> VoxelPhantom {
        let dims = GridDims::new(16, 16, 16);
        let mut labels = vec![EXTERIOR; dims.len()];
        for x in 1..15 {
            for y in 1..15 {
                for z in 1..15 {
                    labels[dims.index([x, y, z])] = 1;
                }
            }
        }
        let mut table = reference_tissue_table();
        table[1] = props;
        VoxelPhantom {
            dims,
            voxel_size: 1.0,
            labels,
            tissue_table: table,
        }
    }

    #[test]
    fn homogeneous_free_path_is_budget_over_mu_s() {
        let mu_s = 2.0;
        let phantom = block(OpticalProperties::new(0.0, mu_s, 0.0, 1.4));
        let mut state = PacketState {
            voxel: [8, 8, 8],
            position: [8.1, 8.5, 8.5],
            direction: [1.0, 0.0, 0.0],
            time_of_flight: 0.0,
            total_length: 0.0,
        };
        let mut acc = PathAccumulator::default();
        let s = 3.0;
        let (event, rest) = advance_packet(&phantom, &mut state, s, &mut acc, 1.0);
        assert_eq!(event, AdvanceEvent::Scatter);
        assert_eq!(rest, 0.0);
        assert!((state.total_length - s / mu_s).abs() < 1e-12);
        let sum: f64 = acc.into_sorted_merged().iter().map(|(_, l)| l).sum();
        assert!((sum - s / mu_s).abs() < 1e-12);
    }

    /// Two-voxel analytic trace: the remaining physical length rescales by
    /// the scattering ratio at the interface.
    #[test]
    fn budget_rescales_across_interface() {
        let dims = GridDims::new(16, 16, 16);
        let mut labels = vec![EXTERIOR; dims.len()];
        for x in 1..15 {
            for y in 1..15 {
                for z in 1..15 {
                    // mu_s = 16 on the left half, 5 on the right half.
                    labels[dims.index([x, y, z])] = if x < 8 { 1 } else { 2 };
                }
            }
        }
        let mut table = reference_tissue_table();
        table[1] = OpticalProperties::new(0.0, 16.0, 0.0, 1.4);
        table[2] = OpticalProperties::new(0.0, 5.0, 0.0, 1.4);
        let phantom = VoxelPhantom {
            dims,
            voxel_size: 1.0,
            labels,
            tissue_table: table,
        };

        // Start 0.5 mm before the interface at x = 8. Budget 16 would carry
        // exactly 1.0 mm in medium 1; half is spent reaching the interface,
        // leaving s = 8, which in medium 2 is 8/5 = 1.6 mm.
        let mut state = PacketState {
            voxel: [7, 8, 8],
            position: [7.5, 8.5, 8.5],
            direction: [1.0, 0.0, 0.0],
            time_of_flight: 0.0,
            total_length: 0.0,
        };
        let mut acc = PathAccumulator::default();
        let (event, _) = advance_packet(&phantom, &mut state, 16.0, &mut acc, 1.0);
        assert_eq!(event, AdvanceEvent::Scatter);
        let expected_total = 0.5 + 8.0 / 5.0;
        assert!(
            (state.total_length - expected_total).abs() < 1e-12,
            "total {} vs {expected_total}",
            state.total_length
        );
        assert!((state.position[0] - 9.6).abs() < 1e-12);
    }

    #[test]
    fn axis_aligned_ray_crosses_unit_voxels() {
        let phantom = block(OpticalProperties::new(0.0, 1e-9, 0.0, 1.0));
        let mut state = PacketState {
            voxel: [1, 8, 8],
            position: [1.0, 8.5, 8.5],
            direction: [1.0, 0.0, 0.0],
            time_of_flight: 0.0,
            total_length: 0.0,
        };
        let mut acc = PathAccumulator::default();
        let (event, _) = advance_packet(&phantom, &mut state, 1.0, &mut acc, 1.0);
        assert_eq!(
            event,
            AdvanceEvent::Boundary {
                axis: 0,
                positive: true
            }
        );
        let merged = acc.into_sorted_merged();
        assert_eq!(merged.len(), 14, "14 voxels from x=1 to x=14");
        for (_, l) in &merged {
            assert!((l - 1.0).abs() < 1e-12, "chord {l}");
        }
        assert!((state.total_length - 14.0).abs() < 1e-12);
    }

    #[test]
    fn time_budget_expires() {
        let phantom = block(OpticalProperties::new(0.0, 1.0, 0.0, 1.4));
        let mut state = PacketState {
            voxel: [8, 8, 8],
            position: [8.5, 8.5, 8.5],
            direction: [1.0, 0.0, 0.0],
            time_of_flight: 0.0,
            total_length: 0.0,
        };
        let mut acc = PathAccumulator::default();
        // 1 mm at nu = 1.4 takes ~4.7e-12 s; a 1e-12 s budget dies inside
        // the first voxel.
        let (event, _) = advance_packet(&phantom, &mut state, 100.0, &mut acc, 1e-12);
        assert_eq!(event, AdvanceEvent::Expired);
    }

    #[test]
    fn entry_march_finds_first_labeled_voxel() {
        let phantom = block(OpticalProperties::new(0.0, 1.0, 0.0, 1.4));
        let hit = find_entry(&phantom, [8.5, 8.5, 20.0], [0.0, 0.0, -1.0], 30.0);
        let (voxel, position) = hit.expect("ray should enter the block");
        assert_eq!(voxel, [8, 8, 14]);
        assert!((position[2] - 15.0).abs() < 1e-12);

        let miss = find_entry(&phantom, [40.0, 40.0, 20.0], [0.0, 0.0, -1.0], 30.0);
        assert!(miss.is_none());
        let _ = Tissue::ALL;
    }
}
