//! Stochastic photon-packet transport on the voxel grid.
//!
//! Trajectories depend only on geometry, scattering, and refractive indices;
//! absorption is applied afterwards by the replay module. Each packet owns a
//! counter-based random stream keyed by `(seed, source, packet counter)`, so
//! simulations are bit-reproducible for any thread count.

mod fresnel;
mod records_io;
mod scatter;
mod traverse;
pub(crate) mod vec3;

pub use fresnel::{boundary_interaction, fresnel_reflectance, BoundaryOutcome};
pub use records_io::{read_record_set, write_record_set};
pub use scatter::{hg_cos_theta, sample_scatter_direction};
pub use traverse::{
    advance_packet, find_entry, AdvanceEvent, PacketState, PathAccumulator, C0_MM_PER_S,
};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::phantom::{OptodeConfig, VoxelPhantom};
use crate::rng::Stream;
use vec3::{add_scaled, orthonormal_frame, V3};

/// The Gaussian launch profile is truncated at this many waist radii.
const LAUNCH_TRUNCATION_WAISTS: f64 = 3.0;

/// Runtime knobs for the transport stage.
#[derive(Debug, Clone, Copy)]
pub struct TransportSettings {
    /// Packets exceeding this optical time of flight are discarded, seconds.
    pub max_time_of_flight_s: f64,
}

impl Default for TransportSettings {
    fn default() -> Self {
        TransportSettings {
            max_time_of_flight_s: 5e-9,
        }
    }
}

/// One detected photon packet.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonRecord {
    pub detector_index: u32,
    /// Packet counter within the launch; also the RNG stream id.
    pub launch_counter: u64,
    /// Optical time of flight, seconds.
    pub time_of_flight: f64,
    /// Sorted (voxel index, chord length mm) pairs with merged revisits.
    pub pathlengths: Vec<(u32, f64)>,
    /// Total geometric trajectory length inside the domain, mm. Recomputed
    /// from `pathlengths` when a record is read back from disk.
    pub total_length: f64,
}

/// All detected packets of one source, with launch accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonRecordSet {
    pub source_index: u32,
    pub launched_count: u64,
    pub records: Vec<PhotonRecord>,
    pub escape_count: u64,
    pub expired_count: u64,
}

impl PhotonRecordSet {
    /// Accounting invariant: every launched packet is detected, escaped,
    /// or expired.
    pub fn accounting_holds(&self) -> bool {
        self.records.len() as u64 + self.escape_count + self.expired_count == self.launched_count
    }
}

enum PacketOutcome {
    Detected(PhotonRecord),
    Escaped,
    Expired,
}

/// Simulate `n_packets` photon packets from one source.
///
/// Packets launch from a truncated Gaussian profile in the plane tangent to
/// the surface at the source, collimated along the inward normal; reflections
/// at light input are neglected. At the tissue-air boundary packets reflect
/// or exit according to Fresnel's law, and packets exiting through a face
/// whose centroid lies within a detector's capture radius are recorded.
pub fn simulate_source(
    phantom: &VoxelPhantom,
    optodes: &OptodeConfig,
    source_index: u32,
    n_packets: u64,
    seed: u64,
    settings: &TransportSettings,
) -> Result<PhotonRecordSet> {
    if n_packets == 0 {
        return Err(Error::Config("n_packets must be at least 1".into()));
    }
    let src = optodes
        .sources
        .get(source_index as usize)
        .ok_or_else(|| Error::Config(format!("source {source_index} does not exist")))?;

    let h = phantom.voxel_size;
    let backoff = 2.0 * h;
    let march_limit = backoff + 12.0 * h;
    // Backing off along the normal must leave the domain, and marching back
    // in must reach tissue; otherwise the normal points the wrong way.
    let central_start = add_scaled(src.position, src.normal, -backoff);
    let start_voxel = [
        (central_start[0] / h).floor() as i32,
        (central_start[1] / h).floor() as i32,
        (central_start[2] / h).floor() as i32,
    ];
    if phantom.label(start_voxel) != crate::phantom::EXTERIOR
        || find_entry(phantom, central_start, src.normal, march_limit).is_none()
    {
        return Err(Error::Launch(format!(
            "source {source_index} normal {:?} does not enter the domain from outside",
            src.normal
        )));
    }

    let (e1, e2) = orthonormal_frame(src.normal);
    let truncated_mass = 1.0 - (-LAUNCH_TRUNCATION_WAISTS * LAUNCH_TRUNCATION_WAISTS).exp();

    let outcomes: Vec<PacketOutcome> = (0..n_packets)
        .into_par_iter()
        .map(|packet| {
            let mut rng = Stream::for_packet(seed, source_index, packet);
            simulate_packet(
                phantom,
                optodes,
                src,
                packet,
                &mut rng,
                e1,
                e2,
                truncated_mass,
                backoff,
                march_limit,
                settings.max_time_of_flight_s,
            )
        })
        .collect();

    let mut records = Vec::new();
    let mut escape_count = 0;
    let mut expired_count = 0;
    for outcome in outcomes {
        match outcome {
            PacketOutcome::Detected(r) => records.push(r),
            PacketOutcome::Escaped => escape_count += 1,
            PacketOutcome::Expired => expired_count += 1,
        }
    }
    Ok(PhotonRecordSet {
        source_index,
        launched_count: n_packets,
        records,
        escape_count,
        expired_count,
    })
}

#[allow(clippy::too_many_arguments)]
fn simulate_packet(
    phantom: &VoxelPhantom,
    optodes: &OptodeConfig,
    src: &crate::phantom::SourceSpec,
    packet: u64,
    rng: &mut Stream,
    e1: V3,
    e2: V3,
    truncated_mass: f64,
    backoff: f64,
    march_limit: f64,
    max_tof: f64,
) -> PacketOutcome {
    // Radial offset with density proportional to exp(-(r/waist)^2),
    // truncated; inverse-CDF sampling keeps one draw per packet.
    let u_r = rng.next_f64();
    let r = src.waist_mm * (-(1.0 - u_r * truncated_mass).ln()).sqrt();
    let phi = std::f64::consts::TAU * rng.next_f64();
    let offset = add_scaled(
        add_scaled([0.0; 3], e1, r * phi.cos()),
        e2,
        r * phi.sin(),
    );
    let start = add_scaled(
        [
            src.position[0] + offset[0],
            src.position[1] + offset[1],
            src.position[2] + offset[2],
        ],
        src.normal,
        -backoff,
    );
    let Some((voxel, position)) = find_entry(phantom, start, src.normal, march_limit) else {
        return PacketOutcome::Escaped;
    };

    let mut state = PacketState {
        voxel,
        position,
        direction: src.normal,
        time_of_flight: 0.0,
        total_length: 0.0,
    };
    let mut acc = PathAccumulator::default();
    let mut budget = -rng.next_open01().ln();
    loop {
        let (event, rest) = advance_packet(phantom, &mut state, budget, &mut acc, max_tof);
        match event {
            AdvanceEvent::Expired => return PacketOutcome::Expired,
            AdvanceEvent::Scatter => {
                let label = phantom.labels[phantom.dims.index(state.voxel)];
                let g = phantom.properties(label).g;
                let u1 = rng.next_f64();
                let u2 = rng.next_f64();
                state.direction = sample_scatter_direction(g, state.direction, u1, u2);
                budget = -rng.next_open01().ln();
            }
            AdvanceEvent::Boundary { axis, positive } => {
                let mut outward = [0.0; 3];
                outward[axis] = if positive { 1.0 } else { -1.0 };
                let label = phantom.labels[phantom.dims.index(state.voxel)];
                let nu_in = phantom.properties(label).nu;
                let nu_out = phantom.tissue_table[0].nu;
                match boundary_interaction(nu_in, nu_out, state.direction, outward, rng.next_f64())
                {
                    BoundaryOutcome::Reflect { direction } => {
                        state.direction = direction;
                        budget = rest;
                    }
                    BoundaryOutcome::Exit { .. } => {
                        let mut centroid = phantom.voxel_center(state.voxel);
                        centroid[axis] = state.position[axis];
                        return match detect(optodes, centroid) {
                            Some(detector_index) => {
                                let pathlengths = acc.into_sorted_merged();
                                PacketOutcome::Detected(PhotonRecord {
                                    detector_index,
                                    launch_counter: packet,
                                    time_of_flight: state.time_of_flight,
                                    pathlengths,
                                    total_length: state.total_length,
                                })
                            }
                            None => PacketOutcome::Escaped,
                        };
                    }
                }
            }
        }
    }
}

/// Nearest detector whose capture radius contains the exit-face centroid.
fn detect(optodes: &OptodeConfig, centroid: V3) -> Option<u32> {
    let mut best: Option<(u32, f64)> = None;
    for (d, det) in optodes.detectors.iter().enumerate() {
        let dist = crate::phantom::dist3(det.position, centroid);
        if dist <= det.radius_mm && best.map_or(true, |(_, b)| dist < b) {
            best = Some((d as u32, dist));
        }
    }
    best.map(|(d, _)| d)
}
