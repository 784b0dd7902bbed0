//! Measurement replay: re-weight stored photon paths into frequency-domain
//! measurements, difference data, coupling-perturbed data, noise, and
//! analytic absorption Jacobians.
//!
//! Since trajectories never depend on absorption, a record set can be
//! replayed for any absorption field. Per-pair sums run in canonical launch
//! order with compensated accumulation, so replayed values are identical
//! across thread counts.

use nalgebra::{Complex, DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::phantom::{OptodeConfig, Tissue, VoxelMask, VoxelPhantom};
use crate::rng::Stream;
use crate::transport::PhotonRecordSet;

/// Additive measurement noise level relative to the peak difference signal.
pub const NOISE_LEVEL: f64 = 0.01;

#[derive(Debug, Clone, Copy, Default)]
struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    #[inline]
    fn add(&mut self, v: f64) {
        let y = v - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }

    #[inline]
    fn value(&self) -> f64 {
        self.sum
    }
}

/// A length-2m measurement vector: log-amplitudes first, then phases, both
/// in pair-list order.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementFrame {
    values: DVector<f64>,
    pairs: Vec<(u32, u32)>,
    frequency_hz: f64,
}

impl MeasurementFrame {
    pub fn from_parts(
        values: DVector<f64>,
        pairs: Vec<(u32, u32)>,
        frequency_hz: f64,
    ) -> Result<Self> {
        if values.len() != 2 * pairs.len() {
            return Err(Error::Shape(format!(
                "{} values for {} pairs",
                values.len(),
                pairs.len()
            )));
        }
        Ok(MeasurementFrame {
            values,
            pairs,
            frequency_hz,
        })
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.pairs
    }

    pub fn frequency_hz(&self) -> f64 {
        self.frequency_hz
    }

    pub fn ln_amplitude(&self, pair: usize) -> f64 {
        self.values[pair]
    }

    pub fn phase(&self, pair: usize) -> f64 {
        self.values[self.n_pairs() + pair]
    }

    /// Number of phase rows outside (-pi, pi]; nonzero values mean a
    /// coupling shift has left the principal branch and the linear coupling
    /// model no longer matches a wrapped instrument reading.
    pub fn phase_wrap_count(&self) -> usize {
        (0..self.n_pairs())
            .filter(|&k| {
                let p = self.phase(k);
                !(p > -std::f64::consts::PI && p <= std::f64::consts::PI)
            })
            .count()
    }

    fn check_compatible(&self, other: &MeasurementFrame) -> Result<()> {
        if self.pairs != other.pairs {
            return Err(Error::Shape("frames have different pair lists".into()));
        }
        if self.frequency_hz != other.frequency_hz {
            return Err(Error::Shape(format!(
                "frames have different modulation frequencies ({} vs {})",
                self.frequency_hz, other.frequency_hz
            )));
        }
        Ok(())
    }
}

/// Per-optode coupling amplitudes and phase delays.
///
/// The ideal state has every amplitude at 1 and every phase at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingState {
    pub source_amplitude: Vec<f64>,
    pub detector_amplitude: Vec<f64>,
    pub source_phase: Vec<f64>,
    pub detector_phase: Vec<f64>,
}

impl CouplingState {
    pub fn ideal(n_sources: usize, n_detectors: usize) -> Self {
        CouplingState {
            source_amplitude: vec![1.0; n_sources],
            detector_amplitude: vec![1.0; n_detectors],
            source_phase: vec![0.0; n_sources],
            detector_phase: vec![0.0; n_detectors],
        }
    }

    /// Draw amplitudes from U(amp_low, 1) and phases from U(0, phase_high).
    pub fn sample_uniform(
        stream: &mut Stream,
        n_sources: usize,
        n_detectors: usize,
        amp_low: f64,
        phase_high: f64,
    ) -> Self {
        let mut draw =
            |n: usize, lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| stream.next_range(lo, hi)).collect() };
        CouplingState {
            source_amplitude: draw(n_sources, amp_low, 1.0),
            detector_amplitude: draw(n_detectors, amp_low, 1.0),
            source_phase: draw(n_sources, 0.0, phase_high),
            detector_phase: draw(n_detectors, 0.0, phase_high),
        }
    }

    /// Stacked coupling parameter vector in coupling-Jacobian column order:
    /// source log-amplitudes, detector log-amplitudes, source phases,
    /// detector phases.
    pub fn eta(&self) -> DVector<f64> {
        let ls = self.source_amplitude.len();
        let ld = self.detector_amplitude.len();
        let mut eta = DVector::zeros(2 * (ls + ld));
        for (i, a) in self.source_amplitude.iter().enumerate() {
            eta[i] = a.ln();
        }
        for (j, a) in self.detector_amplitude.iter().enumerate() {
            eta[ls + j] = a.ln();
        }
        for (i, p) in self.source_phase.iter().enumerate() {
            eta[ls + ld + i] = *p;
        }
        for (j, p) in self.detector_phase.iter().enumerate() {
            eta[ls + ld + ls + j] = *p;
        }
        eta
    }
}

/// Replay one source's records into a complex intensity per detector.
///
/// `X + iY` with `X = (1/N) sum |w_p| cos(2 pi f t_p)` and `Y` the sine
/// counterpart, where `|w_p| = exp(-sum_j mu_a_j l_pj)` and `N` is the
/// launched packet count. Detectors that saw no packet give `None`.
pub fn complex_intensity(
    records: &PhotonRecordSet,
    mu_a: &[f64],
    frequency_hz: f64,
    n_detectors: usize,
) -> Vec<Option<Complex<f64>>> {
    let omega = std::f64::consts::TAU * frequency_hz;
    let mut re = vec![Kahan::default(); n_detectors];
    let mut im = vec![Kahan::default(); n_detectors];
    let mut seen = vec![false; n_detectors];
    for record in &records.records {
        let d = record.detector_index as usize;
        let mut exponent = 0.0;
        for &(v, l) in &record.pathlengths {
            exponent += mu_a[v as usize] * l;
        }
        let w = (-exponent).exp();
        let theta = omega * record.time_of_flight;
        re[d].add(w * theta.cos());
        im[d].add(w * theta.sin());
        seen[d] = true;
    }
    let n = records.launched_count as f64;
    (0..n_detectors)
        .map(|d| seen[d].then(|| Complex::new(re[d].value() / n, im[d].value() / n)))
        .collect()
}

/// Convert per-pair complex intensities into a measurement frame.
pub fn measurement_frame(
    intensities: &[Complex<f64>],
    pairs: &[(u32, u32)],
    frequency_hz: f64,
) -> Result<MeasurementFrame> {
    if intensities.len() != pairs.len() {
        return Err(Error::Shape(format!(
            "{} intensities for {} pairs",
            intensities.len(),
            pairs.len()
        )));
    }
    let dead: Vec<(u32, u32)> = pairs
        .iter()
        .zip(intensities)
        .filter_map(|(p, c)| (c.norm_sqr() == 0.0).then_some(*p))
        .collect();
    if !dead.is_empty() {
        return Err(Error::DeadChannels(dead));
    }
    let m = pairs.len();
    let mut values = DVector::zeros(2 * m);
    for (k, c) in intensities.iter().enumerate() {
        values[k] = c.norm_sqr().sqrt().ln();
        values[m + k] = c.im.atan2(c.re);
    }
    MeasurementFrame::from_parts(values, pairs.to_vec(), frequency_hz)
}

/// Replay all sources into a complete measurement frame for the pair list.
pub fn replay_frame(
    record_sets: &[PhotonRecordSet],
    optodes: &OptodeConfig,
    mu_a: &[f64],
) -> Result<MeasurementFrame> {
    let per_source = intensities_by_source(record_sets, optodes, mu_a)?;
    let mut intensities = Vec::with_capacity(optodes.pairs.len());
    let mut dead = Vec::new();
    for &(s, d) in &optodes.pairs {
        match per_source[s as usize][d as usize] {
            Some(c) => intensities.push(c),
            None => {
                dead.push((s, d));
                intensities.push(Complex::new(0.0, 0.0));
            }
        }
    }
    if !dead.is_empty() {
        return Err(Error::DeadChannels(dead));
    }
    measurement_frame(&intensities, &optodes.pairs, optodes.frequency_hz)
}

fn intensities_by_source(
    record_sets: &[PhotonRecordSet],
    optodes: &OptodeConfig,
    mu_a: &[f64],
) -> Result<Vec<Vec<Option<Complex<f64>>>>> {
    if record_sets.len() != optodes.sources.len() {
        return Err(Error::Shape(format!(
            "{} record sets for {} sources",
            record_sets.len(),
            optodes.sources.len()
        )));
    }
    for (i, set) in record_sets.iter().enumerate() {
        if set.source_index as usize != i {
            return Err(Error::Shape(format!(
                "record set {i} carries source index {}",
                set.source_index
            )));
        }
    }
    Ok(record_sets
        .par_iter()
        .map(|set| complex_intensity(set, mu_a, optodes.frequency_hz, optodes.detectors.len()))
        .collect())
}

/// Add per-optode coupling shifts to a frame.
///
/// Amplitude rows gain `ln A_i + ln A_j`; phase rows gain `phi_i + phi_j`.
/// The shift is exactly linear in the stacked coupling parameters and no
/// phase wrap is applied; call [`MeasurementFrame::phase_wrap_count`] to
/// detect shifts that left the principal branch.
pub fn apply_coupling(frame: &MeasurementFrame, state: &CouplingState) -> Result<MeasurementFrame> {
    let m = frame.n_pairs();
    for &(s, d) in frame.pairs() {
        if s as usize >= state.source_amplitude.len()
            || d as usize >= state.detector_amplitude.len()
        {
            return Err(Error::Shape(format!(
                "coupling state does not cover pair ({s}, {d})"
            )));
        }
    }
    let mut values = frame.values.clone();
    for (k, &(s, d)) in frame.pairs().iter().enumerate() {
        values[k] +=
            state.source_amplitude[s as usize].ln() + state.detector_amplitude[d as usize].ln();
        values[m + k] += state.source_phase[s as usize] + state.detector_phase[d as usize];
    }
    MeasurementFrame::from_parts(values, frame.pairs.clone(), frame.frequency_hz)
}

/// Difference data `y = z - z0`.
pub fn difference_data(z: &MeasurementFrame, z0: &MeasurementFrame) -> Result<DVector<f64>> {
    z.check_compatible(z0)?;
    Ok(&z.values - &z0.values)
}

/// Diagonal Gaussian noise model scaled to the difference data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub gamma_ln_amp: f64,
    pub gamma_phase: f64,
    pub n_pairs: usize,
}

impl NoiseModel {
    /// Diagonal of the noise covariance, length 2m.
    pub fn covariance_diagonal(&self) -> DVector<f64> {
        let m = self.n_pairs;
        DVector::from_fn(2 * m, |r, _| {
            if r < m {
                self.gamma_ln_amp * self.gamma_ln_amp
            } else {
                self.gamma_phase * self.gamma_phase
            }
        })
    }
}

/// Add 1% additive Gaussian noise to noiseless difference data.
///
/// The standard deviations are [`NOISE_LEVEL`] times the largest magnitude
/// of the log-amplitude block and of the phase block respectively.
pub fn add_noise(y0: &DVector<f64>, seed: u64) -> Result<(DVector<f64>, NoiseModel)> {
    if y0.len() % 2 != 0 {
        return Err(Error::Shape(format!("odd measurement length {}", y0.len())));
    }
    let m = y0.len() / 2;
    let max_amp = (0..m).map(|k| y0[k].abs()).fold(0.0, f64::max);
    let max_phase = (m..2 * m).map(|k| y0[k].abs()).fold(0.0, f64::max);
    if max_amp == 0.0 || max_phase == 0.0 {
        return Err(Error::Numerical(
            "difference data has an all-zero block; cannot scale noise".into(),
        ));
    }
    let model = NoiseModel {
        gamma_ln_amp: NOISE_LEVEL * max_amp,
        gamma_phase: NOISE_LEVEL * max_phase,
        n_pairs: m,
    };
    let mut stream = Stream::from_key(&[seed, 0x6e6f_6973]);
    let mut y = y0.clone();
    for k in 0..2 * m {
        let gamma = if k < m {
            model.gamma_ln_amp
        } else {
            model.gamma_phase
        };
        y[k] += gamma * stream.next_normal();
    }
    Ok((y, model))
}

/// Exact derivative of the replayed measurements with respect to per-voxel
/// absorption, restricted to the mask columns.
///
/// With `C = X + iY` and `dC_j = -(1/N) sum_p l_pj w_p`, the rows are
/// `d lnA / d mu_j = Re(conj(C) dC_j) / |C|^2` and
/// `d phi / d mu_j = Im(conj(C) dC_j) / |C|^2`.
pub fn absorption_jacobian(
    record_sets: &[PhotonRecordSet],
    optodes: &OptodeConfig,
    mu_a: &[f64],
    mask: &VoxelMask,
) -> Result<DMatrix<f64>> {
    let m = optodes.pairs.len();
    let n_cols = mask.len();
    let omega = std::f64::consts::TAU * optodes.frequency_hz;

    let mut col_map = vec![-1i64; mask.dims().len()];
    for (col, &v) in mask.indices().iter().enumerate() {
        col_map[v as usize] = col as i64;
    }

    if record_sets.len() != optodes.sources.len() {
        return Err(Error::Shape(format!(
            "{} record sets for {} sources",
            record_sets.len(),
            optodes.sources.len()
        )));
    }

    // Detector slots referenced by each source's pairs.
    let detectors_of_source: Vec<Vec<u32>> = (0..optodes.sources.len())
        .map(|s| optodes.pairs_of_source(s as u32).map(|(_, d)| d).collect())
        .collect();

    struct SourceSums {
        /// Complex intensity sums per detector slot (not yet divided by N).
        c: Vec<Option<Complex<f64>>>,
        /// Per (slot, column) sums of l * w * e^{i theta}.
        dre: Vec<f64>,
        dim: Vec<f64>,
    }

    let per_source: Vec<SourceSums> = record_sets
        .par_iter()
        .enumerate()
        .map(|(s, set)| {
            let dets = &detectors_of_source[s];
            let mut slot_of_det = vec![-1i64; optodes.detectors.len()];
            for (k, &d) in dets.iter().enumerate() {
                slot_of_det[d as usize] = k as i64;
            }
            let mut c_re = vec![Kahan::default(); dets.len()];
            let mut c_im = vec![Kahan::default(); dets.len()];
            let mut seen = vec![false; dets.len()];
            let mut dre = vec![Kahan::default(); dets.len() * n_cols];
            let mut dim = vec![Kahan::default(); dets.len() * n_cols];
            for record in &set.records {
                let slot = slot_of_det[record.detector_index as usize];
                if slot < 0 {
                    continue; // detector not paired with this source
                }
                let slot = slot as usize;
                let mut exponent = 0.0;
                for &(v, l) in &record.pathlengths {
                    exponent += mu_a[v as usize] * l;
                }
                let w = (-exponent).exp();
                let theta = omega * record.time_of_flight;
                let wc = w * theta.cos();
                let ws = w * theta.sin();
                c_re[slot].add(wc);
                c_im[slot].add(ws);
                seen[slot] = true;
                let base = slot * n_cols;
                for &(v, l) in &record.pathlengths {
                    let col = col_map[v as usize];
                    if col >= 0 {
                        dre[base + col as usize].add(l * wc);
                        dim[base + col as usize].add(l * ws);
                    }
                }
            }
            SourceSums {
                c: (0..dets.len())
                    .map(|k| seen[k].then(|| Complex::new(c_re[k].value(), c_im[k].value())))
                    .collect(),
                dre: dre.into_iter().map(|k| k.value()).collect(),
                dim: dim.into_iter().map(|k| k.value()).collect(),
            }
        })
        .collect();

    let mut dead = Vec::new();
    let mut jacobian = DMatrix::zeros(2 * m, n_cols);
    for (k, &(s, d)) in optodes.pairs.iter().enumerate() {
        let sums = &per_source[s as usize];
        let slot = detectors_of_source[s as usize]
            .iter()
            .position(|&dd| dd == d)
            .expect("pair detector is registered for its source");
        let Some(c) = sums.c[slot] else {
            dead.push((s, d));
            continue;
        };
        let denom = c.norm_sqr();
        if denom == 0.0 {
            dead.push((s, d));
            continue;
        }
        let base = slot * n_cols;
        for col in 0..n_cols {
            // dC_j = -(S_re + i S_im) / N; the 1/N cancels against |C|^2
            // when C is left unnormalized, so raw sums are used throughout.
            let s_re = sums.dre[base + col];
            let s_im = sums.dim[base + col];
            let re = -(c.re * s_re + c.im * s_im) / denom;
            let im = -(c.re * s_im - c.im * s_re) / denom;
            jacobian[(k, col)] = re;
            jacobian[(m + k, col)] = im;
        }
    }
    if !dead.is_empty() {
        return Err(Error::DeadChannels(dead));
    }
    Ok(jacobian)
}

/// Difference of Jacobians at two baseline levels of one tissue's
/// absorption: `J(base with tissue shifted by delta) - J(base)`, replayed
/// on the same records.
pub fn tissue_difference_jacobian(
    record_sets: &[PhotonRecordSet],
    optodes: &OptodeConfig,
    phantom: &VoxelPhantom,
    base_mu_a: &[f64],
    tissue: Tissue,
    delta: f64,
    mask: &VoxelMask,
) -> Result<DMatrix<f64>> {
    let label = tissue.label();
    if !phantom.labels.iter().any(|&l| l == label) {
        return Err(Error::Config(format!(
            "tissue {tissue:?} is absent from the phantom"
        )));
    }
    let mut shifted = base_mu_a.to_vec();
    for (idx, l) in phantom.labels.iter().enumerate() {
        if *l == label {
            shifted[idx] += delta;
        }
    }
    let j_shifted = absorption_jacobian(record_sets, optodes, &shifted, mask)?;
    let j_base = absorption_jacobian(record_sets, optodes, base_mu_a, mask)?;
    Ok(j_shifted - j_base)
}

/// Primary and nuisance Jacobian blocks over the ROI/RONI split.
#[derive(Debug, Clone)]
pub struct JacobianSet {
    /// 2m x n block over the ROI columns.
    pub j_roi: DMatrix<f64>,
    /// 2m x n-tilde block over the RONI columns.
    pub j_roni: DMatrix<f64>,
    pub roi_voxels: Vec<u32>,
    pub roni_voxels: Vec<u32>,
}

impl JacobianSet {
    /// Split an FOV Jacobian into its ROI and RONI blocks.
    pub fn from_fov_jacobian(
        j_fov: &DMatrix<f64>,
        masks: &crate::phantom::RegionMasks,
    ) -> Result<JacobianSet> {
        let j_roi = restrict_columns(j_fov, masks.fov.indices(), &masks.roi)?;
        let j_roni = restrict_columns(j_fov, masks.fov.indices(), &masks.roni)?;
        Ok(JacobianSet {
            j_roi,
            j_roni,
            roi_voxels: masks.roi.indices().to_vec(),
            roni_voxels: masks.roni.indices().to_vec(),
        })
    }
}

/// Copy the columns of a Jacobian (built over `source_cols`) that belong to
/// a sub-mask, in the sub-mask's own column order.
pub fn restrict_columns(
    jacobian: &DMatrix<f64>,
    source_cols: &[u32],
    target: &VoxelMask,
) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(jacobian.nrows(), target.len());
    for (new_col, &v) in target.indices().iter().enumerate() {
        let old_col = source_cols
            .binary_search(&v)
            .map_err(|_| Error::Shape(format!("voxel {v} missing from the source columns")))?;
        out.set_column(new_col, &jacobian.column(old_col));
    }
    Ok(out)
}
