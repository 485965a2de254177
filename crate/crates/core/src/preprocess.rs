//! Raw HRIRs to normalized dB magnitude fields.
//!
//! The pipeline per subject-ear is: mirror right ears onto the left-ear
//! convention, fold azimuths into `[0, 360)`, evaluate the spectrum of each
//! impulse response on a fixed frequency grid, divide by the RMS magnitude of
//! the equator ring, and convert to dB. Training additionally sees the
//! azimuth-wrapped view produced by [`extend_azimuth_wrap`].

use std::f64::consts::PI;

use ndarray::{Array2, Axis};

use crate::data::{Direction, Ear, EarData, MagnitudeField, ProcessedMagnitudes, SubjectEar};
use crate::error::{Error, Result};

pub const REFERENCE_RATE_HZ: f64 = 44_100.0;
pub const FFT_SIZE: usize = 256;
pub const DEFAULT_BINS: usize = 92;
pub const DEFAULT_EQUATOR_TOL_DEG: f64 = 2.5;
/// Relative floor applied before taking logarithms (-120 dB below the maximum).
pub const DB_FLOOR_RATIO: f64 = 1e-6;
const WRAP_BAND_DEG: f64 = 30.0;

/// Frequencies at which magnitudes are evaluated: bin `k` sits at
/// `k * reference_rate / fft_size`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    pub bins_hz: Vec<f64>,
    pub k_indices: Vec<usize>,
    pub reference_rate_hz: f64,
    pub fft_size: usize,
}

impl FrequencyGrid {
    pub fn from_bins(k_indices: Vec<usize>, reference_rate_hz: f64, fft_size: usize) -> Result<Self> {
        if k_indices.is_empty() || k_indices.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("bin indices must be nonempty and increasing".into()));
        }
        let bins_hz = k_indices
            .iter()
            .map(|&k| k as f64 * reference_rate_hz / fft_size as f64)
            .collect();
        Ok(Self {
            bins_hz,
            k_indices,
            reference_rate_hz,
            fft_size,
        })
    }

    pub fn len(&self) -> usize {
        self.bins_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins_hz.is_empty()
    }
}

/// Bins 1..=92 of a 256-point transform at 44.1 kHz (172 Hz to 15.8 kHz).
pub fn make_frequency_grid() -> FrequencyGrid {
    FrequencyGrid::from_bins((1..=DEFAULT_BINS).collect(), REFERENCE_RATE_HZ, FFT_SIZE)
        .expect("default grid is valid")
}

/// Positive remainder modulo 360.
pub fn canonicalize_azimuth(theta_deg: f64) -> f64 {
    let r = theta_deg.rem_euclid(360.0);
    // rem_euclid of a tiny negative number rounds up to exactly 360
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// Magnitude of the discrete-time Fourier transform of every HRIR row at the
/// grid frequencies, using the ear's native sample rate.
pub fn hrir_to_magnitude(ear: &SubjectEar, grid: &FrequencyGrid) -> Result<Array2<f64>> {
    let hrirs = ear.hrirs()?;
    dtft_magnitude(hrirs, ear.sample_rate_hz, &grid.bins_hz)
}

pub(crate) fn dtft_magnitude(hrirs: &Array2<f32>, fs: f64, freqs_hz: &[f64]) -> Result<Array2<f64>> {
    if let Some(&f) = freqs_hz.iter().find(|&&f| f >= fs / 2.0) {
        return Err(Error::Nyquist {
            freq_hz: f,
            sample_rate_hz: fs,
        });
    }
    let taps = hrirs.ncols();
    if taps == 0 {
        return Err(Error::Invariant("HRIR length must be at least 1".into()));
    }
    let k = freqs_hz.len();
    let mut cos_t = Array2::<f64>::zeros((taps, k));
    let mut sin_t = Array2::<f64>::zeros((taps, k));
    for (j, &f) in freqs_hz.iter().enumerate() {
        let cycles_per_sample = f / fs;
        for n in 0..taps {
            // reduce the phase to one cycle before scaling by 2pi
            let phase = 2.0 * PI * (cycles_per_sample * n as f64).fract();
            cos_t[[n, j]] = phase.cos();
            sin_t[[n, j]] = phase.sin();
        }
    }
    let h = hrirs.mapv(f64::from);
    let re = h.dot(&cos_t);
    let im = h.dot(&sin_t);
    Ok(ndarray::Zip::from(&re).and(&im).map_collect(|&a, &b| a.hypot(b)))
}

/// Maps a right ear onto the left-ear convention with `theta' = 360 - theta`.
/// Applying it to an already mirrored ear undoes the mirroring.
pub fn mirror_right_ear(ear: &SubjectEar) -> Result<SubjectEar> {
    let relabeled = match ear.ear {
        Ear::Right => Ear::MirroredRight,
        Ear::MirroredRight => Ear::Right,
        Ear::Left => {
            return Err(Error::Invariant(format!(
                "{} is a left ear and cannot be mirrored",
                ear.describe()
            )))
        }
    };
    let mut out = ear.clone();
    out.ear = relabeled;
    for d in &mut out.directions {
        d.azimuth_deg = canonicalize_azimuth(360.0 - d.azimuth_deg);
    }
    Ok(out)
}

/// A magnitude field with wrap-around duplicates appended for training.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedField {
    pub field: MagnitudeField,
    /// True for rows that duplicate an original row across the 0/360 seam.
    pub duplicate: Vec<bool>,
}

impl ExtendedField {
    /// The original rows, in their original order.
    pub fn strip(&self) -> MagnitudeField {
        let keep: Vec<usize> = (0..self.duplicate.len()).filter(|&i| !self.duplicate[i]).collect();
        self.field.select_rows(&keep)
    }
}

/// Repeats rows with azimuth in (0, 30) at +360 and rows in (330, 360) at -360,
/// so training sees the field over (-30, 390).
pub fn extend_azimuth_wrap(field: &MagnitudeField) -> ExtendedField {
    let mut extra_rows = Vec::new();
    let mut extra_dirs = Vec::new();
    for (i, d) in field.directions.iter().enumerate() {
        let az = d.azimuth_deg;
        if az > 0.0 && az < WRAP_BAND_DEG {
            extra_rows.push(i);
            extra_dirs.push(Direction { azimuth_deg: az + 360.0, ..*d });
        } else if az > 360.0 - WRAP_BAND_DEG && az < 360.0 {
            extra_rows.push(i);
            extra_dirs.push(Direction { azimuth_deg: az - 360.0, ..*d });
        }
    }
    let n = field.n_locations();
    let mut directions = field.directions.clone();
    directions.extend(extra_dirs);
    let dup_values = field.values_db.select(Axis(0), &extra_rows);
    let values_db = ndarray::concatenate(Axis(0), &[field.values_db.view(), dup_values.view()])
        .expect("column counts agree");
    let mut duplicate = vec![false; n];
    duplicate.resize(n + extra_rows.len(), true);
    ExtendedField {
        field: MagnitudeField {
            directions,
            values_db,
            freq_grid_hz: field.freq_grid_hz.clone(),
        },
        duplicate,
    }
}

/// The directions used as the equator, sorted by azimuth, with their
/// azimuthal quadrature widths.
#[derive(Debug, Clone, PartialEq)]
pub struct EquatorRing {
    pub ring_indices: Vec<usize>,
    pub azimuths_deg: Vec<f64>,
    pub delta_theta_deg: Vec<f64>,
}

/// Picks the directions within `tol_deg` of zero elevation (or, failing that,
/// the ring of smallest |elevation|) and assigns each a circular Voronoi width.
pub fn find_equator_ring(directions: &[Direction], tol_deg: f64) -> Result<EquatorRing> {
    if directions.is_empty() {
        return Err(Error::Invariant("no directions".into()));
    }
    let mut picked: Vec<usize> = (0..directions.len())
        .filter(|&i| directions[i].elevation_deg.abs() <= tol_deg)
        .collect();
    if picked.is_empty() {
        let min_abs = directions
            .iter()
            .map(|d| d.elevation_deg.abs())
            .fold(f64::INFINITY, f64::min);
        picked = (0..directions.len())
            .filter(|&i| (directions[i].elevation_deg.abs() - min_abs).abs() <= 1e-9)
            .collect();
        log::debug!(
            "no direction within {tol_deg} deg of the equator; using |elevation| = {min_abs}"
        );
    }
    if picked.len() < 3 {
        return Err(Error::Degenerate(format!(
            "equator ring has {} points, need at least 3",
            picked.len()
        )));
    }
    let mut ring: Vec<(f64, usize)> = picked
        .iter()
        .map(|&i| (canonicalize_azimuth(directions[i].azimuth_deg), i))
        .collect();
    ring.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let azimuths_deg: Vec<f64> = ring.iter().map(|r| r.0).collect();
    let delta_theta_deg = voronoi_widths(&azimuths_deg);
    Ok(EquatorRing {
        ring_indices: ring.iter().map(|r| r.1).collect(),
        azimuths_deg,
        delta_theta_deg,
    })
}

/// Half the circular gap to each neighbour, summed. Points sharing an azimuth
/// split their cell evenly. `sorted` must be ascending within `[0, 360)`.
fn voronoi_widths(sorted: &[f64]) -> Vec<f64> {
    let mut unique: Vec<(f64, usize)> = Vec::new();
    for &a in sorted {
        match unique.last_mut() {
            Some((u, count)) if *u == a => *count += 1,
            _ => unique.push((a, 1)),
        }
    }
    let m = unique.len();
    let mut cell = vec![0.0; m];
    for i in 0..m {
        let prev = unique[(i + m - 1) % m].0;
        let next = unique[(i + 1) % m].0;
        let gap_prev = if m == 1 { 360.0 } else { (unique[i].0 - prev).rem_euclid(360.0) };
        let gap_next = if m == 1 { 360.0 } else { (next - unique[i].0).rem_euclid(360.0) };
        cell[i] = 0.5 * (gap_prev + gap_next);
    }
    unique
        .iter()
        .zip(cell)
        .flat_map(|(&(_, count), c)| std::iter::repeat_n(c / count as f64, count))
        .collect()
}

/// Quadrature-weighted mean-square linear magnitude on the equator ring.
pub fn equator_energy(linear: &Array2<f64>, ring: &EquatorRing) -> f64 {
    let k = linear.ncols() as f64;
    let mut acc = 0.0;
    for (&row, &dt) in ring.ring_indices.iter().zip(&ring.delta_theta_deg) {
        let sq: f64 = linear.row(row).iter().map(|v| v * v).sum();
        acc += sq * dt;
    }
    acc / (360.0 * k)
}

/// Divides every entry by the RMS equator magnitude.
pub fn normalize_equator(linear: &Array2<f64>, ring: &EquatorRing) -> Result<Array2<f64>> {
    if let Some(&bad) = ring.ring_indices.iter().find(|&&i| i >= linear.nrows()) {
        return Err(Error::Shape(format!(
            "ring index {bad} out of range for {} rows",
            linear.nrows()
        )));
    }
    normalize_by_energy(linear, equator_energy(linear, ring))
}

fn normalize_by_energy(linear: &Array2<f64>, energy: f64) -> Result<Array2<f64>> {
    if !(energy.is_finite() && energy > 0.0) {
        return Err(Error::Numeric(format!("equator energy is {energy}")));
    }
    let scale = energy.sqrt();
    Ok(linear.mapv(|v| v / scale))
}

/// `20 log10(max(x, floor))` with the floor at 1e-6 of the matrix maximum.
pub fn to_db(linear: &Array2<f64>) -> Array2<f64> {
    let max = linear.iter().copied().fold(0.0_f64, f64::max);
    let floor = (DB_FLOOR_RATIO * max).max(f64::MIN_POSITIVE);
    linear.mapv(|x| 20.0 * x.max(floor).log10())
}

pub fn db_to_linear(db: &Array2<f64>) -> Array2<f64> {
    db.mapv(|v| 10f64.powf(v / 20.0))
}

/// Whether the equator energy is computed per subject-ear or pooled over a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormalizationScope {
    #[default]
    PerEar,
    PerDatabase,
}

#[derive(Debug, Clone)]
pub struct PreprocessOptions {
    pub grid: FrequencyGrid,
    pub equator_tol_deg: f64,
    pub scope: NormalizationScope,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            grid: make_frequency_grid(),
            equator_tol_deg: DEFAULT_EQUATOR_TOL_DEG,
            scope: NormalizationScope::PerEar,
        }
    }
}

/// Mirrors (if right), canonicalizes and transforms one ear to linear
/// magnitudes, without normalization.
fn linear_stage(ear: &SubjectEar, grid: &FrequencyGrid) -> Result<(SubjectEar, Array2<f64>)> {
    let mut ear = if ear.ear == Ear::Right {
        mirror_right_ear(ear)?
    } else {
        ear.clone()
    };
    for d in &mut ear.directions {
        *d = d.canonical();
    }
    let mags = hrir_to_magnitude(&ear, grid)?;
    Ok((ear, mags))
}

fn finish(mut ear: SubjectEar, db: Array2<f64>, grid: &FrequencyGrid) -> SubjectEar {
    ear.data = EarData::Processed(ProcessedMagnitudes {
        values_db: db,
        freq_grid_hz: grid.bins_hz.clone(),
    });
    ear
}

/// Runs the full per-ear pipeline and returns a processed subject-ear.
pub fn process_ear(ear: &SubjectEar, opts: &PreprocessOptions) -> Result<SubjectEar> {
    let (ear, mags) = linear_stage(ear, &opts.grid)?;
    let ring = find_equator_ring(&ear.directions, opts.equator_tol_deg)?;
    let norm = normalize_equator(&mags, &ring)?;
    Ok(finish(ear, to_db(&norm), &opts.grid))
}

/// Processes a set of ears from one dataset, honouring the normalization scope.
pub fn process_ears(ears: &[SubjectEar], opts: &PreprocessOptions) -> Result<Vec<SubjectEar>> {
    match opts.scope {
        NormalizationScope::PerEar => ears.iter().map(|e| process_ear(e, opts)).collect(),
        NormalizationScope::PerDatabase => {
            let staged = ears
                .iter()
                .map(|e| linear_stage(e, &opts.grid))
                .collect::<Result<Vec<_>>>()?;
            let mut energies = Vec::with_capacity(staged.len());
            for (e, m) in &staged {
                let ring = find_equator_ring(&e.directions, opts.equator_tol_deg)?;
                energies.push(equator_energy(m, &ring));
            }
            let pooled = energies.iter().sum::<f64>() / energies.len().max(1) as f64;
            staged
                .into_iter()
                .map(|(e, m)| Ok(finish(e, to_db(&normalize_by_energy(&m, pooled)?), &opts.grid)))
                .collect()
        }
    }
}
