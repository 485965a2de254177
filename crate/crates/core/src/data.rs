//! Canonical data model for HRTF datasets and the portable HRDF archive.
//!
//! An HRDF file is little-endian throughout:
//!
//! ```text
//! "HRDF" | version u32 = 1 | name_len u16 | name (UTF-8) | sample_rate f64 | n_ears u32
//! per ear:
//!   id_len u16 | id (UTF-8) | ear u8 (0 = left, 1 = right) | n_loc u32 | n_taps u32
//!   n_loc x (azimuth f64, elevation f64, distance f64)
//!   n_loc x n_taps f32 samples, row-major
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::preprocess::canonicalize_azimuth;

pub const ARCHIVE_MAGIC: &[u8; 4] = b"HRDF";
pub const ARCHIVE_VERSION: u32 = 1;

/// A source direction in degrees. Distance is carried for bookkeeping only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub distance_m: f64,
}

impl Direction {
    pub fn new(azimuth_deg: f64, elevation_deg: f64) -> Self {
        Self {
            azimuth_deg,
            elevation_deg,
            distance_m: 1.0,
        }
    }

    pub fn with_distance(azimuth_deg: f64, elevation_deg: f64, distance_m: f64) -> Self {
        Self {
            azimuth_deg,
            elevation_deg,
            distance_m,
        }
    }

    /// Same direction with azimuth folded into `[0, 360)`.
    pub fn canonical(self) -> Self {
        Self {
            azimuth_deg: canonicalize_azimuth(self.azimuth_deg),
            ..self
        }
    }

    /// Key used for identity checks: canonical azimuth and elevation bit patterns.
    pub(crate) fn key(&self) -> (u64, u64) {
        let c = self.canonical();
        // fold -0.0 onto 0.0
        ((c.azimuth_deg + 0.0).to_bits(), (c.elevation_deg + 0.0).to_bits())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ear {
    Left,
    Right,
    /// A right ear whose azimuths were mirrored so it can be treated as a left ear.
    MirroredRight,
}

impl Ear {
    pub fn label(self) -> &'static str {
        match self {
            Ear::Left => "L",
            Ear::Right => "R",
            Ear::MirroredRight => "R*",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Raw,
    Processed,
}

/// Processed magnitudes: `L x K` dB values on a shared frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedMagnitudes {
    pub values_db: Array2<f64>,
    pub freq_grid_hz: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EarData {
    /// `L x T` impulse responses.
    Raw(Array2<f32>),
    Processed(ProcessedMagnitudes),
}

/// One ear of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectEar {
    pub subject_id: String,
    pub dataset_name: String,
    pub ear: Ear,
    pub sample_rate_hz: f64,
    pub directions: Vec<Direction>,
    pub data: EarData,
}

impl SubjectEar {
    pub fn new_raw(
        dataset_name: impl Into<String>,
        subject_id: impl Into<String>,
        ear: Ear,
        sample_rate_hz: f64,
        directions: Vec<Direction>,
        hrirs: Array2<f32>,
    ) -> Result<Self> {
        let ear = Self {
            subject_id: subject_id.into(),
            dataset_name: dataset_name.into(),
            ear,
            sample_rate_hz,
            directions,
            data: EarData::Raw(hrirs),
        };
        ear.validate()?;
        Ok(ear)
    }

    pub fn stage(&self) -> Stage {
        match self.data {
            EarData::Raw(_) => Stage::Raw,
            EarData::Processed(_) => Stage::Processed,
        }
    }

    pub fn n_locations(&self) -> usize {
        self.directions.len()
    }

    pub fn hrirs(&self) -> Result<&Array2<f32>> {
        match &self.data {
            EarData::Raw(h) => Ok(h),
            EarData::Processed(_) => Err(Error::Stage(format!(
                "{} has no raw HRIRs",
                self.describe()
            ))),
        }
    }

    pub fn magnitudes(&self) -> Result<&ProcessedMagnitudes> {
        match &self.data {
            EarData::Processed(p) => Ok(p),
            EarData::Raw(_) => Err(Error::Stage(format!(
                "{} has not been processed",
                self.describe()
            ))),
        }
    }

    /// Copies the processed magnitudes out as a [`MagnitudeField`].
    pub fn magnitude_field(&self) -> Result<MagnitudeField> {
        let p = self.magnitudes()?;
        MagnitudeField::new(
            self.directions.clone(),
            p.values_db.clone(),
            p.freq_grid_hz.clone(),
        )
    }

    pub fn describe(&self) -> String {
        format!(
            "{}/{}/{}",
            self.dataset_name,
            self.subject_id,
            self.ear.label()
        )
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.directions.len();
        if l == 0 {
            return Err(Error::Invariant(format!(
                "{} has no directions",
                self.describe()
            )));
        }
        let rows = match &self.data {
            EarData::Raw(h) => {
                if h.ncols() == 0 {
                    return Err(Error::Invariant(format!(
                        "{} has zero-length HRIRs",
                        self.describe()
                    )));
                }
                h.nrows()
            }
            EarData::Processed(p) => p.values_db.nrows(),
        };
        if rows != l {
            return Err(Error::Invariant(format!(
                "{}: {} directions but {} data rows",
                self.describe(),
                l,
                rows
            )));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::Invariant(format!(
                "{}: sample rate {} is not positive",
                self.describe(),
                self.sample_rate_hz
            )));
        }
        let mut seen = HashSet::with_capacity(l);
        for d in &self.directions {
            if !(d.azimuth_deg.is_finite() && d.elevation_deg.is_finite()) {
                return Err(Error::Invariant(format!(
                    "{}: non-finite direction {:?}",
                    self.describe(),
                    d
                )));
            }
            if !(-90.0..=90.0).contains(&d.elevation_deg) {
                return Err(Error::Invariant(format!(
                    "{}: elevation {} outside [-90, 90]",
                    self.describe(),
                    d.elevation_deg
                )));
            }
            if !seen.insert(d.key()) {
                return Err(Error::Invariant(format!(
                    "{}: duplicate direction ({}, {})",
                    self.describe(),
                    d.azimuth_deg,
                    d.elevation_deg
                )));
            }
        }
        Ok(())
    }

    fn distinct_distances(&self) -> usize {
        let mut set: Vec<u64> = self.directions.iter().map(|d| d.distance_m.to_bits()).collect();
        set.sort_unstable();
        set.dedup();
        set.len()
    }
}

/// A whole dataset: every subject-ear shares one sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetArchive {
    pub dataset_name: String,
    pub sample_rate_hz: f64,
    pub subject_ears: Vec<SubjectEar>,
}

impl DatasetArchive {
    pub fn new(
        dataset_name: impl Into<String>,
        sample_rate_hz: f64,
        subject_ears: Vec<SubjectEar>,
    ) -> Result<Self> {
        let a = Self {
            dataset_name: dataset_name.into(),
            sample_rate_hz,
            subject_ears,
        };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if self.subject_ears.is_empty() {
            return Err(Error::Invariant(format!(
                "archive {} has no subject-ears",
                self.dataset_name
            )));
        }
        for e in &self.subject_ears {
            if e.sample_rate_hz != self.sample_rate_hz {
                return Err(Error::Invariant(format!(
                    "{} sample rate {} differs from archive rate {}",
                    e.describe(),
                    e.sample_rate_hz,
                    self.sample_rate_hz
                )));
            }
            if e.dataset_name != self.dataset_name {
                return Err(Error::Invariant(format!(
                    "{} belongs to dataset {}, not {}",
                    e.describe(),
                    e.dataset_name,
                    self.dataset_name
                )));
            }
            e.validate()?;
        }
        Ok(())
    }

    pub fn n_subjects(&self) -> usize {
        let ids: HashSet<&str> = self.subject_ears.iter().map(|e| e.subject_id.as_str()).collect();
        ids.len()
    }

    /// Exact on-disk size in bytes of this archive.
    pub fn encoded_len(&self) -> usize {
        let header = 4 + 4 + 2 + self.dataset_name.len() + 8 + 4;
        header
            + self
                .subject_ears
                .iter()
                .map(|e| {
                    let taps = e.hrirs().map(|h| h.ncols()).unwrap_or(0);
                    2 + e.subject_id.len() + 1 + 4 + 4 + e.n_locations() * (24 + 4 * taps)
                })
                .sum::<usize>()
    }
}

/// `L x K` dB magnitudes with their directions and frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeField {
    pub directions: Vec<Direction>,
    pub values_db: Array2<f64>,
    pub freq_grid_hz: Vec<f64>,
}

impl MagnitudeField {
    pub fn new(
        directions: Vec<Direction>,
        values_db: Array2<f64>,
        freq_grid_hz: Vec<f64>,
    ) -> Result<Self> {
        if directions.len() != values_db.nrows() {
            return Err(Error::Shape(format!(
                "{} directions vs {} rows",
                directions.len(),
                values_db.nrows()
            )));
        }
        if freq_grid_hz.len() != values_db.ncols() {
            return Err(Error::Shape(format!(
                "{} frequencies vs {} columns",
                freq_grid_hz.len(),
                values_db.ncols()
            )));
        }
        if freq_grid_hz.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invariant("frequency grid not strictly increasing".into()));
        }
        Ok(Self {
            directions,
            values_db,
            freq_grid_hz,
        })
    }

    pub fn n_locations(&self) -> usize {
        self.directions.len()
    }

    pub fn n_bins(&self) -> usize {
        self.freq_grid_hz.len()
    }

    /// Sub-field made of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> MagnitudeField {
        MagnitudeField {
            directions: rows.iter().map(|&r| self.directions[r]).collect(),
            values_db: self.values_db.select(ndarray::Axis(0), rows),
            freq_grid_hz: self.freq_grid_hz.clone(),
        }
    }
}

/// Concatenates the subject-ears of several archives, rejecting repeated
/// `(dataset, subject, ear)` triples.
pub fn merge_archives(archives: &[DatasetArchive]) -> Result<Vec<SubjectEar>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for a in archives {
        a.validate()?;
        for e in &a.subject_ears {
            let key = (e.dataset_name.clone(), e.subject_id.clone(), e.ear);
            if !seen.insert(key) {
                return Err(Error::DuplicateEar {
                    dataset: e.dataset_name.clone(),
                    subject: e.subject_id.clone(),
                    ear: e.ear.label().to_string(),
                });
            }
            out.push(e.clone());
        }
    }
    Ok(out)
}

pub fn save_archive(archive: &DatasetArchive, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_archive(archive)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_archive(path: impl AsRef<Path>) -> Result<DatasetArchive> {
    let bytes = fs::read(path)?;
    decode_archive(&bytes)
}

pub fn encode_archive(archive: &DatasetArchive) -> Result<Vec<u8>> {
    archive.validate()?;
    let mut out = Vec::with_capacity(archive.encoded_len());
    out.extend_from_slice(ARCHIVE_MAGIC);
    out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
    put_str(&mut out, &archive.dataset_name)?;
    out.extend_from_slice(&archive.sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&len_u32(archive.subject_ears.len())?.to_le_bytes());
    for e in &archive.subject_ears {
        let h = e.hrirs()?;
        put_str(&mut out, &e.subject_id)?;
        out.push(match e.ear {
            Ear::Left => 0,
            Ear::Right => 1,
            Ear::MirroredRight => {
                return Err(Error::Invariant(format!(
                    "{}: mirrored ears cannot be archived",
                    e.describe()
                )))
            }
        });
        out.extend_from_slice(&len_u32(e.n_locations())?.to_le_bytes());
        out.extend_from_slice(&len_u32(h.ncols())?.to_le_bytes());
        for d in &e.directions {
            out.extend_from_slice(&d.azimuth_deg.to_le_bytes());
            out.extend_from_slice(&d.elevation_deg.to_le_bytes());
            out.extend_from_slice(&d.distance_m.to_le_bytes());
        }
        for v in h.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_archive(bytes: &[u8]) -> Result<DatasetArchive> {
    let mut r = ByteReader::new(bytes);
    let magic = r.take(4)?;
    if magic != ARCHIVE_MAGIC {
        return Err(Error::BadMagic {
            offset: 0,
            expected: "HRDF",
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let version_at = r.offset();
    let version = r.u32()?;
    if version != ARCHIVE_VERSION {
        return Err(Error::UnsupportedVersion {
            offset: version_at,
            version,
        });
    }
    let dataset_name = r.string()?;
    let sample_rate_hz = r.f64()?;
    let n_ears = r.u32()? as usize;
    let mut subject_ears = Vec::with_capacity(n_ears.min(1 << 16));
    for _ in 0..n_ears {
        let ear_at = r.offset();
        let subject_id = r.string()?;
        let ear_byte_at = r.offset();
        let ear = match r.u8()? {
            0 => Ear::Left,
            1 => Ear::Right,
            b => {
                return Err(Error::Corrupt {
                    offset: ear_byte_at,
                    msg: format!("ear tag {b} is neither 0 nor 1"),
                })
            }
        };
        let n_loc = r.u32()? as usize;
        let n_taps = r.u32()? as usize;
        let needed = n_loc.saturating_mul(n_taps.saturating_mul(4).saturating_add(24));
        r.require(needed)?;
        let directions = (0..n_loc)
            .map(|_| {
                Ok(Direction {
                    azimuth_deg: r.f64()?,
                    elevation_deg: r.f64()?,
                    distance_m: r.f64()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let samples = (0..n_loc * n_taps).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        let hrirs = Array2::from_shape_vec((n_loc, n_taps), samples)
            .map_err(|e| Error::Shape(e.to_string()))?;
        let se = SubjectEar {
            subject_id,
            dataset_name: dataset_name.clone(),
            ear,
            sample_rate_hz,
            directions,
            data: EarData::Raw(hrirs),
        };
        se.validate().map_err(|e| Error::Corrupt {
            offset: ear_at,
            msg: e.to_string(),
        })?;
        if se.distinct_distances() > 1 {
            log::warn!(
                "{} carries {} distinct source distances; distance is ignored",
                se.describe(),
                se.distinct_distances()
            );
        }
        subject_ears.push(se);
    }
    if r.offset() as usize != bytes.len() {
        return Err(Error::Corrupt {
            offset: r.offset(),
            msg: format!("{} trailing bytes", bytes.len() - r.offset() as usize),
        });
    }
    let archive = DatasetArchive {
        dataset_name,
        sample_rate_hz,
        subject_ears,
    };
    archive.validate().map_err(|e| Error::Corrupt {
        offset: r.offset(),
        msg: e.to_string(),
    })?;
    Ok(archive)
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Invariant(format!("length {n} exceeds u32")))
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let n = u16::try_from(s.len())
        .map_err(|_| Error::Invariant(format!("string of {} bytes exceeds u16", s.len())))?;
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn offset(&self) -> u64 {
        self.pos as u64
    }

    fn require(&self, n: usize) -> Result<()> {
        let left = self.bytes.len() - self.pos;
        if n > left {
            return Err(Error::Truncated {
                offset: self.pos as u64,
                needed: n - left,
            });
        }
        Ok(())
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        self.require(n)?;
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn string(&mut self) -> Result<String> {
        let at = self.offset();
        let n = u16::from_le_bytes(self.array()?) as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|e| Error::Corrupt {
            offset: at,
            msg: format!("invalid UTF-8: {e}"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ear(id: &str, side: Ear, n_loc: usize, n_taps: usize) -> SubjectEar {
        let dirs = (0..n_loc)
            .map(|i| Direction::new(i as f64 * 360.0 / n_loc as f64, 0.0))
            .collect();
        let h = Array2::from_shape_fn((n_loc, n_taps), |(l, t)| (l * 31 + t) as f32 * 0.01 - 0.3);
        SubjectEar::new_raw("toy", id, side, 48000.0, dirs, h).unwrap()
    }

    #[test]
    fn single_location_round_trip_is_bit_exact() {
        let mut e = ear("s1", Ear::Left, 1, 256);
        if let EarData::Raw(h) = &mut e.data {
            h[[0, 3]] = f32::from_bits(0x3f80_0001);
            h[[0, 4]] = -0.0;
        }
        let a = DatasetArchive::new("toy", 48000.0, vec![e]).unwrap();
        let bytes = encode_archive(&a).unwrap();
        let back = decode_archive(&bytes).unwrap();
        let (h0, h1) = (a.subject_ears[0].hrirs().unwrap(), back.subject_ears[0].hrirs().unwrap());
        assert!(h0.iter().zip(h1.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a, back);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let a = DatasetArchive::new("toy", 48000.0, vec![ear("s", Ear::Left, 2, 4)]).unwrap();
        let mut bytes = encode_archive(&a).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        match decode_archive(&bytes) {
            Err(Error::BadMagic { offset: 0, found, .. }) => assert_eq!(found, "XXXX"),
            other => panic!("expected bad magic, got {other:?}"),
        }
    }

    #[test]
    fn unsupported_version_reports_offset() {
        let a = DatasetArchive::new("toy", 48000.0, vec![ear("s", Ear::Left, 2, 4)]).unwrap();
        let mut bytes = encode_archive(&a).unwrap();
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            decode_archive(&bytes),
            Err(Error::UnsupportedVersion { offset: 4, version: 7 })
        ));
    }

    #[test]
    fn truncation_is_reported_with_offset() {
        let a = DatasetArchive::new("toy", 48000.0, vec![ear("s", Ear::Left, 3, 8)]).unwrap();
        let bytes = encode_archive(&a).unwrap();
        let cut = &bytes[..bytes.len() - 5];
        match decode_archive(cut) {
            Err(Error::Truncated { offset, needed }) => {
                assert!(offset as usize <= cut.len());
                assert!(needed > 0);
            }
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn empty_archive_cannot_be_saved() {
        let a = DatasetArchive {
            dataset_name: "none".into(),
            sample_rate_hz: 44100.0,
            subject_ears: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            save_archive(&a, dir.path().join("x.hrdf")),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn file_size_matches_layout() {
        let a = DatasetArchive::new(
            "toy",
            48000.0,
            vec![ear("alpha", Ear::Left, 5, 16), ear("beta", Ear::Right, 3, 7)],
        )
        .unwrap();
        // header: magic 4 + version 4 + (2 + 3) name + rate 8 + count 4 = 25
        // alpha: 2 + 5 + 1 + 4 + 4 + 5*24 + 5*16*4 = 456
        // beta:  2 + 4 + 1 + 4 + 4 + 3*24 + 3*7*4 = 171
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("two.hrdf");
        save_archive(&a, &p).unwrap();
        assert_eq!(fs::metadata(&p).unwrap().len(), 25 + 456 + 171);
        assert_eq!(a.encoded_len(), 652);
    }

    #[test]
    fn duplicate_direction_violates_invariant() {
        let dirs = vec![Direction::new(-30.0, 0.0), Direction::new(330.0, 0.0)];
        let h = Array2::zeros((2, 4));
        assert!(SubjectEar::new_raw("d", "s", Ear::Left, 44100.0, dirs, h).is_err());
    }

    #[test]
    fn merge_rejects_duplicate_triple() {
        let a = DatasetArchive::new("toy", 48000.0, vec![ear("s", Ear::Left, 2, 4)]).unwrap();
        assert!(matches!(
            merge_archives(&[a.clone(), a.clone()]),
            Err(Error::DuplicateEar { .. })
        ));
        let one = merge_archives(std::slice::from_ref(&a)).unwrap();
        assert_eq!(one, a.subject_ears);
    }
}
