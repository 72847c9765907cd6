//! Labeled probe datasets and their line-delimited file format.
//!
//! A dataset file is UTF-8 text. The first line is a JSON header carrying the
//! schema tag, sensor parameters and every top/bottom pair with its grid and
//! displacement range. Each following line is one JSON sample. Floating point
//! observations are rounded to 9 significant digits when generated, so
//! writing and reading a dataset reproduces it exactly.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{ground_truth_patch, GeometryError, GridSpec, PatchMask, Point2, Shape2};
use crate::rng::derive_seed;
use crate::sensor_sim::{simulate_probe, ProbeObservation, SensorError, SensorParams};
use crate::stability::ground_truth_stable;

pub const DATASET_SCHEMA: &str = "tacstack-dataset";
pub const DATASET_VERSION: u32 = 1;
/// Draws per displacement before a range is declared contact-free.
pub const MAX_REJECTION_ATTEMPTS: usize = 10_000;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid displacement range: {0}")]
    InvalidRange(String),
    #[error("no contact between {top} and {bottom} after {attempts} draws")]
    NoContact {
        top: String,
        bottom: String,
        attempts: usize,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Load { line: usize, message: String },
}

impl DatasetError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        DatasetError::Load {
            line,
            message: message.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisplacementRange {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl DisplacementRange {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self, DatasetError> {
        let r = Self {
            x_min,
            x_max,
            y_min,
            y_max,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn symmetric(half_x: f64, half_y: f64) -> Result<Self, DatasetError> {
        Self::new(-half_x, half_x, -half_y, half_y)
    }

    /// `±0.6 (r_top + r_bottom)` on both axes, with `r` the bounding radius of each face.
    pub fn default_for(top: &Shape2, bottom: &Shape2) -> Self {
        let h = 0.6 * (top.bounding_radius() + bottom.bounding_radius());
        Self {
            x_min: -h,
            x_max: h,
            y_min: -h,
            y_max: h,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let vals = [self.x_min, self.x_max, self.y_min, self.y_max];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(DatasetError::InvalidRange("non-finite bound".into()));
        }
        if self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(DatasetError::InvalidRange(format!(
                "need min < max, got x [{}, {}] y [{}, {}]",
                self.x_min, self.x_max, self.y_min, self.y_max
            )));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point2 {
        Point2::new(
            rng.random_range(self.x_min..self.x_max),
            rng.random_range(self.y_min..self.y_max),
        )
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }
}

fn has_contact(top: &Shape2, bottom: &Shape2, offset: Point2, grid: &GridSpec) -> bool {
    grid.centers().any(|q| top.contains(q) && bottom.contains(q + offset))
}

/// Uniform draw from `range` conditioned on a non-empty contact patch.
/// `None` when [`MAX_REJECTION_ATTEMPTS`] draws all miss.
pub fn sample_contact_displacement(
    top: &Shape2,
    bottom: &Shape2,
    range: &DisplacementRange,
    grid: &GridSpec,
    seed: u64,
) -> Option<Point2> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..MAX_REJECTION_ATTEMPTS)
        .map(|_| range.sample(&mut rng))
        .find(|&d| has_contact(top, bottom, d, grid))
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PairId {
    pub top: String,
    pub bottom: String,
}

impl std::fmt::Display for PairId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.top, self.bottom)
    }
}

/// A grasped (top) face probing against a bottom face.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub id: PairId,
    pub top: Shape2,
    pub bottom: Shape2,
    /// CoM projection in the grasped-object frame.
    pub com: Point2,
    pub range: DisplacementRange,
    /// Patch grid in the grasped-object frame.
    pub grid: GridSpec,
}

impl Pair {
    pub fn new(
        top_name: &str,
        top: Shape2,
        bottom_name: &str,
        bottom: Shape2,
        com: Point2,
        range: Option<DisplacementRange>,
        spacing: f64,
    ) -> Result<Self, DatasetError> {
        let range = range.unwrap_or_else(|| DisplacementRange::default_for(&top, &bottom));
        range.validate()?;
        if !com.is_finite() {
            return Err(GeometryError::NonFinite("com").into());
        }
        let grid = GridSpec::for_shape(&top, spacing)?;
        Ok(Self {
            id: PairId {
                top: top_name.to_string(),
                bottom: bottom_name.to_string(),
            },
            top,
            bottom,
            com,
            range,
            grid,
        })
    }

    pub fn truth(&self, offset: Point2) -> PatchMask {
        ground_truth_patch(&self.top, &self.bottom, offset, &self.grid)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub pair_id: PairId,
    /// Grasped-object origin in the bottom-object frame, mm.
    pub displacement: Point2,
    pub obs: ProbeObservation,
    pub truth: PatchMask,
    pub stable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub schema: String,
    pub version: u32,
    pub seed: u64,
    pub n_per_pair: usize,
    pub params: SensorParams,
    pub pairs: Vec<Pair>,
    /// Hash of the run configuration that produced the file, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn pair(&self, id: &PairId) -> Option<&Pair> {
        self.header.pairs.iter().find(|p| &p.id == id)
    }

    pub fn by_pair<'a>(&'a self, id: &'a PairId) -> impl Iterator<Item = &'a Sample> + 'a {
        self.samples.iter().filter(move |s| &s.pair_id == id)
    }

    /// Samples grouped by pair, in pair order.
    pub fn grouped(&self) -> BTreeMap<PairId, Vec<&Sample>> {
        let mut out: BTreeMap<PairId, Vec<&Sample>> = BTreeMap::new();
        for s in &self.samples {
            out.entry(s.pair_id.clone()).or_default().push(s);
        }
        out
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), DatasetError> {
        serde_json::to_writer(&mut w, &self.header).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
        for s in &self.samples {
            serde_json::to_writer(&mut w, s).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_file(&self, path: &Path) -> Result<(), DatasetError> {
        self.write(BufWriter::new(File::create(path)?))
    }
}

/// Round to 9 significant digits; the result prints back exactly.
pub fn round_sig9(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    let k = 8 - v.abs().log10().floor() as i32;
    if !(0..=22).contains(&k) {
        return format!("{v:.8e}").parse().unwrap_or(v);
    }
    let scale = 10f64.powi(k);
    (v * scale).round() / scale
}

/// Draw `n_per_pair` labeled samples for every pair.
///
/// Sample `i` of pair `p` uses streams derived from `(seed, p, i)`, so the
/// output does not depend on how generation is scheduled across threads.
pub fn generate(
    pairs: &[Pair],
    n_per_pair: usize,
    params: &SensorParams,
    seed: u64,
) -> Result<Dataset, DatasetError> {
    params.validate()?;
    let mut samples = Vec::with_capacity(pairs.len() * n_per_pair);
    for (p, pair) in pairs.iter().enumerate() {
        let batch: Result<Vec<Sample>, DatasetError> = (0..n_per_pair)
            .into_par_iter()
            .map(|i| generate_sample(pair, params, seed, p as u64, i as u64))
            .collect();
        samples.extend(batch?);
    }
    Ok(Dataset {
        header: DatasetHeader {
            schema: DATASET_SCHEMA.to_string(),
            version: DATASET_VERSION,
            seed,
            n_per_pair,
            params: params.clone(),
            pairs: pairs.to_vec(),
            config_hash: None,
        },
        samples,
    })
}

fn generate_sample(
    pair: &Pair,
    params: &SensorParams,
    seed: u64,
    pair_index: u64,
    i: u64,
) -> Result<Sample, DatasetError> {
    let displacement = sample_contact_displacement(
        &pair.top,
        &pair.bottom,
        &pair.range,
        &pair.grid,
        derive_seed(seed, &[pair_index, i, 0]),
    )
    .ok_or_else(|| DatasetError::NoContact {
        top: pair.id.top.clone(),
        bottom: pair.id.bottom.clone(),
        attempts: MAX_REJECTION_ATTEMPTS,
    })?;
    let displacement = Point2::new(round_sig9(displacement.x), round_sig9(displacement.y));
    let truth = pair.truth(displacement);
    let mut obs = simulate_probe(&truth, pair.com, params, derive_seed(seed, &[pair_index, i, 1]))?;
    obs.map_values(round_sig9);
    let stable = ground_truth_stable(&truth, pair.com);
    Ok(Sample {
        pair_id: pair.id.clone(),
        displacement,
        obs,
        truth,
        stable,
    })
}

pub fn load(path: &Path) -> Result<Dataset, DatasetError> {
    read(BufReader::new(File::open(path)?))
}

/// Parse a dataset and check every record against the header.
pub fn read<R: BufRead>(reader: R) -> Result<Dataset, DatasetError> {
    let mut lines = reader.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| DatasetError::at(1, "missing header"))??;
    let header: DatasetHeader = serde_json::from_str(&header_line)
        .map_err(|e| DatasetError::at(1, format!("bad header: {e}")))?;
    if header.schema != DATASET_SCHEMA || header.version != DATASET_VERSION {
        return Err(DatasetError::at(
            1,
            format!(
                "schema mismatch: expected {DATASET_SCHEMA} v{DATASET_VERSION}, found {} v{}",
                header.schema, header.version
            ),
        ));
    }
    let steps = header.params.steps();
    let mut samples = Vec::new();
    for (k, line) in lines.enumerate() {
        let line_no = k + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Sample = serde_json::from_str(&line)
            .map_err(|e| DatasetError::at(line_no, format!("malformed record: {e}")))?;
        let pair = header
            .pairs
            .iter()
            .find(|p| p.id == s.pair_id)
            .ok_or_else(|| DatasetError::at(line_no, format!("unknown pair {}", s.pair_id)))?;
        if !s.truth.grid.approx_eq(&pair.grid) {
            return Err(DatasetError::at(line_no, "truth grid differs from pair grid"));
        }
        if !s.displacement.is_finite() {
            return Err(DatasetError::at(line_no, "non-finite displacement"));
        }
        if !s.obs.is_well_formed() || s.obs.steps() != steps {
            return Err(DatasetError::at(
                line_no,
                "observation has wrong shape or non-finite values",
            ));
        }
        if ground_truth_stable(&s.truth, pair.com) != s.stable {
            return Err(DatasetError::at(line_no, "stability label disagrees with truth mask"));
        }
        samples.push(s);
    }
    Ok(Dataset { header, samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> Pair {
        Pair::new(
            "mushroom",
            Shape2::centered_disc(18.0).unwrap(),
            "circle15",
            Shape2::centered_disc(15.0).unwrap(),
            Point2::ORIGIN,
            None,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn round_sig9_is_stable_under_printing() {
        for v in [1.0 / 3.0, -22.499999999, 1e-7 * std::f64::consts::PI, 123456.789012345, 0.0] {
            let r = round_sig9(v);
            let back: f64 = serde_json::to_string(&r).unwrap().parse().unwrap();
            assert_eq!(back, r);
            assert!((r - v).abs() <= 1e-8 * v.abs());
        }
    }

    #[test]
    fn empty_and_nonempty_generation() {
        let params = SensorParams::default();
        let d = generate(&[pair()], 0, &params, 1).unwrap();
        assert!(d.is_empty());
        let d = generate(&[pair()], 5, &params, 1).unwrap();
        assert_eq!(d.len(), 5);
        for s in &d.samples {
            assert!(!s.truth.is_empty());
            assert_eq!(s.stable, ground_truth_stable(&s.truth, Point2::ORIGIN));
        }
    }

    #[test]
    fn contact_free_range_is_rejected() {
        let mut p = pair();
        p.range = DisplacementRange::new(100.0, 101.0, 100.0, 101.0).unwrap();
        let err = generate(&[p], 1, &SensorParams::default(), 0).unwrap_err();
        assert!(matches!(err, DatasetError::NoContact { attempts: 10_000, .. }));
    }

    #[test]
    fn invalid_range() {
        assert!(DisplacementRange::new(1.0, 1.0, 0.0, 1.0).is_err());
        assert!(DisplacementRange::new(0.0, 1.0, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn corrupted_line_is_reported() {
        let d = generate(&[pair()], 8, &SensorParams::default(), 3).unwrap();
        let mut buf = Vec::new();
        d.write(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        let half = lines[6].len() / 2;
        lines[6].truncate(half);
        let broken = lines.join("\n");
        match read(broken.as_bytes()) {
            Err(DatasetError::Load { line, .. }) => assert_eq!(line, 7),
            other => panic!("expected load error, got {other:?}"),
        }
    }

    #[test]
    fn flipped_label_and_schema_are_rejected() {
        let d = generate(&[pair()], 2, &SensorParams::default(), 3).unwrap();
        let mut bad = d.clone();
        bad.samples[1].stable = !bad.samples[1].stable;
        let mut buf = Vec::new();
        bad.write(&mut buf).unwrap();
        assert!(matches!(read(buf.as_slice()), Err(DatasetError::Load { line: 3, .. })));

        let mut bad = d.clone();
        bad.header.version = 99;
        let mut buf = Vec::new();
        bad.write(&mut buf).unwrap();
        assert!(matches!(read(buf.as_slice()), Err(DatasetError::Load { line: 1, .. })));

        let mut bad = d;
        bad.samples[0].obs.ft[3][2] = f64::NAN;
        let mut buf = Vec::new();
        bad.write(&mut buf).unwrap();
        // serde_json writes NaN as null, which fails to parse as a number
        assert!(matches!(read(buf.as_slice()), Err(DatasetError::Load { line: 2, .. })));
    }
}
