//! Log-spectral distortion and the three experiment protocols: interpolation
//! from a partially observed grid, conditional generation from sparse random
//! observations, and latent-space morphing.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::baselines::{
    bilinear_interpolate, build_triangulation, vbap_interpolate, BaselineMethod, InterpolationDomain,
    RING_TOL_DEG,
};
use crate::data::{Direction, MagnitudeField};
use crate::error::{Error, Result};
use crate::igon::{infer_latent_with, train_model, EarRows, LatentCode, ModelShape, Precision, TrainConfig};
use crate::siren::SirenNetwork;

/// Root-mean-square dB error with its per-frequency and per-location marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct LsdReport {
    pub overall_db: f64,
    pub per_frequency_db: Vec<f64>,
    pub per_location_db: Vec<f64>,
    pub n_locations: usize,
    pub n_bins: usize,
}

/// LSD between two dB matrices.
pub fn lsd_db(truth: &Array2<f64>, pred: &Array2<f64>) -> Result<LsdReport> {
    if truth.dim() != pred.dim() {
        return Err(Error::Shape(format!("truth {:?} vs prediction {:?}", truth.dim(), pred.dim())));
    }
    let (l, k) = truth.dim();
    if l == 0 || k == 0 {
        return Err(Error::Invariant("empty field".into()));
    }
    let sq = (truth - pred).mapv(|d| d * d);
    if sq.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite dB difference".into()));
    }
    let per_frequency_db = (0..k).map(|j| (sq.column(j).sum() / l as f64).sqrt()).collect();
    let per_location_db = (0..l).map(|i| (sq.row(i).sum() / k as f64).sqrt()).collect();
    Ok(LsdReport {
        overall_db: (sq.sum() / (l * k) as f64).sqrt(),
        per_frequency_db,
        per_location_db,
        n_locations: l,
        n_bins: k,
    })
}

/// LSD between two linear-magnitude matrices, `20 log10 |H / H^|` per cell.
pub fn lsd_linear(truth: &Array2<f64>, pred: &Array2<f64>) -> Result<LsdReport> {
    if truth.iter().chain(pred).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Numeric("linear magnitudes must be positive and finite".into()));
    }
    lsd_db(&truth.mapv(|v| 20.0 * v.log10()), &pred.mapv(|v| 20.0 * v.log10()))
}

/// LSD of a prediction against a dB field.
pub fn lsd(truth: &MagnitudeField, pred: &Array2<f64>) -> Result<LsdReport> {
    lsd_db(&truth.values_db, pred)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitStrategy {
    /// Alternate roles along azimuth within each elevation ring, offset on
    /// alternate rings.
    Checkerboard,
    /// `ceil(p L)` directions observed, chosen by a seeded shuffle.
    RandomFraction { p: f64, seed: u64 },
    /// Every `n`-th azimuth of each ring observed.
    AzimuthDecimation(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Observed,
    Desired,
}

/// A resolved partition of a direction list.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub strategy: SplitStrategy,
    pub roles: Vec<Role>,
}

impl Split {
    pub fn observed(&self) -> Vec<usize> {
        self.indices(Role::Observed)
    }

    pub fn desired(&self) -> Vec<usize> {
        self.indices(Role::Desired)
    }

    fn indices(&self, role: Role) -> Vec<usize> {
        (0..self.roles.len()).filter(|&i| self.roles[i] == role).collect()
    }
}

/// Rings of (nearly) equal elevation, each sorted by canonical azimuth.
fn rings(directions: &[Direction]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..directions.len()).collect();
    order.sort_by(|&a, &b| {
        directions[a]
            .elevation_deg
            .total_cmp(&directions[b].elevation_deg)
            .then(directions[a].canonical().azimuth_deg.total_cmp(&directions[b].canonical().azimuth_deg))
    });
    let mut out: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match out.last_mut() {
            Some(r) if (directions[r[0]].elevation_deg - directions[i].elevation_deg).abs() <= RING_TOL_DEG => {
                r.push(i)
            }
            _ => out.push(vec![i]),
        }
    }
    out
}

pub fn make_split(directions: &[Direction], strategy: SplitStrategy) -> Result<Split> {
    let n = directions.len();
    if n < 2 {
        return Err(Error::Invariant(format!("need at least 2 directions to split, got {n}")));
    }
    let mut roles = vec![Role::Desired; n];
    match strategy {
        SplitStrategy::Checkerboard => {
            for (r, ring) in rings(directions).iter().enumerate() {
                for (pos, &i) in ring.iter().enumerate() {
                    if (pos + r) % 2 == 0 {
                        roles[i] = Role::Observed;
                    }
                }
            }
        }
        SplitStrategy::RandomFraction { p, seed } => {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Config(format!("observed fraction {p} outside (0, 1]")));
            }
            let count = ((p * n as f64).ceil() as usize).min(n);
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            for &i in &idx[..count] {
                roles[i] = Role::Observed;
            }
        }
        SplitStrategy::AzimuthDecimation(step) => {
            if step == 0 {
                return Err(Error::Config("decimation step must be positive".into()));
            }
            for ring in rings(directions) {
                for (pos, &i) in ring.iter().enumerate() {
                    if pos % step == 0 {
                        roles[i] = Role::Observed;
                    }
                }
            }
        }
    }
    if !roles.contains(&Role::Observed) {
        return Err(Error::Invariant("split leaves no observed directions".into()));
    }
    Ok(Split { strategy, roles })
}

/// Anything that predicts dB magnitudes at `targets` from an observed sub-field.
pub trait Predictor: Sync {
    fn name(&self) -> &str;
    fn predict(&self, observed: &MagnitudeField, targets: &[Direction]) -> Result<Array2<f64>>;
}

/// The trained field: latent from the observed rows, then a forward pass.
pub struct FieldPredictor<'a> {
    pub model: &'a SirenNetwork,
    pub latent_steps: usize,
    pub precision: Precision,
}

impl FieldPredictor<'_> {
    pub fn latent(&self, observed: &MagnitudeField) -> Result<LatentCode> {
        infer_latent_with(self.model, &EarRows::for_training(observed), self.latent_steps, self.precision)
    }
}

impl Predictor for FieldPredictor<'_> {
    fn name(&self) -> &str {
        "field"
    }

    fn predict(&self, observed: &MagnitudeField, targets: &[Direction]) -> Result<Array2<f64>> {
        let z = self.latent(observed)?;
        self.model.predict(targets, z.as_slice())
    }
}

pub struct BaselinePredictor {
    pub method: BaselineMethod,
    pub domain: InterpolationDomain,
}

impl Predictor for BaselinePredictor {
    fn name(&self) -> &str {
        self.method.name()
    }

    fn predict(&self, observed: &MagnitudeField, targets: &[Direction]) -> Result<Array2<f64>> {
        let out = match self.method {
            BaselineMethod::Vbap => {
                let tri = build_triangulation(&observed.directions)?;
                vbap_interpolate(observed, &tri, targets, self.domain)?
            }
            BaselineMethod::Bilinear => bilinear_interpolate(observed, targets, self.domain)?,
        };
        Ok(out.values_db)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Setting {
    /// Target dataset's observed rows only.
    OursR,
    /// Target observed rows plus every other dataset in full.
    OursT,
    /// Other datasets only; the target is held out entirely.
    OursE,
}

impl Setting {
    pub fn name(self) -> &'static str {
        match self {
            Setting::OursR => "ours-r",
            Setting::OursT => "ours-t",
            Setting::OursE => "ours-e",
        }
    }
}

/// Model and inference configuration shared by the experiment runners.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub shape: ModelShape,
    pub domain: InterpolationDomain,
    /// Latent steps used when conditioning on observations at evaluation.
    pub inference_steps: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            shape: ModelShape::default(),
            domain: InterpolationDomain::Linear,
            inference_steps: 1,
        }
    }
}

/// Per-frequency curves for one role; a baseline that failed is `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSet {
    pub columns: Vec<(String, Option<Vec<f64>>)>,
}

impl CurveSet {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .and_then(|(_, c)| c.as_deref())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationResult {
    pub freq_hz: Vec<f64>,
    /// Errors at observed directions.
    pub reconstruction: CurveSet,
    /// Errors at held-out directions.
    pub interpolation: CurveSet,
}

/// Training rows for a setting. Target ears contribute only their observed rows.
pub fn training_ears(
    setting: Setting,
    target: &[MagnitudeField],
    others: &[MagnitudeField],
    strategy: SplitStrategy,
) -> Result<Vec<EarRows>> {
    let mut ears = Vec::new();
    if setting != Setting::OursE {
        for f in target {
            let split = make_split(&f.directions, strategy)?;
            ears.push(EarRows::for_training(&f.select_rows(&split.observed())));
        }
    }
    if setting != Setting::OursR {
        if others.is_empty() {
            return Err(Error::Config(format!("{} needs other datasets", setting.name())));
        }
        ears.extend(others.iter().map(EarRows::for_training));
    }
    if ears.is_empty() {
        return Err(Error::Config("no training data for this setting".into()));
    }
    Ok(ears)
}

/// Per-ear LSD curves of each predictor on one role, averaged over ears.
fn mean_curves(
    predictors: &[&dyn Predictor],
    ears: &[MagnitudeField],
    strategy: SplitStrategy,
    role_rows: impl Fn(&crate::evaluation::Split) -> Vec<usize> + Sync,
) -> Result<CurveSet> {
    let k = ears[0].n_bins();
    let mut columns = Vec::new();
    for p in predictors {
        let per_ear: Vec<Result<Vec<f64>>> = ears
            .par_iter()
            .map(|f| {
                let split = make_split(&f.directions, strategy)?;
                let observed = f.select_rows(&split.observed());
                let rows = role_rows(&split);
                if rows.is_empty() {
                    return Err(Error::Invariant("split leaves this role empty".into()));
                }
                let truth = f.select_rows(&rows);
                let pred = p.predict(&observed, &truth.directions)?;
                Ok(lsd(&truth, &pred)?.per_frequency_db)
            })
            .collect();
        let mut acc = vec![0.0; k];
        let mut failed = None;
        for r in per_ear {
            match r {
                Ok(c) => acc.iter_mut().zip(c).for_each(|(a, v)| *a += v),
                Err(e) if p.name() == "field" => return Err(e),
                Err(e) => failed = Some(e),
            }
        }
        let curve = match failed {
            Some(e) => {
                log::warn!("{} failed: {e}", p.name());
                None
            }
            None => Some(acc.iter().map(|v| v / ears.len() as f64).collect()),
        };
        columns.push((p.name().to_string(), curve));
    }
    Ok(CurveSet { columns })
}

/// Evaluates predictors on a target dataset's split: reconstruction on the
/// observed rows, interpolation on the desired rows.
pub fn evaluate_interpolation(
    predictors: &[&dyn Predictor],
    target: &[MagnitudeField],
    strategy: SplitStrategy,
) -> Result<InterpolationResult> {
    if target.is_empty() {
        return Err(Error::Invariant("no target ears".into()));
    }
    Ok(InterpolationResult {
        freq_hz: target[0].freq_grid_hz.clone(),
        reconstruction: mean_curves(predictors, target, strategy, |s| s.observed())?,
        interpolation: mean_curves(predictors, target, strategy, |s| s.desired())?,
    })
}

/// Trains a model for the setting, then evaluates it with VBAP and bilinear
/// alongside. Returns the model with the curves.
pub fn run_interpolation_experiment(
    setting: Setting,
    target: &[MagnitudeField],
    others: &[MagnitudeField],
    strategy: SplitStrategy,
    cfg: &ExperimentConfig,
) -> Result<(SirenNetwork, InterpolationResult)> {
    let ears = training_ears(setting, target, others, strategy)?;
    let model = train_model(&ears, &cfg.train, &cfg.shape)?;
    let result = evaluate_with_baselines(&model, target, strategy, cfg)?;
    Ok((model, result))
}

pub fn evaluate_with_baselines(
    model: &SirenNetwork,
    target: &[MagnitudeField],
    strategy: SplitStrategy,
    cfg: &ExperimentConfig,
) -> Result<InterpolationResult> {
    let field = FieldPredictor {
        model,
        latent_steps: cfg.inference_steps,
        precision: cfg.train.precision,
    };
    let vbap = BaselinePredictor {
        method: BaselineMethod::Vbap,
        domain: cfg.domain,
    };
    let bilinear = BaselinePredictor {
        method: BaselineMethod::Bilinear,
        domain: cfg.domain,
    };
    evaluate_interpolation(&[&field, &vbap, &bilinear], target, strategy)
}

/// Mean and standard deviation of overall LSD for one method and fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRow {
    pub method: String,
    pub fraction: f64,
    pub mean_lsd_db: f64,
    pub std_lsd_db: f64,
    pub n_trials: usize,
    pub n_failed: usize,
}

/// For every fraction, seed and ear: observe a random subset, predict the
/// rest, and record overall LSD per method.
pub fn run_conditional_generation(
    predictors: &[&dyn Predictor],
    target: &[MagnitudeField],
    fractions: &[f64],
    seeds: &[u64],
) -> Result<Vec<GenerationRow>> {
    if target.is_empty() || seeds.is_empty() {
        return Err(Error::Invariant("need target ears and at least one seed".into()));
    }
    for &p in fractions {
        if p > 0.25 {
            log::warn!("observed fraction {p} exceeds the sparse regime (0.25)");
        }
    }
    let mut rows = Vec::new();
    for &fraction in fractions {
        let trials: Vec<(usize, u64)> = (0..target.len())
            .flat_map(|e| seeds.iter().map(move |&s| (e, s)))
            .collect();
        for p in predictors {
            let results: Vec<Result<f64>> = trials
                .par_iter()
                .map(|&(e, seed)| {
                    let f = &target[e];
                    let trial_seed = seed.wrapping_mul(1_000_003).wrapping_add(e as u64);
                    let split = make_split(&f.directions, SplitStrategy::RandomFraction { p: fraction, seed: trial_seed })?;
                    let observed = f.select_rows(&split.observed());
                    let desired = split.desired();
                    if desired.is_empty() {
                        return Err(Error::Invariant("nothing left to predict".into()));
                    }
                    let truth = f.select_rows(&desired);
                    if p.name() != "field" && observed.n_locations() < 3 {
                        return Err(Error::Degenerate("fewer than 3 observed directions".into()));
                    }
                    let pred = p.predict(&observed, &truth.directions)?;
                    Ok(lsd(&truth, &pred)?.overall_db)
                })
                .collect();
            let mut ok = Vec::new();
            let mut failed = 0;
            for r in results {
                match r {
                    Ok(v) => ok.push(v),
                    Err(e) if p.name() == "field" => return Err(e),
                    Err(e) => {
                        log::debug!("{} trial failed: {e}", p.name());
                        failed += 1
                    }
                }
            }
            let (mean, std) = mean_std(&ok);
            rows.push(GenerationRow {
                method: p.name().to_string(),
                fraction,
                mean_lsd_db: mean,
                std_lsd_db: std,
                n_trials: ok.len() + failed,
                n_failed: failed,
            });
        }
    }
    Ok(rows)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Number of points on the default midsagittal path (1 degree steps).
pub const MIDSAGITTAL_POINTS: usize = 361;

/// Polar angle in `[-90, 270]` to a direction on the midsagittal plane:
/// front half at azimuth 0, back half at azimuth 180.
pub fn midsagittal_direction(polar_deg: f64) -> Direction {
    if polar_deg <= 90.0 {
        Direction::new(0.0, polar_deg)
    } else {
        Direction::new(180.0, 180.0 - polar_deg)
    }
}

/// `n_points` polar angles evenly spanning `[-90, 270]`.
pub fn midsagittal_angles(n_points: usize) -> Vec<f64> {
    match n_points {
        0 => Vec::new(),
        1 => vec![-90.0],
        n => (0..n).map(|i| -90.0 + 360.0 * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Field values along the midsagittal path for one latent code.
pub fn midsagittal_field(model: &SirenNetwork, z: &LatentCode, n_points: usize, freq_hz: &[f64]) -> Result<MagnitudeField> {
    let dirs: Vec<Direction> = midsagittal_angles(n_points).into_iter().map(midsagittal_direction).collect();
    let values = model.predict(&dirs, z.as_slice())?;
    MagnitudeField::new(dirs, values, freq_hz.to_vec())
}

/// Fields for `z_t = (1 - t) z_a + t z_b` on a rendering grid.
pub fn latent_morph(
    model: &SirenNetwork,
    z_a: &LatentCode,
    z_b: &LatentCode,
    ts: &[f64],
    grid: &[Direction],
) -> Result<Vec<Array2<f64>>> {
    ts.iter().map(|&t| model.predict(grid, z_a.lerp(z_b, t).as_slice())).collect()
}

/// Wide CSV: `polar_angle_deg` then one column per frequency.
pub fn export_midsagittal(field: &MagnitudeField, polar_deg: &[f64], path: impl AsRef<Path>) -> Result<()> {
    if polar_deg.len() != field.n_locations() {
        return Err(Error::Shape(format!(
            "{} polar angles for {} rows",
            polar_deg.len(),
            field.n_locations()
        )));
    }
    let mut s = String::from("polar_angle_deg");
    for f in &field.freq_grid_hz {
        write!(s, ",{f}").unwrap();
    }
    s.push('\n');
    for (i, p) in polar_deg.iter().enumerate() {
        write!(s, "{p}").unwrap();
        for v in field.values_db.row(i) {
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

/// `freq_hz` then one column per method; failed methods are written as `nan`.
pub fn write_curves_csv(path: impl AsRef<Path>, freq_hz: &[f64], curves: &CurveSet) -> Result<()> {
    let mut s = String::from("freq_hz");
    for (name, _) in &curves.columns {
        write!(s, ",{name}").unwrap();
    }
    s.push('\n');
    for (k, f) in freq_hz.iter().enumerate() {
        write!(s, "{f}").unwrap();
        for (_, c) in &curves.columns {
            match c {
                Some(v) => write!(s, ",{}", v[k]).unwrap(),
                None => s.push_str(",nan"),
            }
        }
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn write_generation_csv(path: impl AsRef<Path>, rows: &[GenerationRow]) -> Result<()> {
    let mut s = String::from("method,fraction,mean_lsd_db,std_lsd_db,n_trials,n_failed\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{}",
            r.method, r.fraction, r.mean_lsd_db, r.std_lsd_db, r.n_trials, r.n_failed
        )
        .unwrap();
    }
    fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn grid(n_az: usize, els: &[f64]) -> Vec<Direction> {
        els.iter()
            .flat_map(|&e| (0..n_az).map(move |a| Direction::new(360.0 * a as f64 / n_az as f64, e)))
            .collect()
    }

    #[test]
    fn lsd_identities() {
        let h = array![[0.5, 2.0], [1.0, 3.0]];
        assert_eq!(lsd_linear(&h, &h).unwrap().overall_db, 0.0);
        let r = lsd_linear(&h, &(&h * 10.0)).unwrap();
        assert!((r.overall_db - 20.0).abs() < 1e-9);
        assert!(r.per_frequency_db.iter().chain(&r.per_location_db).all(|v| (v - 20.0).abs() < 1e-9));
        assert!(lsd_linear(&h, &(&h * 0.0)).is_err());
    }

    #[test]
    fn lsd_toy_against_brute_force() {
        let t = Array2::zeros((2, 2));
        let p = array![[1.0, 2.0], [3.0, 4.0]];
        let r = lsd_db(&t, &p).unwrap();
        let mut acc = 0.0;
        for v in p.iter() {
            acc += v * v;
        }
        assert!((r.overall_db - (acc / 4.0f64).sqrt()).abs() < 1e-15);
        assert!((r.overall_db - 2.7386127875258306).abs() < 1e-12);
        assert!((r.per_frequency_db[0] - 5.0f64.sqrt()).abs() < 1e-15);
        assert!((r.per_location_db[1] - 12.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn checkerboard_alternates() {
        let dirs = grid(4, &[0.0, 30.0]);
        let s = make_split(&dirs, SplitStrategy::Checkerboard).unwrap();
        assert_eq!(s.observed().len(), 4);
        assert_eq!(s.desired().len(), 4);
        for ring in [0..4, 4..8] {
            let r: Vec<_> = ring.collect();
            for w in 0..4 {
                assert_ne!(s.roles[r[w]], s.roles[r[(w + 1) % 4]]);
            }
        }
        // alternate rings are offset
        assert_ne!(s.roles[0], s.roles[4]);
    }

    #[test]
    fn random_fraction_counts_and_reproduces() {
        let dirs = grid(10, &[0.0, 10.0, 20.0]);
        let a = make_split(&dirs, SplitStrategy::RandomFraction { p: 0.25, seed: 4 }).unwrap();
        let b = make_split(&dirs, SplitStrategy::RandomFraction { p: 0.25, seed: 4 }).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.observed().len(), 8);
        let all = make_split(&dirs, SplitStrategy::RandomFraction { p: 1.0, seed: 0 }).unwrap();
        assert!(all.desired().is_empty());
        assert!(make_split(&dirs, SplitStrategy::RandomFraction { p: 0.0, seed: 0 }).is_err());
        let dec = make_split(&dirs, SplitStrategy::AzimuthDecimation(5)).unwrap();
        assert_eq!(dec.observed().len(), 6);
    }

    /// Copies ground truth; interpolation through it must be error-free.
    struct Oracle<'a>(&'a [MagnitudeField]);

    impl Predictor for Oracle<'_> {
        fn name(&self) -> &str {
            "field"
        }
        fn predict(&self, observed: &MagnitudeField, targets: &[Direction]) -> Result<Array2<f64>> {
            let f = self
                .0
                .iter()
                .find(|f| {
                    observed.directions.iter().enumerate().all(|(i, d)| {
                        let j = f.directions.iter().position(|e| e == d).unwrap();
                        f.values_db.row(j) == observed.values_db.row(i)
                    })
                })
                .unwrap();
            let rows: Vec<usize> = targets
                .iter()
                .map(|t| f.directions.iter().position(|d| d == t).unwrap())
                .collect();
            Ok(f.select_rows(&rows).values_db)
        }
    }

    #[test]
    fn harness_with_oracle_is_exact_and_baselines_reproduce_nodes() {
        let dirs = grid(12, &[-30.0, 0.0, 30.0, 60.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        use rand::Rng;
        let ears: Vec<_> = (0..3)
            .map(|_| {
                let v = Array2::from_shape_fn((dirs.len(), 5), |_| rng.random_range(-10.0..5.0));
                MagnitudeField::new(dirs.clone(), v, vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap()
            })
            .collect();
        let oracle = Oracle(&ears);
        let vbap = BaselinePredictor {
            method: BaselineMethod::Vbap,
            domain: InterpolationDomain::Linear,
        };
        let bil = BaselinePredictor {
            method: BaselineMethod::Bilinear,
            domain: InterpolationDomain::Linear,
        };
        let r = evaluate_interpolation(&[&oracle, &vbap, &bil], &ears, SplitStrategy::Checkerboard).unwrap();
        assert!(r.interpolation.get("field").unwrap().iter().all(|&v| v == 0.0));
        for m in ["field", "vbap", "bilinear"] {
            assert!(r.reconstruction.get(m).unwrap().iter().all(|&v| v == 0.0), "{m}");
        }
        assert!(r.interpolation.get("vbap").unwrap().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn generation_rows_per_method_and_fraction() {
        let dirs = grid(12, &[-30.0, 0.0, 30.0]);
        let ears = vec![MagnitudeField::new(
            dirs.clone(),
            Array2::from_shape_fn((dirs.len(), 2), |(i, j)| (i + j) as f64 * 0.1),
            vec![1.0, 2.0],
        )
        .unwrap()];
        let oracle = Oracle(&ears);
        let vbap = BaselinePredictor {
            method: BaselineMethod::Vbap,
            domain: InterpolationDomain::Db,
        };
        let rows = run_conditional_generation(&[&oracle, &vbap], &ears, &[0.05, 0.2], &[0, 1]).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].mean_lsd_db, 0.0);
        // 5% of 36 is 2 points: too few for a triangulation
        assert_eq!(rows[1].n_failed, 2);
        assert!(rows[3].mean_lsd_db.is_finite() && rows[3].mean_lsd_db >= 0.0);
    }

    #[test]
    fn midsagittal_path() {
        assert_eq!(midsagittal_direction(0.0), Direction::new(0.0, 0.0));
        assert_eq!(midsagittal_direction(180.0), Direction::new(180.0, 0.0));
        assert_eq!(midsagittal_direction(270.0), Direction::new(180.0, -90.0));
        let a = midsagittal_angles(MIDSAGITTAL_POINTS);
        assert_eq!((a[0], a[90], a[360]), (-90.0, 0.0, 270.0));
    }

    #[test]
    fn midsagittal_csv_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = SirenNetwork::init(&[4, 8, 3], 2, 30.0, 0).unwrap();
        let z = LatentCode(vec![rng.random_range(-1.0..1.0), 0.3]);
        let f = midsagittal_field(&net, &z, 7, &[100.0, 200.0, 300.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        export_midsagittal(&f, &midsagittal_angles(7), &p).unwrap();
        let text = fs::read_to_string(p).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 8);
        assert_eq!(lines[0], "polar_angle_deg,100,200,300");
        assert!(lines.iter().all(|l| l.split(',').count() == 4));
    }

    #[test]
    fn morph_endpoints_and_degenerate_path() {
        let net = SirenNetwork::init(&[5, 8, 8, 4], 3, 30.0, 1).unwrap();
        let grid: Vec<_> = midsagittal_angles(19).into_iter().map(midsagittal_direction).collect();
        let za = LatentCode(vec![0.1, -0.2, 0.3]);
        let zb = LatentCode(vec![-0.4, 0.5, 0.0]);
        let out = latent_morph(&net, &za, &zb, &[0.0, 0.5, 1.0], &grid).unwrap();
        assert_eq!(out[0], net.predict(&grid, za.as_slice()).unwrap());
        assert_eq!(out[2], net.predict(&grid, zb.as_slice()).unwrap());
        assert_ne!(out[1], out[0]);
        assert_ne!(out[1], out[2]);
        let same = latent_morph(&net, &za, &za, &[0.5], &grid).unwrap();
        assert_eq!(same[0], out[0]);
    }

    #[test]
    fn morph_is_continuous_in_t() {
        let net = SirenNetwork::init(&[4, 16, 16, 3], 2, 30.0, 2).unwrap();
        let grid: Vec<_> = midsagittal_angles(37).into_iter().map(midsagittal_direction).collect();
        let (za, zb) = (LatentCode(vec![0.2, -0.1]), LatentCode(vec![-0.3, 0.4]));
        let max_step = |d: f64| {
            let v = latent_morph(&net, &za, &zb, &[0.4, 0.4 + d], &grid).unwrap();
            (&v[1] - &v[0]).iter().fold(0.0f64, |m, x| m.max(x.abs()))
        };
        let (big, small) = (max_step(1e-2), max_step(1e-3));
        assert!(small > 0.0 && small < big);
        // local Lipschitz estimate from the coarser probe bounds the finer one
        assert!(small <= 1e-3 * (big / 1e-2) * 2.0);
    }
}
