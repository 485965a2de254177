//! `hrtf-field`: train latent-conditioned HRTF fields, run the comparison
//! interpolators, and reproduce the interpolation, conditional-generation and
//! morphing experiments.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hrtf_field::baselines::{
    bilinear_interpolate, build_triangulation, vbap_interpolate, BaselineMethod, InterpolationDomain,
};
use hrtf_field::data::{load_archive, merge_archives, save_archive, DatasetArchive, Stage};
use hrtf_field::evaluation::{
    evaluate_with_baselines, export_midsagittal, latent_morph, lsd, make_split, midsagittal_angles,
    midsagittal_direction, run_conditional_generation, training_ears, write_curves_csv,
    write_generation_csv, BaselinePredictor, CurveSet, ExperimentConfig, FieldPredictor, Predictor,
    Setting, SplitStrategy, MIDSAGITTAL_POINTS,
};
use hrtf_field::igon::{build_network, fit, Checkpointing, ModelShape, Precision, TrainConfig, Trainer};
use hrtf_field::preprocess::{process_ears, NormalizationScope, PreprocessOptions};
use hrtf_field::synth::{fibonacci_grid, ring_grid, synthetic_archive, SyntheticDataset};
use hrtf_field::{Direction, EarRows, Error, GradMode, MagnitudeField, SirenNetwork};
use sha2::{Digest, Sha256};

mod manifest;

use manifest::Manifest;

#[derive(Parser, Debug)]
#[command(name = "hrtf-field", version, about)]
struct Cli {
    /// Worker threads for per-ear work; 1 keeps runs bit-reproducible.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Preprocess archives and train a field model.
    Train(TrainArgs),
    /// Run one of the experiment protocols.
    #[command(subcommand)]
    Experiment(ExperimentCmd),
    /// Interpolate held-out directions with VBAP or bilinear interpolation.
    Baseline(BaselineArgs),
    /// Write a synthetic raw archive for tests and demos.
    Synth(SynthArgs),
}

#[derive(Subcommand, Debug)]
enum ExperimentCmd {
    /// Train on the target's observed rows only.
    InterpR(InterpArgs),
    /// Train on the target's observed rows plus the other datasets.
    InterpT(InterpArgs),
    /// Train on the other datasets only.
    InterpE(InterpArgs),
    /// Condition on sparse random subsets of a held-out dataset.
    CondGen(CondGenArgs),
    /// Interpolate between two ears' latent codes.
    LatentMorph(MorphArgs),
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 18)]
    batch_size: usize,
    #[arg(long, default_value_t = 32)]
    latent_dim: usize,
    /// Initial learning rate.
    #[arg(long, default_value_t = 3e-4)]
    lr0: f64,
    /// Decay coefficient c in lr0 / (1 + c * epoch).
    #[arg(long, default_value_t = 0.01)]
    lr_decay: f64,
    #[arg(long, value_enum, default_value_t = GradModeArg::Exact)]
    grad_mode: GradModeArg,
    /// Unit latent steps from the origin (training and inference).
    #[arg(long, default_value_t = 1)]
    latent_steps: usize,
    #[arg(long, value_enum, default_value_t = PrecisionArg::F32)]
    precision: PrecisionArg,
    #[arg(long, default_value_t = 2048)]
    hidden: usize,
    #[arg(long, default_value_t = 2)]
    hidden_layers: usize,
    #[arg(long, default_value_t = 30.0)]
    omega0: f64,
    #[arg(long, value_enum, default_value_t = ScopeArg::PerEar)]
    normalization: ScopeArg,
    /// Seed for initialization, shuffling and splits.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// HRDF archives to train on.
    #[arg(long, num_args = 1.., required = true)]
    data: Vec<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Write a checkpoint every N epochs (0 disables).
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct InterpArgs {
    /// Archive holding the dataset to interpolate.
    #[arg(long)]
    target: PathBuf,
    /// Archives of the other datasets.
    #[arg(long, num_args = 0..)]
    others: Vec<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// `checkerboard`, `random:P` or `decimate:N`.
    #[arg(long, default_value = "checkerboard")]
    split: String,
    /// Evaluate this model instead of training one.
    #[arg(long)]
    model_file: Option<PathBuf>,
    /// Blend baselines in dB rather than linear magnitude.
    #[arg(long)]
    db_domain: bool,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct CondGenArgs {
    /// Trained model (should not have seen the target dataset).
    #[arg(long)]
    model_file: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.05, 0.10, 0.15, 0.20, 0.25])]
    fractions: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0u64, 1, 2, 3, 4])]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 1)]
    latent_steps: usize,
    #[arg(long)]
    db_domain: bool,
    #[arg(long, value_enum, default_value_t = ScopeArg::PerEar)]
    normalization: ScopeArg,
}

#[derive(Args, Debug)]
struct MorphArgs {
    #[arg(long)]
    model_file: PathBuf,
    /// Archive holding both ears.
    #[arg(long)]
    data: PathBuf,
    /// Index of the first ear within the archive.
    #[arg(long, default_value_t = 0)]
    ear_a: usize,
    #[arg(long, default_value_t = 1)]
    ear_b: usize,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0])]
    t: Vec<f64>,
    #[arg(long, default_value_t = MIDSAGITTAL_POINTS)]
    points: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    latent_steps: usize,
    #[arg(long, value_enum, default_value_t = ScopeArg::PerEar)]
    normalization: ScopeArg,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    #[arg(long)]
    data: PathBuf,
    /// `vbap` or `bilinear`.
    #[arg(long)]
    method: String,
    /// `checkerboard`, `random:P`, `decimate:N`, or `all` to observe everything.
    #[arg(long, default_value = "checkerboard")]
    split: String,
    /// Ear index within the archive.
    #[arg(long, default_value_t = 0)]
    ear: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    db_domain: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ScopeArg::PerEar)]
    normalization: ScopeArg,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "synthetic")]
    name: String,
    /// `ring:AZ_STEP:EL_MIN:EL_MAX:EL_STEP` or `fibonacci:N`.
    #[arg(long, default_value = "ring:30:-30:60:30")]
    grid: String,
    #[arg(long, default_value_t = 2)]
    subjects: usize,
    #[arg(long, default_value_t = 44100.0)]
    sample_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum GradModeArg {
    Exact,
    Detached,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum ScopeArg {
    PerEar,
    PerDatabase,
}

impl ModelArgs {
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            latent_dim: self.latent_dim,
            lr0: self.lr0,
            lr_decay_coeff: self.lr_decay,
            grad_mode: match self.grad_mode {
                GradModeArg::Exact => GradMode::Exact,
                GradModeArg::Detached => GradMode::Detached,
            },
            latent_steps: self.latent_steps,
            seed: self.seed,
            precision: match self.precision {
                PrecisionArg::F32 => Precision::F32,
                PrecisionArg::F64 => Precision::F64,
            },
        }
    }

    fn shape(&self) -> ModelShape {
        ModelShape {
            hidden: self.hidden,
            n_hidden: self.hidden_layers,
            omega0: self.omega0,
        }
    }

    fn record(&self, m: &mut Manifest) {
        let c = self.train_config();
        m.set("epochs", c.epochs);
        m.set("batch_size", c.batch_size);
        m.set("latent_dim", c.latent_dim);
        m.set("lr0", c.lr0);
        m.set("lr_decay_coeff", c.lr_decay_coeff);
        m.set("grad_mode", format!("{:?}", c.grad_mode).to_lowercase());
        m.set("latent_steps", c.latent_steps);
        m.set("precision", format!("{:?}", c.precision).to_lowercase());
        m.set("hidden", self.hidden);
        m.set("hidden_layers", self.hidden_layers);
        m.set("omega0", self.omega0);
        m.set("normalization", scope(self.normalization).name());
        m.set("seed", c.seed);
    }
}

trait ScopeName {
    fn name(&self) -> &'static str;
}

impl ScopeName for NormalizationScope {
    fn name(&self) -> &'static str {
        match self {
            NormalizationScope::PerEar => "per-ear",
            NormalizationScope::PerDatabase => "per-database",
        }
    }
}

fn scope(s: ScopeArg) -> NormalizationScope {
    match s {
        ScopeArg::PerEar => NormalizationScope::PerEar,
        ScopeArg::PerDatabase => NormalizationScope::PerDatabase,
    }
}

fn domain(db: bool) -> InterpolationDomain {
    if db {
        InterpolationDomain::Db
    } else {
        InterpolationDomain::Linear
    }
}

/// Failure classes mapped onto process exit codes.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            Error::Numeric(_) => Failure::Numeric(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn parse_split(s: &str, seed: u64) -> CliResult<SplitStrategy> {
    let bad = || Failure::Usage(format!("unknown split {s:?}; use checkerboard, random:P or decimate:N"));
    match s.split_once(':') {
        None if s == "checkerboard" => Ok(SplitStrategy::Checkerboard),
        Some(("random", p)) => Ok(SplitStrategy::RandomFraction {
            p: p.parse().map_err(|_| bad())?,
            seed,
        }),
        Some(("decimate", n)) => Ok(SplitStrategy::AzimuthDecimation(n.parse().map_err(|_| bad())?)),
        _ => Err(bad()),
    }
}

/// Loads archives and returns processed fields, one list per archive.
fn load_fields(paths: &[PathBuf], scope: NormalizationScope) -> CliResult<Vec<Vec<MagnitudeField>>> {
    let archives: Vec<DatasetArchive> = paths.iter().map(load_archive).collect::<Result<_, _>>()?;
    // rejects duplicate (dataset, subject, ear) triples across archives
    merge_archives(&archives)?;
    let opts = PreprocessOptions {
        scope,
        ..Default::default()
    };
    archives
        .iter()
        .map(|a| {
            let processed = if a.subject_ears.iter().all(|e| e.stage() == Stage::Processed) {
                a.subject_ears.clone()
            } else {
                process_ears(&a.subject_ears, &opts)?
            };
            Ok(processed
                .iter()
                .map(|e| e.magnitude_field())
                .collect::<Result<Vec<_>, _>>()?)
        })
        .collect()
}

fn hash_files(paths: &[PathBuf]) -> CliResult<String> {
    let mut h = Sha256::new();
    for p in paths {
        h.update(fs::read(p)?);
    }
    Ok(manifest::hex(&h.finalize()))
}

fn cmd_train(a: &TrainArgs, threads: usize) -> CliResult<()> {
    fs::create_dir_all(&a.out)?;
    let cfg = a.model.train_config();
    let mut m = Manifest::new("train");
    m.set("data", join_paths(&a.data));
    m.set("data_sha256", hash_files(&a.data)?);
    a.model.record(&mut m);
    m.set("checkpoint_every", a.checkpoint_every);
    m.set("threads", threads);

    let fields: Vec<MagnitudeField> = load_fields(&a.data, scope(a.model.normalization))?
        .into_iter()
        .flatten()
        .collect();
    let ears: Vec<EarRows> = fields.iter().map(EarRows::for_training).collect();
    let k = fields[0].n_bins();
    log::info!("training on {} subject-ears, {} bins", ears.len(), k);
    let mut trainer = Trainer::new(build_network(&cfg, &a.model.shape(), k)?, cfg)?;
    let mut log_file = fs::File::create(a.out.join("train_log.csv"))?;
    let cp = Checkpointing {
        dir: a.out.clone(),
        every: a.checkpoint_every,
    };
    let history = fit(&mut trainer, &ears, Some(&mut log_file), Some(&cp))?;
    trainer.model.save(a.out.join("model.hfnf"))?;
    if let Some(last) = history.last() {
        println!("trained {} epochs, final mean loss {:.6}", history.len(), last.mean_loss);
    }
    m.write(&a.out)?;
    Ok(())
}

fn join_paths(p: &[PathBuf]) -> String {
    p.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",")
}

fn cmd_interp(setting: Setting, a: &InterpArgs, threads: usize) -> CliResult<()> {
    fs::create_dir_all(&a.out)?;
    let strategy = parse_split(&a.split, a.model.seed)?;
    let mut m = Manifest::new(&format!("experiment {}", setting.name()));
    m.set("target", a.target.display());
    m.set("others", join_paths(&a.others));
    m.set("split", &a.split);
    m.set("db_domain", a.db_domain);
    m.set("threads", threads);
    a.model.record(&mut m);
    let scope = scope(a.model.normalization);
    let target = load_fields(std::slice::from_ref(&a.target), scope)?.remove(0);
    let others: Vec<MagnitudeField> = load_fields(&a.others, scope)?.into_iter().flatten().collect();
    let cfg = ExperimentConfig {
        train: a.model.train_config(),
        shape: a.model.shape(),
        domain: domain(a.db_domain),
        inference_steps: a.model.latent_steps,
    };
    let model = match &a.model_file {
        Some(p) => {
            m.set("model_file", p.display());
            SirenNetwork::load(p)?
        }
        None => {
            let ears = training_ears(setting, &target, &others, strategy)?;
            let k = target[0].n_bins();
            let mut trainer = Trainer::new(build_network(&cfg.train, &cfg.shape, k)?, cfg.train.clone())?;
            let mut log_file = fs::File::create(a.out.join("train_log.csv"))?;
            fit(&mut trainer, &ears, Some(&mut log_file), None)?;
            trainer.model.save(a.out.join("model.hfnf"))?;
            trainer.model
        }
    };
    let result = evaluate_with_baselines(&model, &target, strategy, &cfg)?;
    check_curves(&result.reconstruction)?;
    check_curves(&result.interpolation)?;
    write_curves_csv(a.out.join("reconstruction.csv"), &result.freq_hz, &result.reconstruction)?;
    write_curves_csv(a.out.join("interpolation.csv"), &result.freq_hz, &result.interpolation)?;
    m.write(&a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn check_curves(c: &CurveSet) -> CliResult<()> {
    for (name, curve) in &c.columns {
        if let Some(v) = curve {
            if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Failure::Numeric(format!("{name}: LSD curve has invalid values")));
            }
        }
    }
    Ok(())
}

fn cmd_cond_gen(a: &CondGenArgs, threads: usize) -> CliResult<()> {
    fs::create_dir_all(&a.out)?;
    let mut m = Manifest::new("experiment cond-gen");
    m.set("model_file", a.model_file.display());
    m.set("target", a.target.display());
    m.set("fractions", join(&a.fractions));
    m.set("seeds", join(&a.seeds));
    m.set("latent_steps", a.latent_steps);
    m.set("db_domain", a.db_domain);
    m.set("normalization", scope(a.normalization).name());
    m.set("threads", threads);
    if a.fractions.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
        return Err(Failure::Usage("fractions must lie in (0, 1]".into()));
    }
    let model = SirenNetwork::load(&a.model_file)?;
    let target = load_fields(std::slice::from_ref(&a.target), scope(a.normalization))?.remove(0);
    let field = FieldPredictor {
        model: &model,
        latent_steps: a.latent_steps,
        precision: Precision::F64,
    };
    let vbap = BaselinePredictor {
        method: BaselineMethod::Vbap,
        domain: domain(a.db_domain),
    };
    let bilinear = BaselinePredictor {
        method: BaselineMethod::Bilinear,
        domain: domain(a.db_domain),
    };
    let predictors: [&dyn Predictor; 3] = [&field, &vbap, &bilinear];
    let rows = run_conditional_generation(&predictors, &target, &a.fractions, &a.seeds)?;
    write_generation_csv(a.out.join("conditional_generation.csv"), &rows)?;
    m.write(&a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn join<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn cmd_morph(a: &MorphArgs, threads: usize) -> CliResult<()> {
    fs::create_dir_all(&a.out)?;
    let mut m = Manifest::new("experiment latent-morph");
    m.set("model_file", a.model_file.display());
    m.set("data", a.data.display());
    m.set("ear_a", a.ear_a);
    m.set("ear_b", a.ear_b);
    m.set("t", join(&a.t));
    m.set("points", a.points);
    m.set("latent_steps", a.latent_steps);
    m.set("normalization", scope(a.normalization).name());
    m.set("threads", threads);
    let model = SirenNetwork::load(&a.model_file)?;
    let fields = load_fields(std::slice::from_ref(&a.data), scope(a.normalization))?.remove(0);
    let pick = |i: usize| {
        fields
            .get(i)
            .ok_or_else(|| Failure::Usage(format!("ear index {i} out of range (archive has {})", fields.len())))
    };
    let (fa, fb) = (pick(a.ear_a)?, pick(a.ear_b)?);
    let predictor = FieldPredictor {
        model: &model,
        latent_steps: a.latent_steps,
        precision: Precision::F64,
    };
    let (za, zb) = (predictor.latent(fa)?, predictor.latent(fb)?);
    let angles = midsagittal_angles(a.points);
    let grid: Vec<Direction> = angles.iter().map(|&p| midsagittal_direction(p)).collect();
    let outs = latent_morph(&model, &za, &zb, &a.t, &grid)?;
    for (t, values) in a.t.iter().zip(outs) {
        let f = MagnitudeField::new(grid.clone(), values, fa.freq_grid_hz.clone())?;
        export_midsagittal(&f, &angles, a.out.join(format!("morph_t{t:.3}.csv")))?;
    }
    m.write(&a.out)?;
    println!("wrote {} fields to {}", a.t.len(), a.out.display());
    Ok(())
}

fn cmd_baseline(a: &BaselineArgs, threads: usize) -> CliResult<()> {
    let method: BaselineMethod = a.method.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
    fs::create_dir_all(&a.out)?;
    let mut m = Manifest::new("baseline");
    m.set("data", a.data.display());
    m.set("method", method.name());
    m.set("split", &a.split);
    m.set("ear", a.ear);
    m.set("db_domain", a.db_domain);
    m.set("seed", a.seed);
    m.set("normalization", scope(a.normalization).name());
    m.set("threads", threads);
    let fields = load_fields(std::slice::from_ref(&a.data), scope(a.normalization))?.remove(0);
    let field = fields
        .get(a.ear)
        .ok_or_else(|| Failure::Usage(format!("ear index {} out of range (archive has {})", a.ear, fields.len())))?;
    let (observed, targets): (Vec<usize>, Vec<usize>) = if a.split == "all" {
        let all: Vec<usize> = (0..field.n_locations()).collect();
        (all.clone(), all)
    } else {
        let split = make_split(&field.directions, parse_split(&a.split, a.seed)?)?;
        let desired = split.desired();
        if desired.is_empty() {
            (split.observed(), split.observed())
        } else {
            (split.observed(), desired)
        }
    };
    let obs = field.select_rows(&observed);
    let truth = field.select_rows(&targets);
    let out = match method {
        BaselineMethod::Vbap => {
            let tri = build_triangulation(&obs.directions)?;
            vbap_interpolate(&obs, &tri, &truth.directions, domain(a.db_domain))?
        }
        BaselineMethod::Bilinear => bilinear_interpolate(&obs, &truth.directions, domain(a.db_domain))?,
    };
    let report = lsd(&truth, &out.values_db)?;
    write_predictions(&a.out.join("predictions.csv"), &truth, &out.values_db, &out.out_of_coverage)?;
    let mut lsd_csv = String::from("freq_hz,lsd_db\n");
    for (f, v) in truth.freq_grid_hz.iter().zip(&report.per_frequency_db) {
        lsd_csv.push_str(&format!("{f},{v}\n"));
    }
    fs::write(a.out.join("lsd.csv"), lsd_csv)?;
    m.set("overall_lsd_db", report.overall_db);
    m.set("out_of_coverage", out.n_flagged());
    m.write(&a.out)?;
    println!("{} overall LSD {:.6} dB over {} directions", method.name(), report.overall_db, truth.n_locations());
    Ok(())
}

fn write_predictions(path: &Path, truth: &MagnitudeField, values: &ndarray::Array2<f64>, flags: &[bool]) -> CliResult<()> {
    let mut s = String::from("azimuth_deg,elevation_deg,out_of_coverage");
    for f in &truth.freq_grid_hz {
        s.push_str(&format!(",{f}"));
    }
    s.push('\n');
    for (i, d) in truth.directions.iter().enumerate() {
        s.push_str(&format!("{},{},{}", d.azimuth_deg, d.elevation_deg, flags[i]));
        for v in values.row(i) {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

fn parse_grid(s: &str) -> CliResult<Vec<Direction>> {
    let bad = || Failure::Usage(format!("unknown grid {s:?}"));
    let parts: Vec<&str> = s.split(':').collect();
    let num = |x: &str| x.parse::<f64>().map_err(|_| bad());
    match parts.as_slice() {
        ["fibonacci", n] => Ok(fibonacci_grid(num(n)? as usize, -90.0, 90.0)),
        ["ring", az, lo, hi, step] => {
            let (az, lo, hi, step) = (num(az)?, num(lo)?, num(hi)?, num(step)?);
            if az <= 0.0 || step <= 0.0 || hi < lo {
                return Err(bad());
            }
            let els: Vec<f64> = (0..).map(|i| lo + step * i as f64).take_while(|&e| e <= hi + 1e-9).collect();
            Ok(ring_grid((360.0 / az).round() as usize, &els))
        }
        _ => Err(bad()),
    }
}

fn cmd_synth(a: &SynthArgs) -> CliResult<()> {
    let dirs = parse_grid(&a.grid)?;
    let ds = SyntheticDataset::generate(&a.name, dirs, a.subjects, a.seed);
    let archive = synthetic_archive(&ds, a.sample_rate, a.seed)?;
    if let Some(parent) = a.out.parent() {
        fs::create_dir_all(parent)?;
    }
    save_archive(&archive, &a.out)?;
    println!(
        "wrote {} ({} subject-ears, {} directions)",
        a.out.display(),
        archive.subject_ears.len(),
        ds.directions.len()
    );
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build_global()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    match &cli.command {
        Command::Train(a) => cmd_train(a, cli.threads),
        Command::Experiment(ExperimentCmd::InterpR(a)) => cmd_interp(Setting::OursR, a, cli.threads),
        Command::Experiment(ExperimentCmd::InterpT(a)) => cmd_interp(Setting::OursT, a, cli.threads),
        Command::Experiment(ExperimentCmd::InterpE(a)) => cmd_interp(Setting::OursE, a, cli.threads),
        Command::Experiment(ExperimentCmd::CondGen(a)) => cmd_cond_gen(a, cli.threads),
        Command::Experiment(ExperimentCmd::LatentMorph(a)) => cmd_morph(a, cli.threads),
        Command::Baseline(a) => cmd_baseline(a, cli.threads),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    // flags only: the environment is deliberately not consulted
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let msg = match &f {
                Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => m,
            };
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}
