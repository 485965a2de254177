//! Gradient-origin training of a latent-conditioned field.
//!
//! For every subject-ear in a mini-batch the latent is inferred by a unit
//! gradient step of the masked MSE from the origin, the loss is re-evaluated
//! at that latent, and the resulting weight gradients are averaged over the
//! batch and applied with Adam.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adam::{adam_step, AdamState};
use crate::data::{Direction, MagnitudeField};
use crate::error::{Error, Result};
use crate::gradients::{batch_objective, grad_latent_precision, GradMode};
use crate::preprocess::extend_azimuth_wrap;
use crate::siren::{coords_matrix, LatentGenerator, SirenNetwork, DEFAULT_OMEGA0};

/// A point on the learned subject manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode(pub Vec<f64>);

impl LatentCode {
    pub fn origin(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// `(1 - t) * self + t * other`.
    pub fn lerp(&self, other: &LatentCode, t: f64) -> LatentCode {
        LatentCode(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| (1.0 - t) * a + t * b)
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::Config(format!("unknown precision {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub latent_dim: usize,
    pub lr0: f64,
    pub lr_decay_coeff: f64,
    pub grad_mode: GradMode,
    /// Unit latent steps from the origin; 0 keeps every latent at the origin.
    pub latent_steps: usize,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 18,
            latent_dim: 32,
            lr0: 3e-4,
            lr_decay_coeff: 0.01,
            grad_mode: GradMode::Exact,
            latent_steps: 1,
            seed: 0,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr0)));
        }
        if !(self.lr_decay_coeff.is_finite() && self.lr_decay_coeff >= 0.0) {
            return Err(Error::Config("decay coefficient must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Network shape; the paper configuration is two hidden layers of 2048.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelShape {
    pub hidden: usize,
    pub n_hidden: usize,
    pub omega0: f64,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            hidden: 2048,
            n_hidden: 2,
            omega0: DEFAULT_OMEGA0,
        }
    }
}

pub fn build_network(cfg: &TrainConfig, shape: &ModelShape, n_bins: usize) -> Result<SirenNetwork> {
    SirenNetwork::with_shape(
        cfg.latent_dim,
        shape.hidden,
        shape.n_hidden,
        n_bins,
        shape.omega0,
        cfg.seed,
    )
}

/// `mu0 / (1 + c * epoch)`.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 / (1.0 + cfg.lr_decay_coeff * epoch as f64)
}

/// One subject-ear's observations: normalized coordinates, dB targets and a
/// row mask. Rows with `mask == false` are padding.
#[derive(Debug, Clone, PartialEq)]
pub struct EarRows {
    pub coords: Array2<f64>,
    pub targets: Array2<f64>,
    pub mask: Vec<bool>,
}

impl EarRows {
    pub fn new(dirs: &[Direction], targets: Array2<f64>) -> Result<Self> {
        if dirs.len() != targets.nrows() {
            return Err(Error::Shape(format!(
                "{} directions vs {} target rows",
                dirs.len(),
                targets.nrows()
            )));
        }
        Ok(Self {
            coords: coords_matrix(dirs),
            mask: vec![true; dirs.len()],
            targets,
        })
    }

    pub fn from_field(field: &MagnitudeField) -> Self {
        Self::new(&field.directions, field.values_db.clone()).expect("field shapes agree")
    }

    /// Training view of a field: wrap-extended across the azimuth seam.
    pub fn for_training(field: &MagnitudeField) -> Self {
        Self::from_field(&extend_azimuth_wrap(field).field)
    }

    pub fn n_rows(&self) -> usize {
        self.mask.len()
    }

    pub fn n_valid(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Copy padded to `rows` rows; padding gets zero coordinates and targets.
    pub fn padded(&self, rows: usize) -> EarRows {
        let n = self.n_rows();
        assert!(rows >= n, "cannot pad {n} rows down to {rows}");
        let mut coords = Array2::zeros((rows, 2));
        coords.slice_mut(s![..n, ..]).assign(&self.coords);
        let mut targets = Array2::zeros((rows, self.targets.ncols()));
        targets.slice_mut(s![..n, ..]).assign(&self.targets);
        let mut mask = self.mask.clone();
        mask.resize(rows, false);
        EarRows { coords, targets, mask }
    }
}

/// Up to `batch_size` ears padded to a common row count.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub ears: Vec<EarRows>,
}

impl TrainingBatch {
    pub fn new(ears: &[&EarRows]) -> Result<Self> {
        if ears.is_empty() {
            return Err(Error::Invariant("empty batch".into()));
        }
        let rows = ears.iter().map(|e| e.n_rows()).max().unwrap();
        Ok(Self {
            ears: ears.iter().map(|e| e.padded(rows)).collect(),
        })
    }
}

/// Mean squared difference over unmasked rows and all columns.
pub fn masked_mse(pred: &Array2<f64>, target: &Array2<f64>, mask: &[bool]) -> Result<f64> {
    if pred.dim() != target.dim() || mask.len() != pred.nrows() {
        return Err(Error::Shape(format!(
            "pred {:?}, target {:?}, mask {}",
            pred.dim(),
            target.dim(),
            mask.len()
        )));
    }
    let valid = mask.iter().filter(|&&m| m).count();
    if valid == 0 || pred.ncols() == 0 {
        return Err(Error::Invariant("no unmasked cells".into()));
    }
    let mut acc = 0.0;
    for (r, &m) in mask.iter().enumerate() {
        if m {
            acc += pred
                .row(r)
                .iter()
                .zip(target.row(r))
                .map(|(p, t)| (p - t) * (p - t))
                .sum::<f64>();
        }
    }
    Ok(acc / (valid * pred.ncols()) as f64)
}

/// Unit gradient steps on the latent starting from the origin.
pub fn infer_latent<G: LatentGenerator + ?Sized>(gen: &G, rows: &EarRows, steps: usize) -> Result<LatentCode> {
    infer_latent_with(gen, rows, steps, Precision::F64)
}

pub fn infer_latent_with<G: LatentGenerator + ?Sized>(
    gen: &G,
    rows: &EarRows,
    steps: usize,
    precision: Precision,
) -> Result<LatentCode> {
    if rows.n_valid() == 0 {
        return Err(Error::Invariant("no observations to infer a latent from".into()));
    }
    let mut z = vec![0.0; gen.latent_dim()];
    for _ in 0..steps {
        let (_, g) = grad_latent_precision(gen, rows, &z, precision == Precision::F32)?;
        for (zi, gi) in z.iter_mut().zip(g) {
            *zi -= gi;
        }
    }
    Ok(LatentCode(z))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub wall_seconds: f64,
}

/// Owns a generator and its optimizer state across epochs.
pub struct Trainer<G: LatentGenerator> {
    pub model: G,
    pub cfg: TrainConfig,
    pub adam: AdamState,
}

impl<G: LatentGenerator> Trainer<G> {
    pub fn new(model: G, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if model.latent_dim() != cfg.latent_dim {
            return Err(Error::Config(format!(
                "model latent dim {} differs from configured {}",
                model.latent_dim(),
                cfg.latent_dim
            )));
        }
        let adam = AdamState::new(model.params());
        Ok(Self { model, cfg, adam })
    }

    /// Seeded epoch order: a Fisher-Yates shuffle of ear indices.
    pub fn epoch_order(&self, n: usize, epoch: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        idx
    }

    /// One Adam step on a batch; returns the batch loss before the step.
    pub fn step(&mut self, batch: &TrainingBatch, lr: f64) -> Result<f64> {
        let (loss, grads) = match self.cfg.precision {
            Precision::F32 => batch_objective::<f32, G>(
                &self.model,
                &batch.ears,
                self.cfg.grad_mode,
                self.cfg.latent_steps,
            )?,
            Precision::F64 => batch_objective::<f64, G>(
                &self.model,
                &batch.ears,
                self.cfg.grad_mode,
                self.cfg.latent_steps,
            )?,
        };
        adam_step(self.model.params_mut(), &grads, &mut self.adam, lr)?;
        Ok(loss)
    }

    /// Shuffles, splits into batches (the last one may be short) and takes
    /// one Adam step per batch. Returns the mean batch loss.
    pub fn train_epoch(&mut self, ears: &[EarRows], epoch: usize) -> Result<EpochStats> {
        if ears.is_empty() {
            return Err(Error::Invariant("no training ears".into()));
        }
        let start = Instant::now();
        let lr = lr_schedule(epoch, &self.cfg);
        let order = self.epoch_order(ears.len(), epoch);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(self.cfg.batch_size) {
            let members: Vec<&EarRows> = chunk.iter().map(|&i| &ears[i]).collect();
            let batch = TrainingBatch::new(&members)?;
            total += self.step(&batch, lr)?;
            batches += 1;
        }
        Ok(EpochStats {
            epoch,
            lr,
            mean_loss: total / batches as f64,
            wall_seconds: start.elapsed().as_secs_f64(),
        })
    }
}

/// Where and how often to drop checkpoints during [`fit`].
#[derive(Debug, Clone)]
pub struct Checkpointing {
    pub dir: PathBuf,
    pub every: usize,
}

/// Runs `cfg.epochs` epochs, appending `epoch,lr,mean_loss,wall_seconds`
/// lines to `log` when given.
pub fn fit(
    trainer: &mut Trainer<SirenNetwork>,
    ears: &[EarRows],
    mut log: Option<&mut dyn Write>,
    checkpoints: Option<&Checkpointing>,
) -> Result<Vec<EpochStats>> {
    if let Some(w) = log.as_deref_mut() {
        writeln!(w, "epoch,lr,mean_loss,wall_seconds")?;
    }
    let mut history = Vec::with_capacity(trainer.cfg.epochs);
    for epoch in 0..trainer.cfg.epochs {
        let st = trainer.train_epoch(ears, epoch)?;
        log::info!("epoch {} lr {:.3e} loss {:.4}", epoch, st.lr, st.mean_loss);
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{},{},{},{}", st.epoch, st.lr, st.mean_loss, st.wall_seconds)?;
        }
        if let Some(cp) = checkpoints {
            if cp.every > 0 && (epoch + 1) % cp.every == 0 {
                trainer
                    .model
                    .save(cp.dir.join(format!("checkpoint_epoch{:04}.hfnf", epoch + 1)))?;
            }
        }
        history.push(st);
    }
    Ok(history)
}

/// Builds a network for `ears` and trains it for `cfg.epochs` epochs.
pub fn train_model(ears: &[EarRows], cfg: &TrainConfig, shape: &ModelShape) -> Result<SirenNetwork> {
    let k = ears
        .first()
        .ok_or_else(|| Error::Invariant("no training ears".into()))?
        .targets
        .ncols();
    let mut trainer = Trainer::new(build_network(cfg, shape, k)?, cfg.clone())?;
    fit(&mut trainer, ears, None, None)?;
    Ok(trainer.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn schedule_values() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_schedule(0, &cfg), 0.0003);
        assert!((lr_schedule(100, &cfg) - 0.00015).abs() < 1e-18);
        assert!((lr_schedule(300, &cfg) - 0.000075).abs() < 1e-18);
    }

    #[test]
    fn defaults_follow_reference_configuration() {
        let cfg = TrainConfig::default();
        assert_eq!((cfg.epochs, cfg.batch_size, cfg.latent_dim), (300, 18, 32));
        assert_eq!(cfg.lr0, 0.0003);
        let shape = ModelShape::default();
        assert_eq!((shape.hidden, shape.n_hidden), (2048, 2));
    }

    #[test]
    fn masked_mse_cases() {
        let t = array![[1.0, 2.0], [3.0, 4.0], [9.0, 9.0]];
        let mask = [true, true, false];
        assert_eq!(masked_mse(&t, &t, &mask).unwrap(), 0.0);
        let p = &t + 2.0;
        assert_eq!(masked_mse(&p, &t, &mask).unwrap(), 4.0);
        // padding content is irrelevant
        let mut p2 = p.clone();
        p2[[2, 0]] = 1e9;
        assert_eq!(masked_mse(&p2, &t, &mask).unwrap(), 4.0);
        assert!(masked_mse(&p, &t, &[false; 3]).is_err());
    }

    #[test]
    fn padding_keeps_counts() {
        let dirs = [Direction::new(0.0, 0.0), Direction::new(90.0, 10.0)];
        let r = EarRows::new(&dirs, array![[1.0], [2.0]]).unwrap();
        let short = EarRows::new(&dirs[..1], array![[5.0]]).unwrap();
        let b = TrainingBatch::new(&[&r, &short]).unwrap();
        assert_eq!(b.ears[1].n_rows(), 2);
        assert_eq!(b.ears[1].n_valid(), 1);
        assert_eq!(b.ears[1].targets[[1, 0]], 0.0);
    }

    #[test]
    fn lerp_endpoints() {
        let a = LatentCode(vec![1.0, -2.0]);
        let b = LatentCode(vec![3.0, 0.5]);
        assert_eq!(a.lerp(&b, 0.0), a);
        assert_eq!(a.lerp(&b, 1.0), b);
        assert_eq!(a.lerp(&a, 0.5), a);
    }
}
