//! Run configuration and the two sweeps: latent width against concept
//! geometry, and latent width against held-out bound.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{build_concepts, cosine_similarity_matrix, distance_trajectory, mean_abs_off_diagonal, mean_curve};
use crate::data::{load_mnist, Dataset, Split};
use crate::dynamics::run_batch;
use crate::error::{Error, Result};
use crate::ndcore::{derive_seed, Rng, Tensor};
use crate::vae::{default_schedule, test_elbo, train, EpochLog, LrStage, TrainConfig, VaeDims, VaeModel, DEFAULT_HIDDEN};

/// Seed streams derived from a run's master seed.
pub mod streams {
    pub const TRAIN: u64 = 1;
    pub const TRIALS: u64 = 2;
    pub const STAGES: u64 = 3;
    pub const EVAL: u64 = 4;
    pub const DISCRIMINATOR: u64 = 5;
}

pub const SWEEP_NZ_GRID: [usize; 5] = [2, 5, 10, 20, 100];
pub const DEFAULT_GEN_NZ_GRID: [usize; 9] = [2, 5, 8, 11, 14, 20, 32, 64, 100];
pub const SWEEP_LR_GRID: [f64; 3] = [0.01, 0.001, 0.0001];
pub const SWEEP_BATCH_GRID: [usize; 3] = [50, 100, 200];

/// Everything needed to reproduce one training run and the analyses on it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub recon_samples: usize,
    pub schedule: Vec<LrStage>,
    pub batch_size: usize,
    /// Leading training images to use; `None` means the whole split.
    pub train_images: Option<usize>,
    pub seed: u64,
    pub steps: usize,
    pub p: f64,
    pub label: u8,
    pub trials: usize,
    pub stage_trials: usize,
    pub p_max: f64,
    pub p_step: f64,
    pub data_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            latent_dim: 100,
            hidden: DEFAULT_HIDDEN,
            recon_samples: 2,
            schedule: default_schedule(60),
            batch_size: 100,
            train_images: None,
            seed: 2019,
            steps: 80,
            p: 0.2,
            label: 6,
            trials: 300,
            stage_trials: 500,
            p_max: 0.5,
            p_step: 0.05,
            data_dir: None,
            output_dir: PathBuf::from("runs"),
            workers: 1,
        }
    }
}

impl RunConfig {
    /// 10,000 training images, 20 epochs, 100 trials per noise level.
    pub fn desk() -> Self {
        RunConfig { schedule: default_schedule(20), train_images: Some(10_000), stage_trials: 100, ..Self::default() }
    }

    pub fn epochs(&self) -> usize {
        self.schedule.iter().map(|s| s.epochs).sum()
    }

    pub fn dims(&self) -> VaeDims {
        VaeDims { input: crate::data::IMAGE_PIXELS, hidden: self.hidden, latent: self.latent_dim }
    }

    pub fn stream(&self, stream: u64) -> u64 {
        derive_seed(self.seed, stream)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.latent_dim == 0 || self.hidden == 0 || self.recon_samples == 0 || self.batch_size == 0 {
            return bad("latent_dim, hidden, recon_samples and batch_size must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.p) || !(0.0..=1.0).contains(&self.p_max) || !(self.p_step > 0.0) {
            return bad(format!("noise settings p={} p_max={} p_step={} out of range", self.p, self.p_max, self.p_step));
        }
        if self.label as usize >= crate::data::NUM_CLASSES {
            return bad(format!("label {} is not a digit", self.label));
        }
        if self.schedule.iter().any(|s| !(s.learning_rate >= 0.0)) {
            return bad("learning rates must be non-negative".into());
        }
        Ok(())
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(crate::data::default_data_dir)
    }

    pub fn load_train(&self) -> Result<Dataset> {
        let full = load_mnist(&self.data_dir(), Split::Train)?;
        Ok(match self.train_images {
            Some(n) => full.head(n),
            None => full,
        })
    }

    pub fn load_test(&self) -> Result<Dataset> {
        load_mnist(&self.data_dir(), Split::Test)
    }
}

/// Trains a fresh model as described by `config`.
pub fn train_model(
    config: &RunConfig,
    data: &Dataset,
    checkpoint_dir: Option<&Path>,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<(VaeModel<f32>, Vec<EpochLog>)> {
    config.validate()?;
    let mut rng = Rng::new(config.stream(streams::TRAIN));
    let mut model = VaeModel::new(config.dims(), &mut rng);
    model.recon_samples = config.recon_samples;
    let tc = TrainConfig {
        schedule: config.schedule.clone(),
        batch_size: config.batch_size,
        seed: config.seed,
        checkpoint_dir: checkpoint_dir.map(Path::to_path_buf),
    };
    let log = train(&mut model, data, &tc, &mut rng, on_epoch)?;
    Ok((model, log))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Diverged { epoch: usize, batch: usize },
    Failed { message: String },
}

impl CellStatus {
    fn from_error(e: &Error) -> Self {
        match e {
            Error::Divergence { epoch, batch } => CellStatus::Diverged { epoch: *epoch, batch: *batch },
            other => CellStatus::Failed { message: other.to_string() },
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct NzCell {
    pub config: RunConfig,
    pub status: CellStatus,
    pub checkpoint: Option<PathBuf>,
    /// Mean distance to the label concept, `t = 0..=T`.
    pub concept_curve: Option<Vec<f64>>,
    /// `[10, 10]` concept cosine similarities, row-major.
    pub cosine: Option<Vec<f64>>,
    pub mean_abs_off_diagonal: Option<f64>,
}

impl NzCell {
    pub fn cosine_matrix(&self) -> Option<Tensor<f64>> {
        self.cosine.clone().and_then(|c| Tensor::new([10, 10], c).ok())
    }
}

/// Subdirectory and config of sweep cell `latent_dim`.
pub fn nz_cell_config(base: &RunConfig, latent_dim: usize) -> RunConfig {
    RunConfig {
        latent_dim,
        seed: derive_seed(base.seed, latent_dim as u64),
        output_dir: base.output_dir.join(format!("nz_{latent_dim}")),
        ..base.clone()
    }
}

/// Trains, builds concepts and runs the trial batch for one latent width.
pub fn run_nz_cell(config: &RunConfig, data: &Dataset) -> NzCell {
    let result = (|| -> Result<NzCell> {
        let (model, _) = train_model(config, data, None, |_| {})?;
        let ckpt = config.output_dir.join("vae.ckpt");
        model.save(&ckpt, config.seed, config.epochs())?;
        let concepts = build_concepts(&model, data)?;
        let trajs = run_batch(&model, data, config.label, config.trials, config.p, config.steps, config.stream(streams::TRIALS), 1)?;
        let curves = trajs
            .iter()
            .filter(|t| t.valid)
            .map(|t| distance_trajectory(&t.z_seq, concepts.concept(config.label)))
            .collect::<Result<Vec<_>>>()?;
        let cos = cosine_similarity_matrix(&concepts.concepts)?;
        Ok(NzCell {
            config: config.clone(),
            status: CellStatus::Ok,
            checkpoint: Some(ckpt),
            concept_curve: Some(mean_curve(&curves)?),
            mean_abs_off_diagonal: Some(mean_abs_off_diagonal(&cos)?),
            cosine: Some(cos.into_data()),
        })
    })();
    result.unwrap_or_else(|e| NzCell {
        config: config.clone(),
        status: CellStatus::from_error(&e),
        checkpoint: None,
        concept_curve: None,
        cosine: None,
        mean_abs_off_diagonal: None,
    })
}

fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))
}

/// One cell per latent width, run up to `workers` at a time. Cell failures
/// are recorded in the cell, never dropped.
pub fn nz_sweep(base: &RunConfig, nz_values: &[usize], data: &Dataset, workers: usize) -> Result<Vec<NzCell>> {
    if nz_values.is_empty() {
        return Err(Error::InvalidArgument("no latent widths given".into()));
    }
    let configs: Vec<RunConfig> = nz_values.iter().map(|&nz| nz_cell_config(base, nz)).collect();
    Ok(worker_pool(workers)?.install(|| configs.par_iter().map(|c| run_nz_cell(c, data)).collect()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenCell {
    pub latent_dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub status: CellStatus,
    pub test_elbo: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GenTable {
    pub cells: Vec<GenCell>,
    /// Per latent width, the highest test bound over converged cells.
    pub best: Vec<(usize, Option<f64>)>,
}

impl GenTable {
    pub fn best_for(&self, latent_dim: usize) -> Option<f64> {
        self.best.iter().find(|(n, _)| *n == latent_dim).and_then(|(_, b)| *b)
    }
}

/// Single-stage training with one `(learning rate, batch size)` pair.
pub fn gen_cell_config(base: &RunConfig, latent_dim: usize, learning_rate: f64, batch_size: usize, epochs: usize) -> RunConfig {
    let tag = format!("nz{latent_dim}_lr{learning_rate}_b{batch_size}");
    let mut seed = base.seed;
    for b in tag.bytes() {
        seed = derive_seed(seed, b as u64);
    }
    RunConfig {
        latent_dim,
        batch_size,
        schedule: vec![LrStage { learning_rate, epochs }],
        seed,
        output_dir: base.output_dir.join(tag),
        ..base.clone()
    }
}

pub fn run_gen_cell(config: &RunConfig, train_set: &Dataset, test_set: &Dataset) -> GenCell {
    let result = train_model(config, train_set, None, |_| {})
        .and_then(|(model, _)| {
            model.save(&config.output_dir.join("vae.ckpt"), config.seed, config.epochs())?;
            test_elbo(&model, test_set, config.stream(streams::EVAL))
        })
        .and_then(|v| if v.is_finite() { Ok(v) } else { Err(Error::NonFinite("test bound".into())) });
    let stage = config.schedule[0];
    GenCell {
        latent_dim: config.latent_dim,
        learning_rate: stage.learning_rate,
        batch_size: config.batch_size,
        epochs: stage.epochs,
        seed: config.seed,
        status: result.as_ref().map_or_else(CellStatus::from_error, |_| CellStatus::Ok),
        test_elbo: result.ok(),
    }
}

/// Full grid of latent widths x learning rates x batch sizes.
#[allow(clippy::too_many_arguments)]
pub fn generalization_sweep(
    base: &RunConfig,
    nz_values: &[usize],
    lr_grid: &[f64],
    batch_grid: &[usize],
    epochs: usize,
    train_set: &Dataset,
    test_set: &Dataset,
    workers: usize,
) -> Result<GenTable> {
    if nz_values.is_empty() || lr_grid.is_empty() || batch_grid.is_empty() {
        return Err(Error::InvalidArgument("every sweep grid needs at least one value".into()));
    }
    let mut configs = Vec::new();
    for &nz in nz_values {
        for &lr in lr_grid {
            for &b in batch_grid {
                configs.push(gen_cell_config(base, nz, lr, b, epochs));
            }
        }
    }
    let cells: Vec<GenCell> =
        worker_pool(workers)?.install(|| configs.par_iter().map(|c| run_gen_cell(c, train_set, test_set)).collect());
    let best = nz_values
        .iter()
        .map(|&nz| {
            let b = cells.iter().filter(|c| c.latent_dim == nz).filter_map(|c| c.test_elbo).max_by(f64::total_cmp);
            (nz, b)
        })
        .collect();
    Ok(GenTable { cells, best })
}

/// Writes `value` as pretty JSON, creating parent directories.
pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format("json", e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format("config", e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_json() {
        let c = RunConfig::desk();
        let text = serde_json::to_string(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        let partial: RunConfig = serde_json::from_str(r#"{"latent_dim": 14}"#).unwrap();
        assert_eq!(partial.latent_dim, 14);
        assert_eq!(partial.batch_size, 100);
        assert!(serde_json::from_str::<RunConfig>(r#"{"latnet_dim": 14}"#).is_err());
    }

    #[test]
    fn desk_scale_settings() {
        let c = RunConfig::desk();
        assert_eq!(c.epochs(), 20);
        assert_eq!(c.train_images, Some(10_000));
        assert_eq!(RunConfig::default().epochs(), 60);
    }

    #[test]
    fn cell_configs_have_distinct_seeds_and_dirs() {
        let base = RunConfig::default();
        let a = gen_cell_config(&base, 14, 0.001, 100, 5);
        let b = gen_cell_config(&base, 14, 0.001, 50, 5);
        assert_ne!(a.seed, b.seed);
        assert_ne!(a.output_dir, b.output_dir);
        assert_eq!(a, gen_cell_config(&base, 14, 0.001, 100, 5));
        assert_ne!(nz_cell_config(&base, 2).seed, nz_cell_config(&base, 100).seed);
    }

    #[test]
    fn validation_rejects_bad_values() {
        assert!(RunConfig { p: 1.5, ..RunConfig::default() }.validate().is_err());
        assert!(RunConfig { latent_dim: 0, ..RunConfig::default() }.validate().is_err());
        assert!(RunConfig { label: 10, ..RunConfig::default() }.validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
    }
}
