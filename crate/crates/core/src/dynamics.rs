//! Repeated generation and recognition from a corrupted image:
//! `z(t) = E_q[z | x(t)]`, `x(t + 1) = E_p[x | z(t)]`.

use rayon::prelude::*;

use crate::data::{corrupt_with, Dataset};
use crate::error::{Error, Result};
use crate::ndcore::{derive_seed, Rng, Tensor};
use crate::vae::VaeModel;

pub const DEFAULT_STEPS: usize = 80;

/// Trials are stepped together in fixed chunks of this many rows, so the
/// arithmetic seen by any trial does not depend on the worker count.
const CHUNK: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// `[(T + 1), input]`; row 0 is the corrupted start image.
    pub x_seq: Tensor<f32>,
    /// `[(T + 1), latent]`; row `t` is the encoder mean of `x_seq[t]`.
    pub z_seq: Tensor<f32>,
    pub label: u8,
    /// Row of the start image in the source dataset.
    pub source_index: usize,
    pub trial: usize,
    pub seed: u64,
    pub p: f64,
    pub steps: usize,
    /// False when a non-finite state cut the run short; the sequences then
    /// hold only the finite prefix.
    pub valid: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.z_seq.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn final_image(&self) -> &[f32] {
        self.x_seq.row(self.x_seq.rows() - 1)
    }
}

/// Where a trajectory's start image came from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialStart {
    pub label: u8,
    pub source_index: usize,
    pub trial: usize,
    pub seed: u64,
    pub p: f64,
}

/// Runs `steps` iterations from every row of `x0` in lockstep.
pub fn run_inference_rows(model: &VaeModel<f32>, x0: &Tensor<f32>, steps: usize, starts: &[TrialStart]) -> Result<Vec<Trajectory>> {
    let (n, width) = x0.dims2()?;
    if starts.len() != n {
        return Err(Error::Shape(format!("{} start records for {n} images", starts.len())));
    }
    let latent = model.latent_dim();
    let mut xs: Vec<Vec<f32>> = (0..n).map(|i| x0.row(i).to_vec()).collect();
    let mut zs: Vec<Vec<f32>> = vec![Vec::with_capacity((steps + 1) * latent); n];
    // `live[r]` is the trial held in row `r` of `current`
    let mut live: Vec<usize> = (0..n).collect();
    let mut current = x0.clone();
    for t in 0..=steps {
        let z = model.encode_mean_unchecked(&current)?;
        let keep = finite_rows(&z, &live, &mut zs);
        live = keep.iter().map(|&r| live[r]).collect();
        if t == steps || live.is_empty() {
            break;
        }
        let x = model.decode_unchecked(&z.select_rows(&keep))?;
        let keep = finite_rows(&x, &live, &mut xs);
        live = keep.iter().map(|&r| live[r]).collect();
        current = x.select_rows(&keep);
    }
    (0..n)
        .map(|i| {
            let rows = zs[i].len() / latent;
            let valid = rows == steps + 1;
            xs[i].truncate(rows * width);
            let x_seq = Tensor::new([rows, width], std::mem::take(&mut xs[i]))?;
            let z_seq = Tensor::new([rows, latent], std::mem::take(&mut zs[i]))?;
            let s = starts[i];
            Ok(Trajectory {
                x_seq,
                z_seq,
                label: s.label,
                source_index: s.source_index,
                trial: s.trial,
                seed: s.seed,
                p: s.p,
                steps,
                valid,
            })
        })
        .collect()
}

/// Appends each finite row of `m` to its trial's sequence and returns the
/// surviving row positions.
fn finite_rows(m: &Tensor<f32>, live: &[usize], seqs: &mut [Vec<f32>]) -> Vec<usize> {
    let mut keep = Vec::with_capacity(live.len());
    for (r, &i) in live.iter().enumerate() {
        if m.row(r).iter().all(|v| v.is_finite()) {
            seqs[i].extend_from_slice(m.row(r));
            keep.push(r);
        }
    }
    keep
}

/// Single trajectory from `x0`.
pub fn run_inference(model: &VaeModel<f32>, x0: &[f32], steps: usize) -> Result<Trajectory> {
    let start = TrialStart { label: 0, source_index: 0, trial: 0, seed: 0, p: 0.0 };
    let x = Tensor::new([1, x0.len()], x0.to_vec())?;
    Ok(run_inference_rows(model, &x, steps, &[start])?.remove(0))
}

/// Picks `n_trials` distinct images of `label` by a seeded shuffle.
pub fn select_trials(dataset: &Dataset, label: u8, n_trials: usize, seed: u64) -> Result<Vec<usize>> {
    let mut pool = dataset.indices_of(label);
    if pool.len() < n_trials {
        return Err(Error::InsufficientData(format!(
            "{n_trials} trials requested but label {label} has {} images",
            pool.len()
        )));
    }
    Rng::new(seed).shuffle(&mut pool);
    pool.truncate(n_trials);
    Ok(pool)
}

/// Corruption seed of trial `trial` under master seed `seed`.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    derive_seed(seed, trial as u64)
}

/// Runs one trajectory per entry of `sources`, corrupting each start image
/// with its own derived seed. Output order follows `sources`.
pub fn run_trials(
    model: &VaeModel<f32>,
    dataset: &Dataset,
    sources: &[usize],
    p: f64,
    steps: usize,
    noise_seed: u64,
    workers: usize,
) -> Result<Vec<Trajectory>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("noise fraction {p} outside [0, 1]")));
    }
    let work = |chunk_index: usize, chunk: &[usize]| -> Result<Vec<Trajectory>> {
        let mut rows = Vec::with_capacity(chunk.len() * dataset.images().row_len());
        let mut starts = Vec::with_capacity(chunk.len());
        for (k, &src) in chunk.iter().enumerate() {
            let trial = chunk_index * CHUNK + k;
            let seed = trial_seed(noise_seed, trial);
            rows.extend(corrupt_with(dataset.image(src), p, &mut Rng::new(seed))?);
            starts.push(TrialStart { label: dataset.label(src), source_index: src, trial, seed, p });
        }
        let x0 = Tensor::new([chunk.len(), dataset.images().row_len()], rows)?;
        run_inference_rows(model, &x0, steps, &starts)
    };
    let chunks: Vec<(usize, &[usize])> = sources.chunks(CHUNK).enumerate().collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    let parts: Vec<Result<Vec<Trajectory>>> = pool.install(|| chunks.par_iter().map(|&(i, c)| work(i, c)).collect());
    let mut out = Vec::with_capacity(sources.len());
    for part in parts {
        out.extend(part?);
    }
    Ok(out)
}

/// `n_trials` trajectories from distinct training images of `label`.
pub fn run_batch(
    model: &VaeModel<f32>,
    dataset: &Dataset,
    label: u8,
    n_trials: usize,
    p: f64,
    steps: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<Trajectory>> {
    let sources = select_trials(dataset, label, n_trials, seed)?;
    run_trials(model, dataset, &sources, p, steps, derive_seed(seed, u64::MAX), workers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Split, IMAGE_PIXELS};
    use crate::vae::VaeDims;

    fn tiny(seed: u64) -> VaeModel<f32> {
        VaeModel::new(VaeDims { input: IMAGE_PIXELS, hidden: 7, latent: 3 }, &mut Rng::new(seed))
    }

    fn small(seed: u64) -> VaeModel<f32> {
        VaeModel::new(VaeDims { input: 12, hidden: 7, latent: 3 }, &mut Rng::new(seed))
    }

    fn toy_dataset(n: usize) -> Dataset {
        let mut rng = Rng::new(77);
        let images = Tensor::from_fn([n, IMAGE_PIXELS], |_| rng.uniform() as f32);
        let labels = (0..n).map(|i| (i % 3) as u8).collect();
        Dataset::new(images, labels, Split::Train).unwrap()
    }

    #[test]
    fn zero_steps_is_the_start_and_its_code() {
        let m = small(1);
        let x0: Vec<f32> = (0..12).map(|i| i as f32 / 12.0).collect();
        let tr = run_inference(&m, &x0, 0).unwrap();
        assert_eq!(tr.x_seq.data(), &x0[..]);
        assert_eq!(tr.z_seq.data(), m.encode_mean(&Tensor::vector(x0)).unwrap().data());
        assert!(tr.valid);
    }

    #[test]
    fn one_step_matches_composition() {
        let m = small(2);
        let x0: Vec<f32> = (0..12).map(|i| ((i * 7) % 5) as f32 / 5.0).collect();
        let tr = run_inference(&m, &x0, 1).unwrap();
        let z0 = m.encode_mean(&Tensor::vector(x0.clone())).unwrap();
        let x1 = m.decode(&z0).unwrap();
        let z1 = m.encode_mean(&x1).unwrap();
        assert_eq!(tr.x_seq.row(1), x1.data());
        assert_eq!(tr.z_seq.row(0), z0.data());
        assert_eq!(tr.z_seq.row(1), z1.data());
        assert_eq!(tr.len(), 2);
    }

    #[test]
    fn fixed_point_stays_put() {
        // zero model: decode is constant 0.5, so x = 0.5 is a fixed point
        let m = VaeModel::<f32>::zeros(VaeDims { input: 12, hidden: 7, latent: 3 });
        let tr = run_inference(&m, &[0.5; 12], 10).unwrap();
        for t in 0..=10 {
            assert_eq!(tr.x_seq.row(t), &[0.5; 12]);
            assert_eq!(tr.z_seq.row(t), &[0.0; 3]);
        }
    }

    #[test]
    fn concatenation_equals_longer_run() {
        let m = small(3);
        let x0: Vec<f32> = (0..12).map(|i| (i % 2) as f32).collect();
        let long = run_inference(&m, &x0, 9).unwrap();
        let first = run_inference(&m, &x0, 4).unwrap();
        let second = run_inference(&m, first.final_image(), 5).unwrap();
        assert_eq!(&long.z_seq.data()[..5 * 3], first.z_seq.data());
        assert_eq!(&long.z_seq.data()[4 * 3..], second.z_seq.data());
        assert_eq!(&long.x_seq.data()[4 * 12..], second.x_seq.data());
    }

    #[test]
    fn states_stay_clamped() {
        let m = small(4);
        let tr = run_inference(&m, &[1.0; 12], 6).unwrap();
        for t in 1..=6 {
            assert!(tr.x_seq.row(t).iter().all(|&v| (1e-7..=1.0 - 1e-7).contains(&(v as f64))));
        }
    }

    #[test]
    fn non_finite_state_truncates_and_flags() {
        let mut m = small(5);
        m.mu_head.bias.data_mut()[0] = f32::NAN;
        let tr = run_inference(&m, &[0.3; 12], 5).unwrap();
        assert!(!tr.valid);
        assert!(tr.is_empty());
    }

    #[test]
    fn batch_of_one_clean_trial_is_the_clean_trajectory() {
        let m = tiny(6);
        let ds = toy_dataset(30);
        let batch = run_batch(&m, &ds, 1, 1, 0.0, 5, 9, 1).unwrap();
        let src = batch[0].source_index;
        assert_eq!(ds.label(src), 1);
        let direct = run_inference(&m, ds.image(src), 5).unwrap();
        assert_eq!(batch[0].z_seq, direct.z_seq);
        assert_eq!(batch[0].x_seq, direct.x_seq);
    }

    #[test]
    fn batches_are_deterministic_and_worker_independent() {
        let m = tiny(7);
        let ds = toy_dataset(300);
        let a = run_batch(&m, &ds, 2, 80, 0.2, 6, 11, 1).unwrap();
        let b = run_batch(&m, &ds, 2, 80, 0.2, 6, 11, 1).unwrap();
        let c = run_batch(&m, &ds, 2, 80, 0.2, 6, 11, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        let mut sources: Vec<usize> = a.iter().map(|t| t.source_index).collect();
        sources.sort();
        sources.dedup();
        assert_eq!(sources.len(), 80);
    }

    #[test]
    fn insufficient_images_rejected() {
        let ds = toy_dataset(9);
        assert!(matches!(run_batch(&tiny(1), &ds, 0, 4, 0.1, 2, 1, 1), Err(Error::InsufficientData(_))));
    }
}
