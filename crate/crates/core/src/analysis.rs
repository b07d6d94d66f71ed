//! Latent-space analyses: per-label concepts, distance trajectories,
//! minimum-distance stages, cosine similarity, PCA and active units.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::data::{Dataset, NUM_CLASSES};
use crate::dynamics::{run_trials, select_trials, Trajectory};
use crate::error::{Error, Result};
use crate::ndcore::{derive_seed, Tensor};
use crate::vae::VaeModel;

/// Rows encoded per forward pass when building memories.
const ENCODE_CHUNK: usize = 500;

pub const DEFAULT_ACTIVE_THRESHOLD: f64 = 0.1;

/// Compensated sum of `values` taken in ascending order, so the result does
/// not depend on the order the values arrive in.
pub fn stable_sum(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for &v in values.iter() {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + comp
}

pub fn stable_mean(values: &mut [f64]) -> f64 {
    let n = values.len() as f64;
    stable_sum(values) / n
}

/// Memories (encoder means of clean images), their per-label means and the
/// mean of those.
#[derive(Clone, Debug)]
pub struct ConceptSet {
    /// `[N, latent]`, row `i` belongs to image `i` of the source dataset.
    pub memories: Tensor<f32>,
    pub labels: Vec<u8>,
    /// `[10, latent]`
    pub concepts: Tensor<f32>,
    pub abstract_concept: Tensor<f32>,
}

impl ConceptSet {
    pub fn from_memories(memories: Tensor<f32>, labels: Vec<u8>) -> Result<Self> {
        let (n, d) = memories.dims2()?;
        if n != labels.len() {
            return Err(Error::Shape(format!("{n} memories but {} labels", labels.len())));
        }
        let mut concepts = Tensor::zeros([NUM_CLASSES, d]);
        for c in 0..NUM_CLASSES {
            let rows: Vec<usize> = (0..n).filter(|&i| labels[i] as usize == c).collect();
            if rows.is_empty() {
                return Err(Error::InsufficientData(format!("no memories with label {c}")));
            }
            for j in 0..d {
                let mut col: Vec<f64> = rows.iter().map(|&i| memories.row(i)[j] as f64).collect();
                concepts.row_mut(c)[j] = stable_mean(&mut col) as f32;
            }
        }
        let abstract_concept = Tensor::from_fn([d], |j| {
            let mut col: Vec<f64> = (0..NUM_CLASSES).map(|c| concepts.row(c)[j] as f64).collect();
            stable_mean(&mut col) as f32
        });
        Ok(ConceptSet { memories, labels, concepts, abstract_concept })
    }

    pub fn latent_dim(&self) -> usize {
        self.abstract_concept.len()
    }

    pub fn concept(&self, label: u8) -> &[f32] {
        self.concepts.row(label as usize)
    }

    pub fn memory(&self, index: usize) -> &[f32] {
        self.memories.row(index)
    }
}

/// Encoder means of every image in `data`.
pub fn encode_dataset(model: &VaeModel<f32>, data: &Dataset) -> Result<Tensor<f32>> {
    let mut out = Vec::with_capacity(data.len() * model.latent_dim());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(ENCODE_CHUNK) {
        out.extend_from_slice(model.encode_mean(&data.images().select_rows(chunk))?.data());
    }
    Tensor::new([data.len(), model.latent_dim()], out)
}

pub fn build_concepts(model: &VaeModel<f32>, data: &Dataset) -> Result<ConceptSet> {
    ConceptSet::from_memories(encode_dataset(model, data)?, data.labels().to_vec())
}

fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>().sqrt()
}

/// `d(t) = |z(t) - target|` for every row of `z_seq`.
pub fn distance_trajectory(z_seq: &Tensor<f32>, target: &[f32]) -> Result<Vec<f64>> {
    let (_, d) = z_seq.dims2()?;
    if d != target.len() {
        return Err(Error::Shape(format!("trajectory has width {d}, target {}", target.len())));
    }
    Ok((0..z_seq.rows()).map(|t| euclidean(z_seq.row(t), target)).collect())
}

/// Smallest value and the first index reaching it.
pub fn min_distance(d: &[f64]) -> Result<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (t, &v) in d.iter().enumerate() {
        if best.is_none_or(|(b, _)| v < b) {
            best = Some((v, t));
        }
    }
    best.ok_or_else(|| Error::InsufficientData("empty distance sequence".into()))
}

/// Pointwise mean of equal-length curves.
pub fn mean_curve(curves: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = curves.first().ok_or_else(|| Error::InsufficientData("no curves to average".into()))?;
    if curves.iter().any(|c| c.len() != first.len()) {
        return Err(Error::Shape("curves differ in length".into()));
    }
    Ok((0..first.len())
        .map(|t| {
            let mut col: Vec<f64> = curves.iter().map(|c| c[t]).collect();
            stable_mean(&mut col)
        })
        .collect())
}

/// Pairwise cosine similarity of the rows of `vectors`.
pub fn cosine_similarity_matrix(vectors: &Tensor<f32>) -> Result<Tensor<f64>> {
    let (k, _) = vectors.dims2()?;
    let norms: Vec<f64> = (0..k)
        .map(|i| vectors.row(i).iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt())
        .collect();
    if let Some(i) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::InvalidArgument(format!("row {i} has zero norm")));
    }
    let mut c = Tensor::zeros([k, k]);
    for i in 0..k {
        for j in i..k {
            let dot: f64 = vectors.row(i).iter().zip(vectors.row(j)).map(|(&a, &b)| a as f64 * b as f64).sum();
            let v = if i == j { 1.0 } else { (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0) };
            c.row_mut(i)[j] = v;
            c.row_mut(j)[i] = v;
        }
    }
    Ok(c)
}

/// Mean absolute off-diagonal entry of a square matrix.
pub fn mean_abs_off_diagonal(c: &Tensor<f64>) -> Result<f64> {
    let (k, k2) = c.dims2()?;
    if k != k2 || k < 2 {
        return Err(Error::Shape(format!("need a square matrix of size >= 2, got {:?}", c.shape())));
    }
    let mut vals: Vec<f64> =
        (0..k).flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| c.row(i)[j].abs()).collect();
    Ok(stable_mean(&mut vals))
}

#[derive(Clone, Debug, Serialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Row `k` is the `k`-th principal axis (unit norm).
    pub components: Vec<Vec<f64>>,
    /// Descending covariance eigenvalues.
    pub eigenvalues: Vec<f64>,
    /// `cumulative_ratio[k] = sum(eigenvalues[..=k]) / sum(eigenvalues)`
    pub cumulative_ratio: Vec<f64>,
}

impl Pca {
    /// Projects rows of `x` onto the top `k` axes.
    pub fn project(&self, x: &Tensor<f32>, k: usize) -> Result<Vec<Vec<f64>>> {
        let (n, d) = x.dims2()?;
        if d != self.mean.len() || k > self.components.len() {
            return Err(Error::Shape(format!("cannot project width {d} onto {k} of {} axes", self.components.len())));
        }
        Ok((0..n)
            .map(|i| {
                self.components[..k]
                    .iter()
                    .map(|axis| x.row(i).iter().zip(&self.mean).zip(axis).map(|((&v, m), a)| (v as f64 - m) * a).sum())
                    .collect()
            })
            .collect())
    }

    /// Fewest components whose cumulative ratio reaches `ratio`.
    pub fn components_for(&self, ratio: f64) -> usize {
        self.cumulative_ratio.iter().position(|&r| r >= ratio).map_or(self.cumulative_ratio.len(), |k| k + 1)
    }
}

/// Sample covariance (divided by `n - 1`) of mean-centred rows.
pub fn covariance(x: &Tensor<f32>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let (n, d) = x.dims2()?;
    if n < 2 {
        return Err(Error::InsufficientData(format!("covariance needs at least 2 rows, got {n}")));
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| {
            let mut col: Vec<f64> = (0..n).map(|i| x.row(i)[j] as f64).collect();
            stable_mean(&mut col)
        })
        .collect();
    let centred = DMatrix::from_fn(n, d, |i, j| x.row(i)[j] as f64 - mean[j]);
    let cov = centred.tr_mul(&centred) / (n - 1) as f64;
    Ok((mean, cov))
}

/// Principal components of the rows of `latents`.
pub fn pca(latents: &Tensor<f32>) -> Result<Pca> {
    let (mean, cov) = covariance(latents)?;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    // round-off can leave tiny negative eigenvalues on rank-deficient data
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("all rows are identical; variance is zero".into()));
    }
    let components = order.iter().map(|&k| eig.eigenvectors.column(k).iter().copied().collect()).collect();
    let mut acc = 0.0;
    let mut cumulative_ratio: Vec<f64> = eigenvalues
        .iter()
        .map(|&l| {
            acc += l;
            acc / total
        })
        .collect();
    if let Some(last) = cumulative_ratio.last_mut() {
        *last = 1.0;
    }
    Ok(Pca { mean, components, eigenvalues, cumulative_ratio })
}

/// Per-dimension standard deviation over rows, and how many exceed
/// `threshold`.
pub fn active_neuron_count(latents: &Tensor<f32>, threshold: f64) -> Result<(usize, Vec<f64>)> {
    let (n, d) = latents.dims2()?;
    if n < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 rows, got {n}")));
    }
    let stds: Vec<f64> = (0..d)
        .map(|j| {
            let mut col: Vec<f64> = (0..n).map(|i| latents.row(i)[j] as f64).collect();
            let m = stable_mean(&mut col);
            let mut sq: Vec<f64> = col.iter().map(|v| (v - m).powi(2)).collect();
            (stable_sum(&mut sq) / (n - 1) as f64).sqrt()
        })
        .collect();
    Ok((stds.iter().filter(|&&s| s > threshold).count(), stds))
}

/// Level of the memory hierarchy a trajectory comes closest to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// The trial's own source memory (stage I).
    Memory,
    /// The label concept (stage II).
    Concept,
    /// The mean of all concepts (stage III).
    Abstract,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Memory, Stage::Concept, Stage::Abstract];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Memory => "memory",
            Stage::Concept => "concept",
            Stage::Abstract => "abstract",
        }
    }

    pub fn numeral(self) -> &'static str {
        match self {
            Stage::Memory => "I",
            Stage::Concept => "II",
            Stage::Abstract => "III",
        }
    }
}

/// Smallest of three means; ties go to the more specific level.
pub fn winning_stage(means: [f64; 3]) -> Stage {
    let mut best = 0;
    for k in 1..3 {
        if means[k] < means[best] {
            best = k;
        }
    }
    Stage::ALL[best]
}

/// Distances from every state of `traj` to its memory, its concept and the
/// abstract concept.
pub fn hierarchy_distances(traj: &Trajectory, concepts: &ConceptSet) -> Result<[Vec<f64>; 3]> {
    if traj.source_index >= concepts.memories.rows() {
        return Err(Error::Shape(format!("source image {} has no memory", traj.source_index)));
    }
    Ok([
        distance_trajectory(&traj.z_seq, concepts.memory(traj.source_index))?,
        distance_trajectory(&traj.z_seq, concepts.concept(traj.label))?,
        distance_trajectory(&traj.z_seq, concepts.abstract_concept.data())?,
    ])
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageRow {
    pub p: f64,
    pub trials: usize,
    /// Mean minimum distance to memory, concept, abstract concept.
    pub mean: [f64; 3],
    /// Standard error `sd / sqrt(trials)` of each mean.
    pub standard_error: [f64; 3],
    pub winner: Stage,
}

/// Summarises per-trial minimum distances `[memory, concept, abstract]`.
pub fn stage_row(p: f64, minima: &[[f64; 3]]) -> Result<StageRow> {
    let n = minima.len();
    if n == 0 {
        return Err(Error::InsufficientData("no trials".into()));
    }
    let mut mean = [0.0; 3];
    let mut standard_error = [0.0; 3];
    for k in 0..3 {
        let mut col: Vec<f64> = minima.iter().map(|m| m[k]).collect();
        mean[k] = stable_mean(&mut col);
        if n > 1 {
            let mut sq: Vec<f64> = col.iter().map(|v| (v - mean[k]).powi(2)).collect();
            standard_error[k] = (stable_sum(&mut sq) / (n - 1) as f64).sqrt() / (n as f64).sqrt();
        }
    }
    Ok(StageRow { p, trials: n, mean, standard_error, winner: winning_stage(mean) })
}

#[derive(Clone, Debug, Serialize)]
pub struct StageReport {
    pub label: u8,
    pub rows: Vec<StageRow>,
}

impl StageReport {
    /// Smallest `p` won by `stage`, if any.
    pub fn first_win(&self, stage: Stage) -> Option<f64> {
        self.rows.iter().find(|r| r.winner == stage).map(|r| r.p)
    }
}

/// Noise grid `0, step, 2 step, ..., max` computed without accumulation drift.
pub fn p_grid(max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(0.0..=1.0).contains(&max) {
        return Err(Error::InvalidArgument(format!("bad noise grid max {max} step {step}")));
    }
    let n = (max / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| ((k as f64 * step) * 1e9).round() / 1e9).collect())
}

/// Minimum distances per trial for one noise level.
pub fn trial_minima(trajectories: &[Trajectory], concepts: &ConceptSet) -> Result<Vec<[f64; 3]>> {
    trajectories
        .iter()
        .filter(|t| t.valid)
        .map(|t| {
            let d = hierarchy_distances(t, concepts)?;
            Ok([min_distance(&d[0])?.0, min_distance(&d[1])?.0, min_distance(&d[2])?.0])
        })
        .collect()
}

/// Stage analysis over `grid`. The same `n_trials` source images are used
/// at every `p`; corruption draws are derived per `(p index, trial)`.
#[allow(clippy::too_many_arguments)]
pub fn stage_classification(
    model: &VaeModel<f32>,
    concepts: &ConceptSet,
    data: &Dataset,
    label: u8,
    grid: &[f64],
    n_trials: usize,
    steps: usize,
    seed: u64,
    workers: usize,
) -> Result<StageReport> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty noise grid".into()));
    }
    if concepts.memories.rows() != data.len() {
        return Err(Error::Shape("concepts were not built from this dataset".into()));
    }
    let sources = select_trials(data, label, n_trials, seed)?;
    let rows = grid
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let trajs = run_trials(model, data, &sources, p, steps, derive_seed(seed, k as u64 + 1), workers)?;
            stage_row(p, &trial_minima(&trajs, concepts)?)
        })
        .collect::<Result<_>>()?;
    Ok(StageReport { label, rows })
}
