//! Convolutional digit classifier used to label the final states of
//! inference runs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::mean_curve;
use crate::checkpoint::{self, CheckpointHeader, ModelKind};
use crate::data::{Dataset, IMAGE_SIDE, NUM_CLASSES};
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::ndcore::{Rng, Tensor};
use crate::nn::{Activation, AdamState, Conv2d, Dense, Dropout, Layer, MaxPool2d, Sequential};

const EVAL_CHUNK: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorDims {
    pub conv1: usize,
    pub conv2: usize,
    pub hidden: usize,
}

impl Default for DiscriminatorDims {
    fn default() -> Self {
        DiscriminatorDims { conv1: 32, conv2: 64, hidden: 128 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub dims: DiscriminatorDims,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig { dims: DiscriminatorDims::default(), epochs: 12, batch_size: 128, learning_rate: 1e-3, seed: 0 }
    }
}

/// conv 3x3, relu, conv 3x3, relu, max-pool 2, dropout 0.25, flatten,
/// dense, relu, dropout 0.5, dense, softmax.
#[derive(Clone, Debug)]
pub struct DiscriminatorModel {
    pub dims: DiscriminatorDims,
    pub stack: Sequential<f32>,
}

fn flat_width(dims: &DiscriminatorDims) -> usize {
    let side = (IMAGE_SIDE - 4) / 2;
    dims.conv2 * side * side
}

impl DiscriminatorModel {
    pub fn new(dims: DiscriminatorDims, rng: &mut Rng) -> Result<Self> {
        let stack = Sequential::new(vec![
            Layer::Conv2d(Conv2d::new(1, dims.conv1, rng)),
            Layer::activation(Activation::Relu),
            Layer::Conv2d(Conv2d::new(dims.conv1, dims.conv2, rng)),
            Layer::activation(Activation::Relu),
            Layer::MaxPool2d(MaxPool2d::new()),
            Layer::Dropout(Dropout::new(0.25)?),
            Layer::flatten(),
            Layer::Dense(Dense::new(flat_width(&dims), dims.hidden, rng)),
            Layer::activation(Activation::Relu),
            Layer::Dropout(Dropout::new(0.5)?),
            Layer::Dense(Dense::new(dims.hidden, NUM_CLASSES, rng)),
            Layer::activation(Activation::Softmax),
        ]);
        Ok(DiscriminatorModel { dims, stack })
    }

    fn as_images(x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let (n, d) = x.dims2()?;
        if d != IMAGE_SIDE * IMAGE_SIDE {
            return Err(Error::Shape(format!("classifier expects {} pixels per row, got {d}", IMAGE_SIDE * IMAGE_SIDE)));
        }
        x.clone().reshape([n, 1, IMAGE_SIDE, IMAGE_SIDE])
    }

    /// Class probabilities `[N, 10]` for rows of flattened images.
    pub fn predict_proba(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let (n, _) = x.dims2()?;
        let mut out = Vec::with_capacity(n * NUM_CLASSES);
        let idx: Vec<usize> = (0..n).collect();
        for chunk in idx.chunks(EVAL_CHUNK) {
            let images = Self::as_images(&x.select_rows(chunk))?;
            out.extend_from_slice(self.stack.infer(&images)?.data());
        }
        Tensor::new([n, NUM_CLASSES], out)
    }

    pub fn predict(&self, x: &Tensor<f32>) -> Result<Vec<u8>> {
        let p = self.predict_proba(x)?;
        Ok((0..p.rows()).map(|i| argmax(p.row(i))).collect())
    }

    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::InsufficientData("evaluation set is empty".into()));
        }
        let pred = self.predict(data.images())?;
        Ok(pred.iter().zip(data.labels()).filter(|(a, b)| a == b).count() as f64 / data.len() as f64)
    }

    /// Mean cross-entropy and its gradient on one minibatch; returns the loss.
    fn train_step(&mut self, x: &Tensor<f32>, labels: &[u8], rng: &mut Rng) -> Result<f64> {
        let probs = self.stack.forward(&Self::as_images(x)?, Some(rng))?;
        let n = labels.len();
        let mut loss = 0.0f64;
        // softmax and cross-entropy fused: d loss / d logits = (p - onehot) / n
        let mut d_logits = probs.clone();
        for (i, &l) in labels.iter().enumerate() {
            loss -= (probs.row(i)[l as usize].max(1e-12) as f64).ln();
            d_logits.row_mut(i)[l as usize] -= 1.0;
        }
        d_logits.map_inplace(|v| v / n as f32);
        self.stack.zero_grad();
        let last = self.stack.layers.len() - 1;
        self.stack.backward_from(last, &d_logits)?;
        Ok(loss / n as f64)
    }

    pub fn save(&self, path: &Path, seed: u64, epoch: usize) -> Result<()> {
        let header = CheckpointHeader::new::<f32>(ModelKind::Discriminator, 0, self.dims.hidden, seed, epoch);
        let blocks: Vec<(String, &Tensor<f32>)> = self.stack.params();
        checkpoint::write(path, &header, &blocks)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = checkpoint::read::<f32>(path)?;
        ck.expect_kind(ModelKind::Discriminator)?;
        let conv1 = ck.block("0.weight")?.shape()[0];
        let conv2 = ck.block("2.weight")?.shape()[0];
        let dims = DiscriminatorDims { conv1, conv2, hidden: ck.header.hidden_width as usize };
        let mut model = Self::new(dims, &mut Rng::new(0))?;
        for (name, p, _) in model.stack.params_mut() {
            let src = ck.block(&name)?;
            if src.shape() != p.shape() {
                return Err(Error::CheckpointMismatch(format!("block {name}: stored {:?}, model needs {:?}", src.shape(), p.shape())));
            }
            *p = src.clone();
        }
        Ok(model)
    }
}

pub fn argmax(row: &[f32]) -> u8 {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best as u8
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiscriminatorEpoch {
    pub epoch: usize,
    pub train_loss: f64,
}

/// Adam on mean cross-entropy with dropout active.
pub fn train_discriminator(
    data: &Dataset,
    config: &DiscriminatorConfig,
    mut on_epoch: impl FnMut(&DiscriminatorEpoch),
) -> Result<(DiscriminatorModel, Vec<DiscriminatorEpoch>)> {
    if data.is_empty() {
        return Err(Error::InsufficientData("training set is empty".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut rng = Rng::new(config.seed);
    let mut model = DiscriminatorModel::new(config.dims, &mut rng)?;
    let mut adam = AdamState::<f32>::new(config.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let x = data.images().select_rows(chunk);
            let labels: Vec<u8> = chunk.iter().map(|&i| data.label(i)).collect();
            let loss = model.train_step(&x, &labels, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: b });
            }
            adam.step(model.stack.params_mut().into_iter().map(|(_, p, g)| (p, &*g)).collect())?;
            total += loss;
            batches += 1;
        }
        let entry = DiscriminatorEpoch { epoch, train_loss: total / batches as f64 };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok((model, log))
}

/// Class probabilities of each trajectory's last image.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FinalStates {
    pub trials: Vec<usize>,
    /// `[trials, 10]`
    pub probabilities: Vec<[f32; NUM_CLASSES]>,
    pub labels: Vec<u8>,
}

impl FinalStates {
    /// Label predicted most often (smallest label on ties) and its count.
    pub fn modal_label(&self) -> Option<(u8, usize)> {
        let mut counts = [0usize; NUM_CLASSES];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        let best = (0..NUM_CLASSES).max_by_key(|&k| (counts[k], std::cmp::Reverse(k)))?;
        (counts[best] > 0).then_some((best as u8, counts[best]))
    }
}

pub fn classify_final_states(disc: &DiscriminatorModel, trajectories: &[Trajectory]) -> Result<FinalStates> {
    let complete: Vec<&Trajectory> = trajectories.iter().filter(|t| t.valid).collect();
    if complete.is_empty() {
        return Err(Error::InsufficientData("no complete trajectories".into()));
    }
    let rows: Vec<&[f32]> = complete.iter().map(|t| t.final_image()).collect();
    let probs = disc.predict_proba(&Tensor::from_rows(&rows)?)?;
    let probabilities: Vec<[f32; NUM_CLASSES]> =
        (0..probs.rows()).map(|i| probs.row(i).try_into().expect("ten classes")).collect();
    let labels = probabilities.iter().map(|p| argmax(p)).collect();
    Ok(FinalStates { trials: complete.iter().map(|t| t.trial).collect(), probabilities, labels })
}

/// Mean distance curve over trials whose final label is `keep_label`, and
/// over all trials.
pub fn conditional_mean_trajectory(curves: &[Vec<f64>], final_labels: &[u8], keep_label: u8) -> Result<(Vec<f64>, Vec<f64>)> {
    if curves.len() != final_labels.len() {
        return Err(Error::Shape(format!("{} curves but {} labels", curves.len(), final_labels.len())));
    }
    let kept: Vec<Vec<f64>> =
        curves.iter().zip(final_labels).filter(|(_, &l)| l == keep_label).map(|(c, _)| c.clone()).collect();
    if kept.is_empty() {
        return Err(Error::InsufficientData(format!("no trial ended as label {keep_label}")));
    }
    Ok((mean_curve(&kept)?, mean_curve(curves)?))
}
