//! Variational auto-encoder with a Bernoulli decoder.
//!
//! Encoder: `x -> tanh(hidden) -> (mu, logvar)`; decoder:
//! `z -> tanh(hidden) -> sigmoid -> p`, with `p` clamped to
//! `[1e-7, 1 - 1e-7]`. The objective per image is
//!
//! ```text
//! ELBO = 1/L sum_l sum_k [x_k log p_k + (1 - x_k) log(1 - p_k)]
//!        - ( -1/2 sum_j (1 + logvar_j - mu_j^2 - exp(logvar_j)) )
//! ```
//!
//! with `z_l = mu + exp(logvar / 2) * eps_l`. Training minimises the
//! batch mean of `-ELBO`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, CheckpointHeader, ModelKind};
use crate::data::{Dataset, IMAGE_PIXELS};
use crate::error::{Error, Result};
use crate::ndcore::{sample_standard_normal, Rng, Scalar, Tensor};
use crate::nn::{sigmoid, Activation, AdamState, Dense, Layer, Objective, Sequential};

pub const DEFAULT_HIDDEN: usize = 1024;
pub const DEFAULT_RECON_SAMPLES: usize = 2;
/// Decoder means are clamped into `[CLAMP, 1 - CLAMP]`.
pub const CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaeDims {
    pub input: usize,
    pub hidden: usize,
    pub latent: usize,
}

impl VaeDims {
    pub fn mnist(latent: usize) -> Self {
        VaeDims { input: IMAGE_PIXELS, hidden: DEFAULT_HIDDEN, latent }
    }
}

/// Per-image (or batch-mean) decomposition of the bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElboBreakdown {
    pub kl_term: f64,
    pub recon_term: f64,
    pub elbo: f64,
}

impl ElboBreakdown {
    pub fn new(kl_term: f64, recon_term: f64) -> Self {
        ElboBreakdown { kl_term, recon_term, elbo: recon_term - kl_term }
    }
}

/// Closed-form `KL(N(mu, exp(logvar)) || N(0, I))`.
pub fn kl_divergence<T: Scalar>(mu: &[T], logvar: &[T]) -> f64 {
    -0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(&m, &lv)| {
            let (m, lv) = (m.as_f64(), lv.as_f64());
            1.0 + lv - m * m - lv.exp()
        })
        .sum::<f64>()
}

/// Bernoulli log-likelihood `sum_k x_k log p_k + (1 - x_k) log(1 - p_k)`.
pub fn bernoulli_log_likelihood<T: Scalar>(x: &[T], p: &[T]) -> f64 {
    x.iter()
        .zip(p)
        .map(|(&x, &p)| {
            let (x, p) = (x.as_f64(), p.as_f64());
            x * p.ln() + (1.0 - x) * (1.0 - p).ln()
        })
        .sum()
}

/// `z = mu + exp(logvar / 2) * eps`.
pub fn reparameterize_with<T: Scalar>(mu: &Tensor<T>, logvar: &Tensor<T>, eps: &Tensor<T>) -> Result<Tensor<T>> {
    mu.expect_same_shape(logvar, "reparameterize")?;
    mu.expect_same_shape(eps, "reparameterize")?;
    let half = T::lit(0.5);
    let data = mu
        .data()
        .iter()
        .zip(logvar.data())
        .zip(eps.data())
        .map(|((&m, &lv), &e)| m + (lv * half).exp() * e)
        .collect();
    Tensor::new(mu.shape().to_vec(), data)
}

/// Draws `eps ~ N(0, I)` and reparameterizes.
pub fn reparameterize<T: Scalar>(mu: &Tensor<T>, logvar: &Tensor<T>, rng: &mut Rng) -> Result<Tensor<T>> {
    let eps = sample_standard_normal(rng, mu.shape())?;
    reparameterize_with(mu, logvar, &eps)
}

#[derive(Clone, Debug)]
pub struct VaeModel<T: Scalar = f32> {
    dims: VaeDims,
    /// Monte-Carlo samples `L` of the reconstruction term.
    pub recon_samples: usize,
    /// `Dense(input -> hidden), tanh`
    pub encoder: Sequential<T>,
    pub mu_head: Dense<T>,
    pub logvar_head: Dense<T>,
    /// `Dense(latent -> hidden), tanh, Dense(hidden -> input)`; emits logits.
    pub decoder: Sequential<T>,
}

impl<T: Scalar> VaeModel<T> {
    /// Glorot-initialised model.
    pub fn new(dims: VaeDims, rng: &mut Rng) -> Self {
        let encoder = Sequential::new(vec![
            Layer::Dense(Dense::new(dims.input, dims.hidden, rng)),
            Layer::activation(Activation::Tanh),
        ]);
        let mu_head = Dense::new(dims.hidden, dims.latent, rng);
        let logvar_head = Dense::new(dims.hidden, dims.latent, rng);
        let decoder = Sequential::new(vec![
            Layer::Dense(Dense::new(dims.latent, dims.hidden, rng)),
            Layer::activation(Activation::Tanh),
            Layer::Dense(Dense::new(dims.hidden, dims.input, rng)),
        ]);
        VaeModel { dims, recon_samples: DEFAULT_RECON_SAMPLES, encoder, mu_head, logvar_head, decoder }
    }

    /// Every weight and bias zero.
    pub fn zeros(dims: VaeDims) -> Self {
        let mut m = Self::new(dims, &mut Rng::new(0));
        for (_, p, _) in m.params_mut() {
            p.fill(T::zero());
        }
        m
    }

    pub fn dims(&self) -> VaeDims {
        self.dims
    }

    pub fn latent_dim(&self) -> usize {
        self.dims.latent
    }

    fn as_batch(x: &Tensor<T>, width: usize, what: &str) -> Result<Tensor<T>> {
        if x.rank() == 1 && x.len() == width {
            return x.clone().reshape([1, width]);
        }
        if x.rank() == 2 && x.row_len() == width {
            return Ok(x.clone());
        }
        Err(Error::Shape(format!("{what} expects [{width}] or [N, {width}], got {:?}", x.shape())))
    }

    /// Encoder mean and log-variance for every row of `x` (`[N, input]` or a
    /// single `[input]` vector; output rank follows the input).
    pub fn encode(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let batch = Self::as_batch(x, self.dims.input, "encode")?;
        let h = self.encoder.infer(&batch)?;
        let mut mu = self.mu_head.infer(&h)?;
        let mut logvar = self.logvar_head.infer(&h)?;
        mu.check_finite("encoder mean")?;
        logvar.check_finite("encoder log-variance")?;
        if x.rank() == 1 {
            mu = mu.reshape([self.dims.latent])?;
            logvar = logvar.reshape([self.dims.latent])?;
        }
        Ok((mu, logvar))
    }

    /// Encoder mean only.
    pub fn encode_mean(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let batch = Self::as_batch(x, self.dims.input, "encode")?;
        let mut mu = self.mu_head.infer(&self.encoder.infer(&batch)?)?;
        mu.check_finite("encoder mean")?;
        if x.rank() == 1 {
            mu = mu.reshape([self.dims.latent])?;
        }
        Ok(mu)
    }

    fn clamp_probability(v: T) -> T {
        v.max(T::lit(CLAMP)).min(T::lit(1.0 - CLAMP))
    }

    /// Clamped Bernoulli means for every row of `z`.
    pub fn decode(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let batch = Self::as_batch(z, self.dims.latent, "decode")?;
        let mut p = self.decoder.infer(&batch)?;
        p.check_finite("decoder pre-activation")?;
        p.map_inplace(|a| Self::clamp_probability(sigmoid(a)));
        if z.rank() == 1 {
            p = p.reshape([self.dims.input])?;
        }
        Ok(p)
    }

    /// Encoder means without the finiteness check, for callers that handle
    /// non-finite rows themselves.
    pub fn encode_mean_unchecked(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let batch = Self::as_batch(x, self.dims.input, "encode")?;
        self.mu_head.infer(&self.encoder.infer(&batch)?)
    }

    /// Decoder means without the finiteness check; a non-finite logit stays
    /// NaN instead of being clamped.
    pub fn decode_unchecked(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let batch = Self::as_batch(z, self.dims.latent, "decode")?;
        let mut p = self.decoder.infer(&batch)?;
        p.map_inplace(|a| if a.is_finite() { Self::clamp_probability(sigmoid(a)) } else { T::nan() });
        Ok(p)
    }

    /// Single-image bound with `L` fresh reparameterized samples.
    pub fn elbo(&self, x: &Tensor<T>, rng: &mut Rng) -> Result<ElboBreakdown> {
        let batch = Self::as_batch(x, self.dims.input, "elbo")?;
        let n = batch.rows();
        let eps = self.draw_eps_per_image(n, rng)?;
        let per = self.elbo_with_eps(&batch, &eps)?;
        let mean = |f: fn(&ElboBreakdown) -> f64| per.iter().map(f).sum::<f64>() / n as f64;
        Ok(ElboBreakdown::new(mean(|e| e.kl_term), mean(|e| e.recon_term)))
    }

    /// `eps` laid out `[L, N, latent]`, drawn image by image (all `L` samples
    /// of image 0 first) so a batch reproduces the single-image draws.
    pub fn draw_eps_per_image(&self, n: usize, rng: &mut Rng) -> Result<Tensor<T>> {
        let (l, d) = (self.recon_samples, self.dims.latent);
        let mut eps = Tensor::zeros([l, n, d]);
        for i in 0..n {
            for s in 0..l {
                for j in 0..d {
                    eps.data_mut()[(s * n + i) * d + j] = T::lit(rng.normal());
                }
            }
        }
        Ok(eps)
    }

    /// Per-row bound for a batch given frozen noise `eps: [L, N, latent]`.
    pub fn elbo_with_eps(&self, x: &Tensor<T>, eps: &Tensor<T>) -> Result<Vec<ElboBreakdown>> {
        let (n, l, d) = (x.rows(), self.recon_samples, self.dims.latent);
        if eps.shape() != [l, n, d] {
            return Err(Error::Shape(format!("eps must be [{l}, {n}, {d}], got {:?}", eps.shape())));
        }
        let (mu, logvar) = self.encode(x)?;
        let z = Self::stack_samples(&mu, &logvar, eps)?;
        let p = self.decode(&z)?;
        Ok((0..n)
            .map(|i| {
                let kl = kl_divergence(mu.row(i), logvar.row(i));
                let recon = (0..l).map(|s| bernoulli_log_likelihood(x.row(i), p.row(s * n + i))).sum::<f64>() / l as f64;
                ElboBreakdown::new(kl, recon)
            })
            .collect())
    }

    fn stack_samples(mu: &Tensor<T>, logvar: &Tensor<T>, eps: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, d) = mu.dims2()?;
        let l = eps.rows();
        let mut z = Vec::with_capacity(l * n * d);
        let half = T::lit(0.5);
        for s in 0..l {
            for i in 0..n {
                let e = &eps.data()[(s * n + i) * d..(s * n + i + 1) * d];
                for j in 0..d {
                    z.push(mu.row(i)[j] + (logvar.row(i)[j] * half).exp() * e[j]);
                }
            }
        }
        Tensor::new([l * n, d], z)
    }

    /// Forward and backward pass for the batch-mean loss `-ELBO`, accumulating
    /// parameter gradients. Returns the batch-mean breakdown.
    pub fn loss_and_backward(&mut self, x: &Tensor<T>, eps: &Tensor<T>) -> Result<ElboBreakdown> {
        let (n, l, d) = (x.rows(), self.recon_samples, self.dims.latent);
        if x.row_len() != self.dims.input || eps.shape() != [l, n, d] {
            return Err(Error::Shape(format!("batch {:?} / eps {:?} do not match the model", x.shape(), eps.shape())));
        }
        let h = self.encoder.forward(x, None)?;
        let mu = self.mu_head.forward(&h)?;
        let logvar = self.logvar_head.forward(&h)?;
        let z = Self::stack_samples(&mu, &logvar, eps)?;
        let logits = self.decoder.forward(&z, None)?;

        let (lo, hi) = (T::lit(CLAMP), T::lit(1.0 - CLAMP));
        let grad_scale = T::lit(1.0 / (n * l) as f64);
        let mut d_logits = Tensor::zeros(logits.shape().to_vec());
        let mut recon = 0.0f64;
        for s in 0..l {
            for i in 0..n {
                let row = s * n + i;
                let xr = x.row(i);
                let ar = logits.row(row);
                let gr = d_logits.row_mut(row);
                for k in 0..xr.len() {
                    let raw = sigmoid(ar[k]);
                    let p = raw.max(lo).min(hi);
                    let (xv, pv) = (xr[k].as_f64(), p.as_f64());
                    recon += xv * pv.ln() + (1.0 - xv) * (1.0 - pv).ln();
                    // d/da [x log s(a) + (1-x) log(1-s(a))] = x - s(a); zero where clamped
                    if raw > lo && raw < hi {
                        gr[k] = (raw - xr[k]) * grad_scale;
                    }
                }
            }
        }
        let recon = recon / (n * l) as f64;
        let kl = (0..n).map(|i| kl_divergence(mu.row(i), logvar.row(i))).sum::<f64>() / n as f64;
        if !recon.is_finite() || !kl.is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }

        let dz = self.decoder.backward(&d_logits)?;
        let inv_n = T::lit(1.0 / n as f64);
        let half = T::lit(0.5);
        let mut d_mu = mu.scale(inv_n);
        let mut d_logvar = logvar.map(|lv| half * (lv.exp() - T::one()) * inv_n);
        for s in 0..l {
            for i in 0..n {
                let g = dz.row(s * n + i);
                let e = &eps.data()[(s * n + i) * d..(s * n + i + 1) * d];
                let lv = logvar.row(i).to_vec();
                for j in 0..d {
                    d_mu.row_mut(i)[j] += g[j];
                    d_logvar.row_mut(i)[j] += g[j] * e[j] * half * (lv[j] * half).exp();
                }
            }
        }
        let mut dh = self.mu_head.backward(&d_mu)?;
        dh.axpy(T::one(), &self.logvar_head.backward(&d_logvar)?)?;
        self.encoder.backward(&dh)?;
        Ok(ElboBreakdown::new(kl, recon))
    }

    pub fn zero_grad(&mut self) {
        for (_, _, g) in self.params_mut() {
            g.fill(T::zero());
        }
    }

    /// `(name, param, grad)` in checkpoint order.
    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (n, p, g) in self.encoder.params_mut() {
            out.push((format!("encoder.{n}"), p, g));
        }
        out.push(("mu.weight".into(), &mut self.mu_head.weight, &mut self.mu_head.grad_weight));
        out.push(("mu.bias".into(), &mut self.mu_head.bias, &mut self.mu_head.grad_bias));
        out.push(("logvar.weight".into(), &mut self.logvar_head.weight, &mut self.logvar_head.grad_weight));
        out.push(("logvar.bias".into(), &mut self.logvar_head.bias, &mut self.logvar_head.grad_bias));
        for (n, p, g) in self.decoder.params_mut() {
            out.push((format!("decoder.{n}"), p, g));
        }
        out
    }

    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> =
            self.encoder.params().into_iter().map(|(n, p)| (format!("encoder.{n}"), p)).collect();
        out.push(("mu.weight".into(), &self.mu_head.weight));
        out.push(("mu.bias".into(), &self.mu_head.bias));
        out.push(("logvar.weight".into(), &self.logvar_head.weight));
        out.push(("logvar.bias".into(), &self.logvar_head.bias));
        out.extend(self.decoder.params().into_iter().map(|(n, p)| (format!("decoder.{n}"), p)));
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    pub fn save(&self, path: &Path, seed: u64, epoch: usize) -> Result<()> {
        let header = CheckpointHeader::new::<T>(ModelKind::Vae, self.dims.latent, self.dims.hidden, seed, epoch);
        checkpoint::write(path, &header, &self.params())
    }

    /// Loads a VAE checkpoint; `expected_latent` guards against mixing up
    /// models of different latent width.
    pub fn load(path: &Path, expected_latent: Option<usize>) -> Result<(Self, CheckpointHeader)> {
        let ck = checkpoint::read::<T>(path)?;
        ck.expect_kind(ModelKind::Vae)?;
        let latent = ck.header.latent_dim as usize;
        if let Some(want) = expected_latent.filter(|&w| w != latent) {
            return Err(Error::CheckpointMismatch(format!("checkpoint has N_z = {latent}, expected {want}")));
        }
        let input = ck.block("encoder.0.weight")?.shape().get(1).copied().unwrap_or(0);
        let dims = VaeDims { input, hidden: ck.header.hidden_width as usize, latent };
        let mut model = Self::zeros(dims);
        for (name, p, _) in model.params_mut() {
            let src = ck.block(&name)?;
            if src.shape() != p.shape() {
                return Err(Error::CheckpointMismatch(format!(
                    "block {name}: stored {:?}, model needs {:?}",
                    src.shape(),
                    p.shape()
                )));
            }
            *p = src.clone();
        }
        Ok((model, ck.header))
    }
}

/// One stage of the stepped learning-rate schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrStage {
    pub learning_rate: f64,
    pub epochs: usize,
}

/// Default schedule: 5e-4, 1e-4, 5e-5 over equal thirds of `total_epochs`
/// (earlier stages take the remainder).
pub fn default_schedule(total_epochs: usize) -> Vec<LrStage> {
    let rates = [5e-4, 1e-4, 5e-5];
    let base = total_epochs / 3;
    let extra = total_epochs % 3;
    rates
        .iter()
        .enumerate()
        .map(|(i, &learning_rate)| LrStage { learning_rate, epochs: base + usize::from(i < extra) })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub schedule: Vec<LrStage>,
    pub batch_size: usize,
    /// Written to every checkpoint header.
    pub seed: u64,
    /// When set, `stage{k}.ckpt` is written after each stage and
    /// `last_good.ckpt` on divergence.
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub stage: usize,
    pub learning_rate: f64,
    /// Batch-mean breakdown averaged over the epoch's minibatches.
    pub train: ElboBreakdown,
}

/// Adam ascent on the bound, one pass over a reshuffled `data` per epoch.
///
/// On a non-finite loss the model is rolled back to the end of the last
/// completed epoch and [`Error::Divergence`] is returned.
pub fn train(
    model: &mut VaeModel<f32>,
    data: &Dataset,
    config: &TrainConfig,
    rng: &mut Rng,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    if data.is_empty() {
        return Err(Error::InsufficientData("training set is empty".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut adam = AdamState::<f32>::new(0.0);
    let mut logs = Vec::new();
    let mut last_good = model.clone();
    let mut epoch = 0;
    let mut order: Vec<usize> = (0..data.len()).collect();

    for (stage, lr) in config.schedule.iter().enumerate() {
        adam.learning_rate = lr.learning_rate;
        for _ in 0..lr.epochs {
            rng.shuffle(&mut order);
            let (mut kl, mut recon, mut batches) = (0.0, 0.0, 0usize);
            for (b, chunk) in order.chunks(config.batch_size).enumerate() {
                let x = data.images().select_rows(chunk);
                let eps: Tensor<f32> = sample_standard_normal(rng, &[model.recon_samples, chunk.len(), model.latent_dim()])?;
                model.zero_grad();
                let step = model.loss_and_backward(&x, &eps).and_then(|e| {
                    if e.elbo.is_finite() {
                        Ok(e)
                    } else {
                        Err(Error::NonFinite("training loss".into()))
                    }
                });
                let breakdown = match step {
                    Ok(e) => e,
                    Err(Error::NonFinite(_)) => return Err(diverged(model, last_good, config, epoch, b)),
                    Err(e) => return Err(e),
                };
                let params: Vec<_> = model.params_mut().into_iter().map(|(_, p, g)| (p, &*g)).collect();
                adam.step(params)?;
                kl += breakdown.kl_term;
                recon += breakdown.recon_term;
                batches += 1;
            }
            if model.params().iter().any(|(_, p)| !p.all_finite()) {
                return Err(diverged(model, last_good, config, epoch, batches));
            }
            let log = EpochLog {
                epoch,
                stage,
                learning_rate: lr.learning_rate,
                train: ElboBreakdown::new(kl / batches as f64, recon / batches as f64),
            };
            on_epoch(&log);
            logs.push(log);
            last_good = model.clone();
            epoch += 1;
        }
        if let Some(dir) = &config.checkpoint_dir {
            model.save(&dir.join(format!("stage{stage}.ckpt")), config.seed, epoch)?;
        }
    }
    Ok(logs)
}

fn diverged(model: &mut VaeModel<f32>, last_good: VaeModel<f32>, config: &TrainConfig, epoch: usize, batch: usize) -> Error {
    *model = last_good;
    if let Some(dir) = &config.checkpoint_dir {
        if let Err(e) = model.save(&dir.join("last_good.ckpt"), config.seed, epoch) {
            return e;
        }
    }
    Error::Divergence { epoch, batch }
}

/// Mean bound over `data`, with reparameterization noise drawn from `seed`.
pub fn test_elbo(model: &VaeModel<f32>, data: &Dataset, seed: u64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InsufficientData("evaluation set is empty".into()));
    }
    let mut rng = Rng::new(seed);
    let mut total = 0.0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(500) {
        let x = data.images().select_rows(chunk);
        let eps = model.draw_eps_per_image(chunk.len(), &mut rng)?;
        total += model.elbo_with_eps(&x, &eps)?.iter().map(|e| e.elbo).sum::<f64>();
    }
    Ok(total / data.len() as f64)
}

/// Flat-parameter view of a VAE loss with frozen noise, for gradient checks.
pub struct VaeObjective {
    pub model: VaeModel<f64>,
    pub input: Tensor<f64>,
    pub eps: Tensor<f64>,
}

impl VaeObjective {
    fn locate(&self, mut index: usize) -> (usize, usize) {
        for (t, (_, p)) in self.model.params().iter().enumerate() {
            if index < p.len() {
                return (t, index);
            }
            index -= p.len();
        }
        panic!("parameter index out of range");
    }
}

impl Objective for VaeObjective {
    fn num_params(&self) -> usize {
        self.model.param_count()
    }

    fn param(&self, index: usize) -> f64 {
        let (t, i) = self.locate(index);
        self.model.params()[t].1.data()[i]
    }

    fn set_param(&mut self, index: usize, value: f64) {
        let (t, i) = self.locate(index);
        self.model.params_mut()[t].1.data_mut()[i] = value;
    }

    fn loss(&mut self) -> Result<f64> {
        let per = self.model.elbo_with_eps(&self.input, &self.eps)?;
        Ok(-per.iter().map(|e| e.elbo).sum::<f64>() / per.len() as f64)
    }

    fn gradient(&mut self) -> Result<Vec<f64>> {
        self.model.zero_grad();
        self.model.loss_and_backward(&self.input, &self.eps)?;
        Ok(self.model.params_mut().into_iter().flat_map(|(_, _, g)| g.data().to_vec()).collect())
    }
}

/// Shrunken 16-8-4 VAE objective on random inputs, used by `grad-check`.
pub fn small_vae_objective(seed: u64) -> VaeObjective {
    let mut rng = Rng::new(seed);
    let model = VaeModel::<f64>::new(VaeDims { input: 16, hidden: 8, latent: 4 }, &mut rng);
    let input = Tensor::from_fn([3, 16], |_| rng.uniform());
    let eps = model.draw_eps_per_image(3, &mut rng).expect("valid shape");
    VaeObjective { model, input, eps }
}
