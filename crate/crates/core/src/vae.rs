//! Class-conditioned convolutional VAE over glyph rasters.
//!
//! The encoder is a stack of Conv-CIN-ReLU blocks followed by a dense layer
//! whose output is split into `[μ | log σ²]`. The decoder maps `z` through a
//! dense layer to a small feature map, upsamples it with ConvT-CIN-ReLU
//! blocks and ends in a single-channel Conv-Sigmoid. Every normalization
//! layer selects its affine parameters by class label.

use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{he_init, lit, AutodiffError, Float, Graph, Params, Var};
use crate::labels::NUM_CLASSES;
use crate::persist::{load_config, load_params, save_model, PersistError};

/// `log σ²` is clamped to `±LOGVAR_LIMIT`, so `σ ∈ [e⁻⁷, e⁷]`.
pub const LOGVAR_LIMIT: f64 = 14.0;
/// Predicted probabilities are clamped to `[PROB_EPS, 1 − PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum VaeError {
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("bad shape: {0}")]
    BadShape(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Persist(#[from] PersistError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kernel: usize,
    pub stride: usize,
    pub channels: usize,
}

const fn layer(kernel: usize, stride: usize, channels: usize) -> LayerSpec {
    LayerSpec {
        kernel,
        stride,
        channels,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub num_classes: usize,
    pub z_dim: usize,
    pub image_size: usize,
    pub encoder: Vec<LayerSpec>,
    /// Side of the feature map produced by the decoder's dense layer.
    pub seed_size: usize,
    pub seed_channels: usize,
    pub decoder: Vec<LayerSpec>,
    pub output_kernel: usize,
    pub kl_beta: f64,
    pub free_bits_per_dim: f64,
}

impl VaeConfig {
    /// Full-size architecture (416,672 encoder and 516,865 decoder
    /// parameters).
    pub fn full() -> Self {
        VaeConfig {
            num_classes: NUM_CLASSES,
            z_dim: 32,
            image_size: 64,
            encoder: vec![
                layer(5, 1, 32),
                layer(5, 2, 32),
                layer(5, 1, 64),
                layer(5, 2, 64),
                layer(4, 2, 64),
                layer(4, 2, 64),
            ],
            seed_size: 4,
            seed_channels: 64,
            decoder: vec![
                layer(4, 2, 64),
                layer(4, 2, 64),
                layer(5, 1, 64),
                layer(5, 2, 64),
                layer(5, 1, 32),
                layer(5, 2, 32),
                layer(5, 1, 32),
            ],
            output_kernel: 5,
            kl_beta: 4.68,
            free_bits_per_dim: 0.15,
        }
    }

    /// A narrow variant with `z_dim = 8` that trains in minutes on a CPU.
    pub fn small() -> Self {
        VaeConfig {
            z_dim: 8,
            encoder: vec![layer(5, 2, 8), layer(5, 2, 16), layer(4, 2, 16), layer(4, 2, 16)],
            seed_channels: 16,
            decoder: vec![layer(4, 2, 16), layer(4, 2, 16), layer(5, 2, 8), layer(5, 2, 8)],
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<(), VaeError> {
        let bad = |m: String| Err(VaeError::Config(m));
        if self.num_classes == 0 || self.z_dim == 0 || self.image_size == 0 {
            return bad("num_classes, z_dim and image_size must be positive".into());
        }
        if self.encoder.is_empty() {
            return bad("encoder needs at least one layer".into());
        }
        let all = self.encoder.iter().chain(&self.decoder);
        if all.clone().any(|l| l.kernel == 0 || l.stride == 0 || l.channels == 0) {
            return bad("layer sizes must be positive".into());
        }
        let down: usize = self.encoder.iter().map(|l| l.stride).product();
        if !self.image_size.is_multiple_of(down) {
            return bad(format!("image size {} not divisible by {down}", self.image_size));
        }
        let up: usize = self.decoder.iter().map(|l| l.stride).product();
        if self.seed_size * up != self.image_size {
            return bad(format!(
                "decoder produces {} pixels, expected {}",
                self.seed_size * up,
                self.image_size
            ));
        }
        if self.output_kernel == 0 || self.seed_size == 0 || self.seed_channels == 0 {
            return bad("decoder sizes must be positive".into());
        }
        if !(self.kl_beta >= 0.0 && self.free_bits_per_dim >= 0.0) {
            return bad("kl_beta and free_bits_per_dim must be non-negative".into());
        }
        Ok(())
    }

    fn encoder_out_size(&self) -> usize {
        self.image_size / self.encoder.iter().map(|l| l.stride).product::<usize>()
    }

    pub fn pixels(&self) -> usize {
        self.image_size * self.image_size
    }
}

/// Posterior of one glyph: `z ~ N(μ, diag σ²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentStyle {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl LatentStyle {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// `μ + σ∘ε`
    Train,
    /// `μ`
    Test,
}

/// Reparameterized draw from a latent posterior.
pub fn reparam_sample<R: Rng + ?Sized>(latent: &LatentStyle, rng: &mut R, mode: SampleMode) -> Vec<f64> {
    match mode {
        SampleMode::Test => latent.mu.clone(),
        SampleMode::Train => latent
            .mu
            .iter()
            .zip(&latent.sigma)
            .map(|(m, s)| {
                let e: f64 = rng.sample(StandardNormal);
                m + s * e
            })
            .collect(),
    }
}

/// Negative Bernoulli log-likelihood summed over pixels.
pub fn recon_loss(pred: &[f64], target: &[f64]) -> Result<f64, VaeError> {
    if pred.len() != target.len() {
        return Err(VaeError::BadShape(format!(
            "{} predictions for {} targets",
            pred.len(),
            target.len()
        )));
    }
    Ok(pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum())
}

/// KL divergence of each posterior dimension from `N(0, 1)`.
pub fn kl_per_dim(latent: &LatentStyle) -> Vec<f64> {
    latent
        .mu
        .iter()
        .zip(&latent.sigma)
        .map(|(m, s)| {
            let v = s * s;
            0.5 * (m * m + v - 1.0 - v.ln())
        })
        .collect()
}

/// `Σᵢ max(free_bits_per_dim, KLᵢ)`.
pub fn kl_free_bits(latent: &LatentStyle, config: &VaeConfig) -> f64 {
    kl_per_dim(latent)
        .into_iter()
        .map(|k| k.max(config.free_bits_per_dim))
        .sum()
}

/// Graph nodes of a VAE loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct VaeLoss {
    /// `recon + β · kl_term`
    pub total: Var,
    /// Batch mean of the per-image reconstruction loss.
    pub recon: Var,
    /// Free-bits KL of the batch-averaged per-dimension divergence.
    pub kl_term: Var,
    pub mu: Var,
    pub logvar: Var,
    /// Reconstructed probabilities, `[batch, size, size, 1]`.
    pub pred: Var,
}

pub struct Vae<T: Float> {
    pub config: VaeConfig,
    pub params: Params<T>,
}

impl<T: Float> Vae<T> {
    /// He-initialized convolutions and dense layers, zero biases and
    /// identity normalization (`γ = 1`, `β = 0`).
    pub fn new<R: Rng + ?Sized>(config: VaeConfig, rng: &mut R) -> Result<Self, VaeError> {
        config.validate()?;
        let mut p = Params::new();
        let classes = config.num_classes;
        let cin = |p: &mut Params<T>, prefix: &str, c: usize| {
            p.add(
                format!("{prefix}.gamma"),
                ArrayD::from_elem(IxDyn(&[classes, c]), T::one()),
            );
            p.add(format!("{prefix}.beta"), ArrayD::zeros(IxDyn(&[classes, c])));
        };

        let mut c_in = 1;
        for (i, l) in config.encoder.iter().enumerate() {
            let fan_in = l.kernel * l.kernel * c_in;
            p.add(
                format!("enc.conv{i}.w"),
                he_init(&[l.kernel, l.kernel, c_in, l.channels], fan_in, rng),
            );
            p.add(format!("enc.conv{i}.b"), ArrayD::zeros(IxDyn(&[l.channels])));
            cin(&mut p, &format!("enc.cin{i}"), l.channels);
            c_in = l.channels;
        }
        let s = config.encoder_out_size();
        let flat = s * s * c_in;
        p.add("enc.dense.w", he_init(&[flat, 2 * config.z_dim], flat, rng));
        p.add("enc.dense.b", ArrayD::zeros(IxDyn(&[2 * config.z_dim])));

        let seed = config.seed_size * config.seed_size * config.seed_channels;
        p.add("dec.dense.w", he_init(&[config.z_dim, seed], config.z_dim, rng));
        p.add("dec.dense.b", ArrayD::zeros(IxDyn(&[seed])));
        let mut c_in = config.seed_channels;
        for (i, l) in config.decoder.iter().enumerate() {
            let fan_in = l.kernel * l.kernel * c_in;
            p.add(
                format!("dec.convt{i}.w"),
                he_init(&[l.kernel, l.kernel, l.channels, c_in], fan_in, rng),
            );
            p.add(format!("dec.convt{i}.b"), ArrayD::zeros(IxDyn(&[l.channels])));
            cin(&mut p, &format!("dec.cin{i}"), l.channels);
            c_in = l.channels;
        }
        let k = config.output_kernel;
        p.add("dec.out.w", he_init(&[k, k, c_in, 1], k * k * c_in, rng));
        p.add("dec.out.b", ArrayD::zeros(IxDyn(&[1])));
        Ok(Vae { config, params: p })
    }

    pub fn encoder_param_count(&self) -> usize {
        self.params.count_prefix("enc.")
    }

    pub fn decoder_param_count(&self) -> usize {
        self.params.count_prefix("dec.")
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    fn check_labels(&self, labels: &[usize]) -> Result<(), VaeError> {
        match labels.iter().find(|&&l| l >= self.config.num_classes) {
            Some(&label) => Err(VaeError::LabelOutOfRange {
                label,
                classes: self.config.num_classes,
            }),
            None => Ok(()),
        }
    }

    fn cin_relu(&self, g: &mut Graph<T>, x: Var, prefix: &str, labels: &[usize]) -> Result<Var, VaeError> {
        let gamma = g.named(&self.params, &format!("{prefix}.gamma"));
        let beta = g.named(&self.params, &format!("{prefix}.beta"));
        let y = g.cond_instance_norm(x, gamma, beta, labels)?;
        Ok(g.relu(y)?)
    }

    /// Encoder on an NHWC batch; returns `(μ, log σ²)`, each `[batch, z]`,
    /// with `log σ²` already clamped.
    pub fn encode_graph(&self, g: &mut Graph<T>, images: Var, labels: &[usize]) -> Result<(Var, Var), VaeError> {
        self.check_labels(labels)?;
        let n = self.config.image_size;
        let shape = g.shape(images).to_vec();
        if shape.len() != 4 || shape[1] != n || shape[2] != n || shape[3] != 1 || shape[0] != labels.len() {
            return Err(VaeError::BadShape(format!(
                "images {shape:?} with {} labels, expected [B, {n}, {n}, 1]",
                labels.len()
            )));
        }
        let mut x = images;
        for (i, l) in self.config.encoder.iter().enumerate() {
            let w = g.named(&self.params, &format!("enc.conv{i}.w"));
            let b = g.named(&self.params, &format!("enc.conv{i}.b"));
            x = g.conv2d(x, w, l.stride)?;
            x = g.add(x, b)?;
            x = self.cin_relu(g, x, &format!("enc.cin{i}"), labels)?;
        }
        let flat: usize = g.shape(x)[1..].iter().product();
        let x = g.reshape(x, &[labels.len(), flat])?;
        let w = g.named(&self.params, "enc.dense.w");
        let b = g.named(&self.params, "enc.dense.b");
        let h = g.matmul(x, w)?;
        let h = g.add(h, b)?;
        let z = self.config.z_dim;
        let mu = g.slice(h, 1, 0, z)?;
        let logvar = g.slice(h, 1, z, 2 * z)?;
        let logvar = g.clamp(logvar, lit(-LOGVAR_LIMIT), lit(LOGVAR_LIMIT))?;
        Ok((mu, logvar))
    }

    /// Decoder from `[batch, z]` codes to `[batch, size, size, 1]`
    /// probabilities.
    pub fn decode_graph(&self, g: &mut Graph<T>, z: Var, labels: &[usize]) -> Result<Var, VaeError> {
        self.check_labels(labels)?;
        let zs = g.shape(z).to_vec();
        if zs != [labels.len(), self.config.z_dim] {
            return Err(VaeError::BadShape(format!(
                "z {zs:?} with {} labels, expected [B, {}]",
                labels.len(),
                self.config.z_dim
            )));
        }
        let cfg = &self.config;
        let w = g.named(&self.params, "dec.dense.w");
        let b = g.named(&self.params, "dec.dense.b");
        let h = g.matmul(z, w)?;
        let h = g.add(h, b)?;
        let mut x = g.reshape(h, &[labels.len(), cfg.seed_size, cfg.seed_size, cfg.seed_channels])?;
        for (i, l) in cfg.decoder.iter().enumerate() {
            let w = g.named(&self.params, &format!("dec.convt{i}.w"));
            let b = g.named(&self.params, &format!("dec.convt{i}.b"));
            x = g.conv_transpose2d(x, w, l.stride)?;
            x = g.add(x, b)?;
            x = self.cin_relu(g, x, &format!("dec.cin{i}"), labels)?;
        }
        let w = g.named(&self.params, "dec.out.w");
        let b = g.named(&self.params, "dec.out.b");
        let x = g.conv2d(x, w, 1)?;
        let x = g.add(x, b)?;
        Ok(g.sigmoid(x)?)
    }

    /// Full training loss on a batch of images (`[batch, size, size, 1]`).
    ///
    /// With `noise` (`[batch, z]` standard normal draws) the decoder sees
    /// `μ + σ∘ε`; without it, `μ`.
    pub fn loss_graph(
        &self,
        g: &mut Graph<T>,
        images: Var,
        labels: &[usize],
        noise: Option<&ArrayD<T>>,
    ) -> Result<VaeLoss, VaeError> {
        let (mu, logvar) = self.encode_graph(g, images, labels)?;
        let z = match noise {
            Some(eps) => {
                if eps.shape() != g.shape(mu) {
                    return Err(VaeError::BadShape(format!("noise {:?}", eps.shape())));
                }
                let half = g.scale(logvar, lit(0.5))?;
                let sigma = g.exp(half)?;
                let eps = g.constant(eps.clone())?;
                let spread = g.mul(sigma, eps)?;
                g.add(mu, spread)?
            }
            None => mu,
        };
        let pred = self.decode_graph(g, z, labels)?;
        let recon = bernoulli_nll(g, pred, images)?;
        let batch = lit::<T>(labels.len() as f64);
        let recon = g.scale(recon, T::one() / batch)?;

        // KLᵢ = ½(μ² + e^{logvar} − 1 − logvar), averaged over the batch.
        let mu2 = g.mul(mu, mu)?;
        let var = g.exp(logvar)?;
        let a = g.add(mu2, var)?;
        let a = g.sub(a, logvar)?;
        let kl = g.affine(a, lit(0.5), lit(-0.5))?;
        let kl = g.mean_axis(kl, 0)?;
        let kl = g.clamp(kl, lit(self.config.free_bits_per_dim), T::infinity())?;
        let kl_term = g.sum(kl)?;
        let weighted = g.scale(kl_term, lit(self.config.kl_beta))?;
        let total = g.add(recon, weighted)?;
        Ok(VaeLoss {
            total,
            recon,
            kl_term,
            mu,
            logvar,
            pred,
        })
    }

    /// Stacks row-major `size × size` images into an NHWC tensor.
    pub fn batch_tensor(&self, images: &[&[f32]]) -> Result<ArrayD<T>, VaeError> {
        let px = self.config.pixels();
        let mut data = Vec::with_capacity(images.len() * px);
        for img in images {
            if img.len() != px {
                return Err(VaeError::BadShape(format!(
                    "image of {} pixels, expected {px}",
                    img.len()
                )));
            }
            data.extend(img.iter().map(|&v| lit::<T>(v as f64)));
        }
        let n = self.config.image_size;
        Ok(ArrayD::from_shape_vec(IxDyn(&[images.len(), n, n, 1]), data).expect("pixel count"))
    }

    pub fn encode_batch(&self, images: &[&[f32]], labels: &[usize]) -> Result<Vec<LatentStyle>, VaeError> {
        if images.len() != labels.len() {
            return Err(VaeError::BadShape(format!(
                "{} images, {} labels",
                images.len(),
                labels.len()
            )));
        }
        if images.is_empty() {
            return Ok(vec![]);
        }
        let mut g = Graph::new();
        let x = g.constant(self.batch_tensor(images)?)?;
        let (mu, logvar) = self.encode_graph(&mut g, x, labels)?;
        let to_f64 = |v: &ArrayD<T>| v.iter().map(|x| x.to_f64().expect("finite")).collect::<Vec<_>>();
        let mu = to_f64(g.value(mu));
        let lv = to_f64(g.value(logvar));
        let z = self.config.z_dim;
        Ok((0..labels.len())
            .map(|b| LatentStyle {
                mu: mu[b * z..(b + 1) * z].to_vec(),
                sigma: lv[b * z..(b + 1) * z].iter().map(|v| (0.5 * v).exp()).collect(),
            })
            .collect())
    }

    /// Posterior for a single `size × size` image.
    pub fn encode(&self, image: &[f32], label: usize) -> Result<LatentStyle, VaeError> {
        Ok(self.encode_batch(&[image], &[label])?.remove(0))
    }

    /// Decodes a batch of codes; each output is a row-major image.
    pub fn decode_batch(&self, zs: &[&[f64]], labels: &[usize]) -> Result<Vec<Vec<f32>>, VaeError> {
        if zs.len() != labels.len() {
            return Err(VaeError::BadShape(format!(
                "{} codes, {} labels",
                zs.len(),
                labels.len()
            )));
        }
        if zs.is_empty() {
            return Ok(vec![]);
        }
        let zdim = self.config.z_dim;
        if let Some(z) = zs.iter().find(|z| z.len() != zdim) {
            return Err(VaeError::BadShape(format!("z of width {}, expected {zdim}", z.len())));
        }
        let data = zs.iter().flat_map(|z| z.iter().map(|&v| lit::<T>(v))).collect();
        let zt = ArrayD::from_shape_vec(IxDyn(&[zs.len(), zdim]), data).expect("code count");
        let mut g = Graph::new();
        let z = g.constant(zt)?;
        let pred = self.decode_graph(&mut g, z, labels)?;
        let px = self.config.pixels();
        let flat: Vec<f32> = g.value(pred).iter().map(|v| v.to_f32().expect("finite")).collect();
        Ok(flat.chunks(px).map(|c| c.to_vec()).collect())
    }

    /// Rendering the decoder predicts for `z` under `label`.
    pub fn decode_image(&self, z: &[f64], label: usize) -> Result<Vec<f32>, VaeError> {
        Ok(self.decode_batch(&[z], &[label])?.remove(0))
    }

    pub fn save(&self, dir: &Path) -> Result<(), VaeError> {
        Ok(save_model(dir, "vae", &self.config, &self.params)?)
    }

    pub fn load(dir: &Path) -> Result<Self, VaeError> {
        let config: VaeConfig = load_config(dir, "vae")?;
        // The random initialization is overwritten right away.
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut vae = Self::new(config, &mut rng)?;
        load_params(dir, "vae", &mut vae.params)?;
        Ok(vae)
    }
}

/// `−Σ [t ln p + (1 − t) ln(1 − p)]` with `p` clamped away from 0 and 1.
pub fn bernoulli_nll<T: Float>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var, AutodiffError> {
    let p = g.clamp(pred, lit(PROB_EPS), lit(1.0 - PROB_EPS))?;
    let lp = g.log(p)?;
    let q = g.affine(p, -T::one(), T::one())?;
    let lq = g.log(q)?;
    let t_inv = g.affine(target, -T::one(), T::one())?;
    let a = g.mul(lp, target)?;
    let b = g.mul(lq, t_inv)?;
    let s = g.add(a, b)?;
    let s = g.sum(s)?;
    g.neg(s)
}
