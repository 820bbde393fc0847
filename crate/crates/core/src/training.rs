//! Training loops and the quantitative evaluations.
//!
//! Runs are single-threaded and fully determined by their seed: batch
//! order, reparameterization noise and dropout masks all come from one
//! ChaCha stream.

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{ArrayD, IxDyn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, AutodiffError, Float, Graph};
use crate::codec::SequenceTensor;
use crate::svg_decoder::{command_hits, DecoderError, SvgDecoder};
use crate::vae::{Vae, VaeError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("class {0} has no examples")]
    MissingClass(usize),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Vae(VaeError),
    #[error(transparent)]
    Decoder(DecoderError),
    #[error(transparent)]
    Autodiff(AutodiffError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl From<VaeError> for TrainError {
    fn from(e: VaeError) -> Self {
        TrainError::Vae(e)
    }
}

impl From<DecoderError> for TrainError {
    fn from(e: DecoderError) -> Self {
        TrainError::Decoder(e)
    }
}

impl From<AutodiffError> for TrainError {
    fn from(e: AutodiffError) -> Self {
        TrainError::Autodiff(e)
    }
}

impl TrainError {
    /// Tags non-finite values raised inside the graph with the step index.
    fn at(self, step: usize) -> Self {
        let non_finite = matches!(
            self,
            TrainError::Autodiff(AutodiffError::NonFinite { .. })
                | TrainError::Vae(VaeError::Autodiff(AutodiffError::NonFinite { .. }))
                | TrainError::Decoder(DecoderError::Autodiff(AutodiffError::NonFinite { .. }))
        );
        if non_finite {
            TrainError::NonFiniteLoss { step }
        } else {
            self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Number of updates; overrides `epochs` when set.
    pub steps: Option<usize>,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Save the model every this many steps (0 = only at the end).
    pub checkpoint_interval: usize,
}

impl TrainConfig {
    /// Full-size VAE setting: 3 epochs, batch 64.
    pub fn vae_default() -> Self {
        TrainConfig {
            epochs: 3,
            steps: None,
            batch_size: 64,
            adam: AdamConfig::default(),
            seed: 0,
            checkpoint_interval: 0,
        }
    }

    /// Full-size decoder setting: 3 epochs, batch 128.
    pub fn decoder_default() -> Self {
        TrainConfig {
            batch_size: 128,
            ..Self::vae_default()
        }
    }

    fn total_steps(&self, examples: usize) -> usize {
        self.steps
            .unwrap_or_else(|| self.epochs * examples.div_ceil(self.batch_size))
    }

    fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(TrainError::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Shuffled mini-batches, reshuffled every epoch.
pub(crate) struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
}

impl BatchSampler {
    pub(crate) fn new(n: usize, batch: usize) -> Self {
        BatchSampler {
            order: (0..n).collect(),
            pos: n,
            batch: batch.min(n),
        }
    }

    pub(crate) fn next<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<usize> {
        if self.pos + self.batch > self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let out = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaeStep {
    pub step: usize,
    pub total: f64,
    /// Mean reconstruction loss per image.
    pub recon: f64,
    pub kl_term: f64,
}

/// A raster and its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub label: usize,
    pub pixels: Vec<f32>,
}

/// Trains `vae` in place. When `out_dir` is set the model is saved there
/// (every `checkpoint_interval` steps and at the end) along with
/// `losses.csv`.
pub fn train_vae<T: Float>(
    vae: &mut Vae<T>,
    corpus: &[LabeledImage],
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<Vec<VaeStep>, TrainError> {
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.adam);
    let mut sampler = BatchSampler::new(corpus.len(), config.batch_size);
    let steps = config.total_steps(corpus.len());
    let z = vae.config.z_dim;
    let mut curve = Vec::with_capacity(steps);
    for step in 0..steps {
        let idx = sampler.next(&mut rng);
        let images: Vec<&[f32]> = idx.iter().map(|&i| corpus[i].pixels.as_slice()).collect();
        let labels: Vec<usize> = idx.iter().map(|&i| corpus[i].label).collect();
        let noise = ArrayD::from_shape_fn(IxDyn(&[idx.len(), z]), |_| {
            T::from_f64_lossy(rng.sample::<f64, _>(StandardNormal))
        });
        let fail = |e: VaeError| TrainError::from(e).at(step);
        let mut g = Graph::new();
        let x = g.constant(vae.batch_tensor(&images).map_err(fail)?)?;
        let loss = vae.loss_graph(&mut g, x, &labels, Some(&noise)).map_err(fail)?;
        let record = VaeStep {
            step,
            total: g.scalar(loss.total).to_f64().unwrap_or(f64::NAN),
            recon: g.scalar(loss.recon).to_f64().unwrap_or(f64::NAN),
            kl_term: g.scalar(loss.kl_term).to_f64().unwrap_or(f64::NAN),
        };
        if !record.total.is_finite() {
            return Err(TrainError::NonFiniteLoss { step });
        }
        let grads = g.backward(loss.total)?;
        vae.params.zero_grad();
        grads.accumulate(&mut vae.params);
        adam.step(&mut vae.params).map_err(|e| TrainError::from(e).at(step))?;
        curve.push(record);
        if let Some(dir) = out_dir {
            if config.checkpoint_interval > 0 && (step + 1) % config.checkpoint_interval == 0 {
                vae.save(dir)?;
            }
        }
        if step % 100 == 0 {
            log::debug!(
                "vae step {step}: loss {:.4} recon {:.4} kl {:.4}",
                record.total,
                record.recon,
                record.kl_term
            );
        }
    }
    if let Some(dir) = out_dir {
        vae.save(dir)?;
        write_csv(
            &dir.join("losses.csv"),
            "step,total,recon,kl_term",
            curve
                .iter()
                .map(|r| format!("{},{},{},{}", r.step, r.total, r.recon, r.kl_term)),
        )?;
    }
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoderStep {
    pub step: usize,
    pub total: f64,
    pub cross_entropy: f64,
    pub mdn_nll: f64,
    /// Teacher-forced command accuracy on the batch (dropout active).
    pub accuracy: f64,
}

/// A normalized glyph as the decoder sees it: label, command sequence and
/// its rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceExample {
    pub label: usize,
    pub sequence: SequenceTensor,
    pub pixels: Vec<f32>,
}

const EVAL_CHUNK: usize = 64;

/// Posterior means `μ` of the examples' renderings under a frozen VAE.
pub fn encode_means<T: Float>(vae: &Vae<T>, corpus: &[SequenceExample]) -> Result<Vec<Vec<f64>>, TrainError> {
    let mut out = Vec::with_capacity(corpus.len());
    for chunk in corpus.chunks(EVAL_CHUNK) {
        let images: Vec<&[f32]> = chunk.iter().map(|e| e.pixels.as_slice()).collect();
        let labels: Vec<usize> = chunk.iter().map(|e| e.label).collect();
        out.extend(vae.encode_batch(&images, &labels)?.into_iter().map(|l| l.mu));
    }
    Ok(out)
}

fn z_batch<T: Float>(zs: &[&[f64]]) -> ArrayD<T> {
    let d = zs.first().map_or(0, |z| z.len());
    ArrayD::from_shape_fn(IxDyn(&[zs.len(), d]), |ix| T::from_f64_lossy(zs[ix[0]][ix[1]]))
}

/// Trains `decoder` with teacher forcing against codes from the frozen
/// `vae` (`z = μ`). The VAE is only read.
pub fn train_decoder<T: Float>(
    decoder: &mut SvgDecoder<T>,
    vae: &Vae<T>,
    corpus: &[SequenceExample],
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<Vec<DecoderStep>, TrainError> {
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    config.validate()?;
    if decoder.config.z_dim != vae.config.z_dim {
        return Err(TrainError::Config(format!(
            "decoder expects z of width {}, VAE produces {}",
            decoder.config.z_dim, vae.config.z_dim
        )));
    }
    let zs = encode_means(vae, corpus)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.adam);
    let mut sampler = BatchSampler::new(corpus.len(), config.batch_size);
    let steps = config.total_steps(corpus.len());
    let mut curve = Vec::with_capacity(steps);
    for step in 0..steps {
        let idx = sampler.next(&mut rng);
        let labels: Vec<usize> = idx.iter().map(|&i| corpus[i].label).collect();
        let targets: Vec<&SequenceTensor> = idx.iter().map(|&i| &corpus[i].sequence).collect();
        let z_rows: Vec<&[f64]> = idx.iter().map(|&i| zs[i].as_slice()).collect();
        let masks = decoder.sample_dropout(idx.len(), &mut rng);
        let fail = |e: DecoderError| TrainError::from(e).at(step);
        let mut g = Graph::new();
        let z = g.constant(z_batch::<T>(&z_rows))?;
        let loss = decoder
            .sequence_loss_graph(&mut g, z, &labels, &targets, Some(&masks))
            .map_err(fail)?;
        let (hits, total) = command_hits(g.value(loss.head), &targets, loss.steps);
        let record = DecoderStep {
            step,
            total: g.scalar(loss.total).to_f64().unwrap_or(f64::NAN),
            cross_entropy: g.scalar(loss.cross_entropy).to_f64().unwrap_or(f64::NAN),
            mdn_nll: g.scalar(loss.mdn_nll).to_f64().unwrap_or(f64::NAN),
            accuracy: hits as f64 / total.max(1) as f64,
        };
        if !record.total.is_finite() {
            return Err(TrainError::NonFiniteLoss { step });
        }
        let grads = g.backward(loss.total)?;
        decoder.params.zero_grad();
        grads.accumulate(&mut decoder.params);
        adam.step(&mut decoder.params)
            .map_err(|e| TrainError::from(e).at(step))?;
        curve.push(record);
        if let Some(dir) = out_dir {
            if config.checkpoint_interval > 0 && (step + 1) % config.checkpoint_interval == 0 {
                decoder.save(dir)?;
            }
        }
        if step % 100 == 0 {
            log::debug!(
                "decoder step {step}: loss {:.4} ce {:.4} nll {:.4} acc {:.3}",
                record.total,
                record.cross_entropy,
                record.mdn_nll,
                record.accuracy
            );
        }
    }
    if let Some(dir) = out_dir {
        decoder.save(dir)?;
        write_csv(
            &dir.join("losses.csv"),
            "step,total,cross_entropy,mdn_nll,accuracy",
            curve.iter().map(|r| {
                format!(
                    "{},{},{},{},{}",
                    r.step, r.total, r.cross_entropy, r.mdn_nll, r.accuracy
                )
            }),
        )?;
    }
    Ok(curve)
}

/// Teacher-forced metrics with dropout disabled, averaged over unmasked
/// steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeacherForced {
    pub loss: f64,
    pub cross_entropy: f64,
    pub mdn_nll: f64,
    pub accuracy: f64,
}

pub fn teacher_forced<T: Float>(
    decoder: &SvgDecoder<T>,
    zs: &[Vec<f64>],
    corpus: &[SequenceExample],
) -> Result<TeacherForced, TrainError> {
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let (mut ce, mut nll, mut hits, mut steps) = (0.0, 0.0, 0, 0);
    for (chunk, zc) in corpus.chunks(EVAL_CHUNK).zip(zs.chunks(EVAL_CHUNK)) {
        let labels: Vec<usize> = chunk.iter().map(|e| e.label).collect();
        let targets: Vec<&SequenceTensor> = chunk.iter().map(|e| &e.sequence).collect();
        let z_rows: Vec<&[f64]> = zc.iter().map(|z| z.as_slice()).collect();
        let mut g = Graph::new();
        let z = g.constant(z_batch::<T>(&z_rows))?;
        let loss = decoder.sequence_loss_graph(&mut g, z, &labels, &targets, None)?;
        let (h, n) = command_hits(g.value(loss.head), &targets, loss.steps);
        let w = n as f64;
        ce += g.scalar(loss.cross_entropy).to_f64().unwrap_or(f64::NAN) * w;
        nll += g.scalar(loss.mdn_nll).to_f64().unwrap_or(f64::NAN) * w;
        hits += h;
        steps += n;
    }
    let n = steps.max(1) as f64;
    let (ce, nll) = (ce / n, nll / n);
    Ok(TeacherForced {
        loss: decoder.config.ce_scale * ce + nll,
        cross_entropy: ce,
        mdn_nll: nll,
        accuracy: hits as f64 / n,
    })
}

/// Per-example teacher-forced loss, `z = μ` from the frozen VAE.
pub fn example_nlls<T: Float>(
    decoder: &SvgDecoder<T>,
    vae: &Vae<T>,
    corpus: &[SequenceExample],
) -> Result<Vec<f64>, TrainError> {
    let zs = encode_means(vae, corpus)?;
    corpus
        .iter()
        .zip(&zs)
        .map(|(e, z)| Ok(decoder.sequence_loss(z, e.label, &e.sequence)?))
        .collect()
}

/// Mean teacher-forced loss of each class; `None` for classes without
/// examples.
pub fn nll_by_class<T: Float>(
    decoder: &SvgDecoder<T>,
    vae: &Vae<T>,
    test: &[SequenceExample],
) -> Result<Vec<Option<f64>>, TrainError> {
    let nlls = example_nlls(decoder, vae, test)?;
    let classes = decoder.config.num_classes;
    let mut sums = vec![(0.0, 0usize); classes];
    for (e, v) in test.iter().zip(nlls) {
        if e.label < classes {
            sums[e.label].0 += v;
            sums[e.label].1 += 1;
        }
    }
    Ok(sums.into_iter().map(|(s, n)| (n > 0).then(|| s / n as f64)).collect())
}

/// `(sequence length, loss)` for every test example of `class`.
pub fn nll_vs_length<T: Float>(
    decoder: &SvgDecoder<T>,
    vae: &Vae<T>,
    test: &[SequenceExample],
    class: usize,
) -> Result<Vec<(usize, f64)>, TrainError> {
    let subset: Vec<SequenceExample> = test.iter().filter(|e| e.label == class).cloned().collect();
    if subset.is_empty() {
        return Err(TrainError::MissingClass(class));
    }
    let nlls = example_nlls(decoder, vae, &subset)?;
    Ok(subset.iter().map(|e| e.sequence.length).zip(nlls).collect())
}

/// Spread of the loss among examples of equal length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthBucket {
    pub length: usize,
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
}

pub fn length_buckets(points: &[(usize, f64)]) -> Vec<LengthBucket> {
    let mut by_len: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
    for &(l, v) in points {
        by_len.entry(l).or_default().push(v);
    }
    by_len
        .into_iter()
        .map(|(length, vs)| {
            let n = vs.len() as f64;
            let mean = vs.iter().sum::<f64>() / n;
            let variance = vs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            LengthBucket {
                length,
                count: vs.len(),
                mean,
                variance,
            }
        })
        .collect()
}

/// Loss variance among examples shorter than `split` and among the rest.
pub fn short_long_variance(points: &[(usize, f64)], split: usize) -> (Option<f64>, Option<f64>) {
    let var = |vs: Vec<f64>| {
        (vs.len() >= 2).then(|| {
            let n = vs.len() as f64;
            let m = vs.iter().sum::<f64>() / n;
            vs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
        })
    };
    let short = points.iter().filter(|p| p.0 < split).map(|p| p.1).collect();
    let long = points.iter().filter(|p| p.0 >= split).map(|p| p.1).collect();
    (var(short), var(long))
}

/// Paths of the files written by [`write_eval_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct EvalFiles {
    pub nll_by_class: PathBuf,
    pub nll_vs_length: Vec<PathBuf>,
    pub length_variance: PathBuf,
    /// Sequences shorter than this count as short.
    pub length_split: usize,
    /// Loss variance of short and long test sequences, pooled over classes.
    pub short_long: (Option<f64>, Option<f64>),
}

/// Writes `nll_by_class.csv` (one row per class; empty value for classes
/// without test examples), `nll_vs_length_<label>_<char>.csv` for every
/// class present in `test`, and `length_variance.csv` comparing the loss
/// spread of short and long sequences. The split is the median length.
/// File names carry the label index because `a` and `A` collide on
/// case-insensitive file systems.
pub fn write_eval_report<T: Float>(
    decoder: &SvgDecoder<T>,
    vae: &Vae<T>,
    test: &[SequenceExample],
    out_dir: &Path,
) -> Result<EvalFiles, TrainError> {
    if test.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    std::fs::create_dir_all(out_dir)?;
    let by_class = nll_by_class(decoder, vae, test)?;
    let char_name = |l: usize| crate::labels::char_of(l).map(String::from).unwrap_or_default();
    let nll_by_class = write_csv(
        &out_dir.join("nll_by_class.csv"),
        "label,char,mean_nll",
        by_class
            .iter()
            .enumerate()
            .map(|(l, v)| format!("{l},{},{}", char_name(l), v.map(|x| x.to_string()).unwrap_or_default())),
    )?;

    let mut lengths: Vec<usize> = test.iter().map(|e| e.sequence.length).collect();
    lengths.sort_unstable();
    let split = lengths[lengths.len() / 2];
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();

    let mut files = Vec::new();
    let mut pooled = Vec::new();
    let mut rows = Vec::new();
    for (class, v) in by_class.iter().enumerate() {
        if v.is_none() {
            continue;
        }
        let points = nll_vs_length(decoder, vae, test, class)?;
        files.push(write_csv(
            &out_dir.join(format!("nll_vs_length_{class:02}_{}.csv", char_name(class))),
            "length,nll",
            points.iter().map(|(l, v)| format!("{l},{v}")),
        )?);
        let (short, long) = short_long_variance(&points, split);
        rows.push(format!("{class},{},{},{}", char_name(class), fmt(short), fmt(long)));
        pooled.extend(points);
    }
    let short_long = short_long_variance(&pooled, split);
    rows.push(format!("all,,{},{}", fmt(short_long.0), fmt(short_long.1)));
    let length_variance = write_csv(
        &out_dir.join("length_variance.csv"),
        &format!("label,char,var_len_lt_{split},var_len_ge_{split}"),
        rows.into_iter(),
    )?;
    Ok(EvalFiles {
        nll_by_class,
        nll_vs_length: files,
        length_variance,
        length_split: split,
        short_long,
    })
}

pub(crate) fn write_csv(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> std::io::Result<PathBuf> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{header}")?;
    for r in rows {
        writeln!(out, "{r}")?;
    }
    out.flush()?;
    Ok(path.to_path_buf())
}

/// Trailing moving average with the given window.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for i in 0..values.len() {
        acc += values[i];
        if i >= w {
            acc -= values[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}
