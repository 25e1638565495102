//! Two-phase training: teacher forcing over every (video, annotation) pair,
//! then professional learning where each video's sampled annotations are
//! weighted by how well the model already fits them.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cells::KeepRates;
use crate::data::{build_vocabulary, sample_annotations, Dataset, Split, VideoRecord, Vocabulary};
use crate::decoder::{
    beam_decode, greedy_decode, loss_and_gradient, teacher_forced_forward, Conditioning, DecoderParams, ModelConfig,
    SequenceMasks, TokenId,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_corpus, MetricReport, Sentence};
use crate::selection::{Decision, SelectionConfig, SelectionState};
use crate::tensor::{Real, Tensor};

/// Probability floor used by [`per_annotation_loss`].
pub const PROB_FLOOR: f64 = 1e-12;

/// How many annotations per video are sampled in the professional phase.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Fixed { c: usize },
    /// `2^⌊epoch / period⌋`, counted from epoch 0.
    ExponentialAbsolute { period: usize },
    /// `base · 2^⌊(epoch − epoch_sw) / sigma⌋`, counted from the switch point.
    ExponentialRelative { base: usize, sigma: usize },
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::ExponentialAbsolute { period: 16 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epoch_total: usize,
    /// First epoch of the professional phase.
    pub epoch_sw: usize,
    pub gamma: f64,
    pub schedule: Schedule,
    pub batch_size: usize,
    pub lr: f64,
    pub decay_factor: f64,
    pub decay_interval: usize,
    pub clip: f64,
    pub keep: KeepRates,
    pub seed: u64,
    /// L2 coefficient added to the gradient; 0 disables it.
    pub l2: f64,
    /// Cap the sampled annotation count at what each video has.
    pub cap_to_available: bool,
    pub max_caption_len: usize,
    pub threads: usize,
    /// Also measure the dropout-free loss on the training split each epoch.
    pub track_train_loss: bool,
    pub adam: AdamConfig,
    pub selection: SelectionConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epoch_total: 80,
            epoch_sw: 16,
            gamma: 0.8,
            schedule: Schedule::default(),
            batch_size: 64,
            lr: 2e-4,
            decay_factor: 0.861,
            decay_interval: 1000,
            clip: 40.0,
            keep: KeepRates::default(),
            seed: 0,
            l2: 0.0,
            cap_to_available: true,
            max_caption_len: 20,
            threads: 1,
            track_train_loss: false,
            adam: AdamConfig::default(),
            selection: SelectionConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epoch_sw > self.epoch_total {
            return bad(format!("epoch_sw {} exceeds epoch_total {}", self.epoch_sw, self.epoch_total));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must be in [0, 1], got {}", self.gamma));
        }
        match self.schedule {
            Schedule::Fixed { c } if c < 1 => return bad("fixed sampling size must be at least 1".into()),
            Schedule::ExponentialAbsolute { period } if period < 1 => return bad("schedule period must be at least 1".into()),
            Schedule::ExponentialRelative { base, sigma } if base < 1 || sigma < 1 => {
                return bad("schedule base and sigma must be at least 1".into())
            }
            _ => {}
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) || self.decay_interval == 0 {
            return bad("decay factor must be in (0, 1] with a positive interval".into());
        }
        if !(self.clip > 0.0) {
            return bad(format!("clip threshold must be positive, got {}", self.clip));
        }
        if !(self.l2 >= 0.0) {
            return bad("l2 must be non-negative".into());
        }
        if self.max_caption_len == 0 {
            return bad("max_caption_len must be positive".into());
        }
        self.keep.validate()?;
        self.adam.validate()?;
        self.selection.validate()
    }
}

/// Mean negative log-probability of a token sequence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnnotationLoss {
    pub value: f64,
    /// Steps whose gold probability fell below [`PROB_FLOOR`].
    pub clamped: usize,
}

/// Cross entropy of `gold` under per-step distributions `dists`, averaged
/// over steps.
pub fn per_annotation_loss<T: Real>(dists: &[Vec<T>], gold: &[TokenId]) -> Result<AnnotationLoss> {
    if dists.len() != gold.len() {
        return Err(Error::dim("per_annotation_loss", &[dists.len()], &[gold.len()]));
    }
    if gold.is_empty() {
        return Err(Error::Domain("annotation is empty".into()));
    }
    let mut total = 0.0;
    let mut clamped = 0;
    for (row, &g) in dists.iter().zip(gold) {
        if g >= row.len() {
            return Err(Error::Vocabulary { id: g, size: row.len() });
        }
        let mass: f64 = row.iter().map(|p| p.as_f64()).sum();
        if (mass - 1.0).abs() > 1e-4 || row.iter().any(|p| !(p.as_f64() >= 0.0)) {
            return Err(Error::Domain(format!("distribution does not sum to 1 (mass {mass})")));
        }
        let mut p = row[g].as_f64();
        if p < PROB_FLOOR {
            p = PROB_FLOOR;
            clamped += 1;
        }
        total -= p.ln();
    }
    if clamped > 0 {
        log::warn!("{clamped} gold probabilities clamped at {PROB_FLOOR:e}");
    }
    Ok(AnnotationLoss {
        value: total / gold.len() as f64,
        clamped,
    })
}

fn softmax_neg(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().map(|x| -x).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (-x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// `β = γ·softmax(−l) + (1−γ)·softmax(−|len − l̄|)`.
pub fn professional_weights(losses: &[f64], lengths: &[f64], mean_len: f64, gamma: f64) -> Result<Vec<f64>> {
    if losses.is_empty() {
        return Err(Error::Domain("professional weights need at least one annotation".into()));
    }
    if losses.len() != lengths.len() {
        return Err(Error::dim("professional_weights", &[losses.len()], &[lengths.len()]));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Domain(format!("gamma must be in [0, 1], got {gamma}")));
    }
    if losses.iter().chain(lengths).any(|x| !x.is_finite()) || !mean_len.is_finite() {
        return Err(Error::Domain("losses and lengths must be finite".into()));
    }
    let by_loss = softmax_neg(losses);
    let dev: Vec<f64> = lengths.iter().map(|l| (l - mean_len).abs()).collect();
    let by_len = softmax_neg(&dev);
    Ok(by_loss
        .iter()
        .zip(&by_len)
        .map(|(a, b)| gamma * a + (1.0 - gamma) * b)
        .collect())
}

/// One video's share of a professional batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoGroup {
    /// Indices into the video's annotation list.
    pub annotations: Vec<usize>,
    pub lengths: Vec<f64>,
    pub losses: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfessionalBatch {
    pub videos: Vec<VideoGroup>,
    pub mean_len: f64,
}

/// `(1/bs) Σ_i β⁽ⁱ⁾ · l⁽ⁱ⁾`.
pub fn weighted_batch_loss(batch: &ProfessionalBatch) -> Result<f64> {
    if batch.videos.is_empty() {
        return Err(Error::Domain("empty professional batch".into()));
    }
    let mut total = 0.0;
    for v in &batch.videos {
        if v.weights.len() != v.losses.len() {
            return Err(Error::dim("weighted_batch_loss", &[v.weights.len()], &[v.losses.len()]));
        }
        total += v.weights.iter().zip(&v.losses).map(|(b, l)| b * l).sum::<f64>();
    }
    Ok(total / batch.videos.len() as f64)
}

/// Annotations sampled per video at `epoch`; 1 during teacher forcing.
pub fn sampling_size(epoch: usize, cfg: &TrainConfig) -> usize {
    if epoch < cfg.epoch_sw {
        return 1;
    }
    let pow = |e: usize| 1usize << e.min(40);
    match cfg.schedule {
        Schedule::Fixed { c } => c,
        Schedule::ExponentialAbsolute { period } => pow(epoch / period.max(1)),
        Schedule::ExponentialRelative { base, sigma } => base.saturating_mul(pow((epoch - cfg.epoch_sw) / sigma.max(1))),
    }
}

/// `lr₀ · factor^⌊step / interval⌋`.
pub fn decayed_lr(step: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr * cfg.decay_factor.powi((step / cfg.decay_interval.max(1)) as i32)
}

/// Scales `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut [Tensor<T>], max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::Config(format!("clip threshold must be positive, got {max_norm}")));
    }
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|x| x.as_f64() * x.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = T::of(max_norm / norm);
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x = *x * s;
            }
        }
    }
    Ok(norm)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config("Adam needs beta1, beta2 in [0, 1) and eps > 0".into()));
        }
        Ok(())
    }
}

/// Bias-corrected Adam; moments are kept in 64 bits whatever `T` is.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Adam {
            config,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// One update. Nothing is modified when a gradient is non-finite.
    pub fn step<T: Real>(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>], names: &[String], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::dim("adam_step", &[params.len()], &[grads.len(), self.m.len()]));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || g.len() != self.m[i].len() {
                return Err(Error::dim("adam_step", p.shape(), g.shape()));
            }
            if g.data().iter().any(|x| !x.is_finite()) {
                let name = names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
                return Err(Error::NonFiniteGradient(name));
            }
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (x, gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gj = gj.as_f64();
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let update = lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                *x = T::of(x.as_f64() - update);
            }
        }
        Ok(())
    }
}

/// Maps `f` over `items` on up to `threads` scoped threads; output order
/// matches input order whatever the thread count.
pub(crate) fn par_map<I: Sync, O: Send>(items: &[I], threads: usize, f: impl Fn(&I) -> Result<O> + Sync) -> Result<Vec<O>> {
    let threads = threads.max(1).min(items.len().max(1));
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    let parts: Vec<Result<Vec<O>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| scope.spawn(move || c.iter().map(f).collect::<Result<Vec<O>>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// One annotation of one video, with the seed of its dropout masks.
#[derive(Clone, Copy, Debug)]
pub struct SequenceJob<'a, T> {
    pub record: &'a VideoRecord<T>,
    pub annotation: usize,
    pub mask_seed: u64,
}

fn cond<T>(r: &VideoRecord<T>) -> Conditioning<'_, T> {
    Conditioning {
        visual: &r.visual,
        semantic: &r.semantic,
    }
}

/// Dropout masks of one training sequence; `None` when every keep rate is 1.
pub fn sequence_masks<T: Real>(config: &ModelConfig, keep: KeepRates, mask_seed: u64) -> Result<Option<SequenceMasks<T>>> {
    if keep == KeepRates::NONE {
        return Ok(None);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
    SequenceMasks::sample(config, keep, &mut rng).map(Some)
}

fn job_gradient<T: Real>(params: &DecoderParams<T>, job: &SequenceJob<'_, T>, keep: KeepRates) -> Result<(f64, Vec<Tensor<T>>)> {
    let masks = sequence_masks(&params.config, keep, job.mask_seed)?;
    let (loss, grads) = loss_and_gradient(cond(job.record), &job.record.annotations[job.annotation], params, masks.as_ref())?;
    Ok((loss.as_f64(), grads))
}

fn weighted_sum<T: Real>(params: &DecoderParams<T>, parts: &[(f64, Vec<Tensor<T>>)], weights: &[f64]) -> Vec<Tensor<T>> {
    let mut total: Vec<Tensor<T>> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
    for ((_, g), &w) in parts.iter().zip(weights) {
        let w = T::of(w);
        for (acc, gi) in total.iter_mut().zip(g) {
            for (a, &x) in acc.data_mut().iter_mut().zip(gi.data()) {
                *a = *a + w * x;
            }
        }
    }
    total
}

/// Loss and gradient of one optimization step.
#[derive(Clone, Debug)]
pub struct BatchResult<T> {
    pub loss: f64,
    pub grads: Vec<Tensor<T>>,
    /// Present for professional batches.
    pub professional: Option<ProfessionalBatch>,
}

/// Teacher forcing: the plain mean over the given pairs.
pub fn general_gradient<T: Real>(
    params: &DecoderParams<T>,
    jobs: &[SequenceJob<'_, T>],
    keep: KeepRates,
    threads: usize,
) -> Result<BatchResult<T>> {
    if jobs.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    let parts = par_map(jobs, threads, |j| job_gradient(params, j, keep))?;
    let w = vec![1.0 / jobs.len() as f64; jobs.len()];
    let loss = parts.iter().map(|p| p.0).sum::<f64>() / jobs.len() as f64;
    Ok(BatchResult {
        loss,
        grads: weighted_sum(params, &parts, &w),
        professional: None,
    })
}

/// Professional learning: every inner slice holds one video's sampled
/// annotations. Weights are computed from the current losses and then held
/// constant, so the gradient is `(1/bs) Σ_i Σ_k β_ik ∇l_ik`.
pub fn professional_gradient<T: Real>(
    params: &DecoderParams<T>,
    videos: &[Vec<SequenceJob<'_, T>>],
    mean_len: f64,
    gamma: f64,
    keep: KeepRates,
    threads: usize,
) -> Result<BatchResult<T>> {
    if videos.is_empty() || videos.iter().any(Vec::is_empty) {
        return Err(Error::Domain("professional batch needs at least one annotation per video".into()));
    }
    let flat: Vec<SequenceJob<'_, T>> = videos.iter().flatten().copied().collect();
    let parts = par_map(&flat, threads, |j| job_gradient(params, j, keep))?;
    let bs = videos.len() as f64;
    let mut groups = Vec::with_capacity(videos.len());
    let mut coeffs = Vec::with_capacity(flat.len());
    let mut offset = 0;
    for jobs in videos {
        let losses: Vec<f64> = parts[offset..offset + jobs.len()].iter().map(|p| p.0).collect();
        let lengths: Vec<f64> = jobs.iter().map(|j| j.record.annotation_len(j.annotation) as f64).collect();
        let weights = professional_weights(&losses, &lengths, mean_len, gamma)?;
        coeffs.extend(weights.iter().map(|b| b / bs));
        groups.push(VideoGroup {
            annotations: jobs.iter().map(|j| j.annotation).collect(),
            lengths,
            losses,
            weights,
        });
        offset += jobs.len();
    }
    let batch = ProfessionalBatch { videos: groups, mean_len };
    Ok(BatchResult {
        loss: weighted_batch_loss(&batch)?,
        grads: weighted_sum(params, &parts, &coeffs),
        professional: Some(batch),
    })
}

/// Encoded splits plus the vocabulary they were encoded with.
#[derive(Clone, Debug)]
pub struct TrainingData<T> {
    pub vocab: Vocabulary,
    pub train: Vec<VideoRecord<T>>,
    pub validation: Vec<VideoRecord<T>>,
}

impl<T: Real> TrainingData<T> {
    /// Builds the vocabulary from the training captions only.
    pub fn from_dataset(dataset: &Dataset, min_count: usize) -> Result<Self> {
        let corpus = dataset.tokenized(Split::Train);
        let vocab = build_vocabulary(corpus.iter().map(Vec::as_slice), min_count)?;
        Ok(TrainingData {
            train: dataset.encode(Split::Train, &vocab)?,
            validation: dataset.encode(Split::Validation, &vocab)?,
            vocab,
        })
    }

    /// Mean annotation word count over the training split.
    pub fn mean_len(&self) -> f64 {
        let (sum, n) = self
            .train
            .iter()
            .flat_map(|r| (0..r.annotations.len()).map(move |k| r.annotation_len(k)))
            .fold((0usize, 0usize), |(s, n), l| (s + l, n + 1));
        if n == 0 {
            0.0
        } else {
            sum as f64 / n as f64
        }
    }
}

/// Dropout-free mean per-annotation loss over every annotation of `records`.
pub fn mean_annotation_loss<T: Real>(params: &DecoderParams<T>, records: &[VideoRecord<T>], threads: usize) -> Result<f64> {
    let jobs: Vec<(&VideoRecord<T>, usize)> = records
        .iter()
        .flat_map(|r| (0..r.annotations.len()).map(move |k| (r, k)))
        .collect();
    if jobs.is_empty() {
        return Err(Error::Domain("no annotations to score".into()));
    }
    let losses = par_map(&jobs, threads, |&(r, k)| {
        let dists = teacher_forced_forward(cond(r), &r.annotations[k], params, None)?;
        Ok(per_annotation_loss(&dists, &r.annotations[k])?.value)
    })?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Decodes every record (greedy when `beam <= 1`); output keeps input order.
pub fn caption_records<T: Real>(
    params: &DecoderParams<T>,
    records: &[VideoRecord<T>],
    vocab: &Vocabulary,
    max_len: usize,
    beam: usize,
    threads: usize,
) -> Result<Vec<Sentence>> {
    par_map(records, threads, |r| {
        let ids = if beam <= 1 {
            greedy_decode(cond(r), params, max_len)?
        } else {
            beam_decode(cond(r), params, max_len, beam)?
        };
        Ok(vocab.decode(&ids))
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    General,
    Professional,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::General => "general",
            Phase::Professional => "professional",
        }
    }
}

/// Everything measured in one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub n: usize,
    /// Mean optimization loss over the epoch's batches (dropout on).
    pub train_loss: f64,
    pub lr: f64,
    pub metrics: MetricReport,
    pub validation_loss: f64,
    /// Dropout-free training loss, when tracked.
    pub train_eval_loss: Option<f64>,
    pub overall: f64,
    pub decision: Decision,
}

pub const LOG_HEADER: &str = "epoch\tphase\tn\tloss\tlr\tB4\tC\tM\tR\toverall\tdecision\tval_loss\ttrain_eval_loss";

impl EpochRecord {
    pub fn log_line(&self) -> String {
        let m = &self.metrics;
        let mut s = String::new();
        let _ = write!(
            s,
            "{}\t{}\t{}\t{:.6}\t{:.6e}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.6}\t{}\t{:.6}\t",
            self.epoch,
            self.phase.as_str(),
            self.n,
            self.train_loss,
            self.lr,
            m.bleu4,
            m.cider,
            m.meteor,
            m.rouge_l,
            self.overall,
            self.decision.as_str(),
            self.validation_loss,
        );
        match self.train_eval_loss {
            Some(l) => {
                let _ = write!(s, "{l:.6}");
            }
            None => s.push('-'),
        }
        s
    }
}

pub fn training_log(epochs: &[EpochRecord]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for e in epochs {
        out.push_str(&e.log_line());
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainingOutcome<T> {
    pub selection: SelectionState,
    pub epochs: Vec<EpochRecord>,
    pub champion: Option<DecoderParams<T>>,
    pub final_params: DecoderParams<T>,
    pub steps: usize,
}

impl<T> TrainingOutcome<T> {
    pub fn log(&self) -> String {
        training_log(&self.epochs)
    }
}

/// Called after every epoch with its record and the current parameters.
pub type EpochHook<'a, T> = dyn FnMut(&EpochRecord, &DecoderParams<T>) -> Result<()> + 'a;

/// Runs the full schedule. All randomness (initialization, shuffling,
/// annotation sampling and dropout masks) derives from `cfg.seed`.
pub fn run_training<T: Real>(
    data: &TrainingData<T>,
    model: ModelConfig,
    cfg: &TrainConfig,
    hook: &mut EpochHook<'_, T>,
) -> Result<TrainingOutcome<T>> {
    cfg.validate()?;
    model.validate()?;
    if data.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    if data.validation.is_empty() {
        return Err(Error::Config("validation split is empty".into()));
    }
    if model.vocab_size != data.vocab.len() {
        return Err(Error::Config(format!(
            "model vocabulary size {} does not match the data vocabulary ({})",
            model.vocab_size,
            data.vocab.len()
        )));
    }
    if let Some(r) = data.train.iter().chain(&data.validation).find(|r| r.annotations.is_empty()) {
        return Err(Error::Validation(format!("video `{}` has no annotations", r.id)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = DecoderParams::<T>::init(model, rng.gen())?;
    let names = DecoderParams::<T>::names();
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let mut adam = Adam::new(cfg.adam, &sizes);
    let mut selection = SelectionState::new(cfg.selection.clone())?;
    let mean_len = data.mean_len();
    let references: Vec<Vec<Sentence>> = data.validation.iter().map(|r| r.references.clone()).collect();

    let mut epochs = Vec::with_capacity(cfg.epoch_total);
    let mut champion = None;
    let mut step = 0usize;
    for epoch in 0..cfg.epoch_total {
        let phase = if epoch < cfg.epoch_sw { Phase::General } else { Phase::Professional };
        let n = sampling_size(epoch, cfg);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut apply = |result: BatchResult<T>, params: &mut DecoderParams<T>, step: &mut usize| -> Result<()> {
            let mut grads = result.grads;
            if cfg.l2 > 0.0 {
                for (g, p) in grads.iter_mut().zip(params.tensors()) {
                    for (gx, &px) in g.data_mut().iter_mut().zip(p.data()) {
                        *gx = *gx + T::of(cfg.l2) * px;
                    }
                }
            }
            clip_global_norm(&mut grads, cfg.clip)?;
            let lr = decayed_lr(*step, cfg);
            adam.step(&mut params.tensors_mut(), &grads, &names, lr)?;
            *step += 1;
            loss_sum += result.loss;
            batches += 1;
            Ok(())
        };
        match phase {
            Phase::General => {
                let mut pairs: Vec<(usize, usize)> = data
                    .train
                    .iter()
                    .enumerate()
                    .flat_map(|(i, r)| (0..r.annotations.len()).map(move |k| (i, k)))
                    .collect();
                pairs.shuffle(&mut rng);
                for chunk in pairs.chunks(cfg.batch_size) {
                    let jobs: Vec<SequenceJob<'_, T>> = chunk
                        .iter()
                        .map(|&(i, k)| SequenceJob {
                            record: &data.train[i],
                            annotation: k,
                            mask_seed: rng.gen(),
                        })
                        .collect();
                    let result = general_gradient(&params, &jobs, cfg.keep, cfg.threads)?;
                    apply(result, &mut params, &mut step)?;
                }
            }
            Phase::Professional => {
                let mut order: Vec<usize> = (0..data.train.len()).collect();
                order.shuffle(&mut rng);
                for chunk in order.chunks(cfg.batch_size) {
                    let videos: Vec<Vec<SequenceJob<'_, T>>> = chunk
                        .iter()
                        .map(|&i| {
                            let record = &data.train[i];
                            let available = record.annotations.len();
                            let take = if cfg.cap_to_available { n.min(available) } else { n };
                            sample_annotations(available, take, &mut rng)
                                .into_iter()
                                .map(|k| SequenceJob {
                                    record,
                                    annotation: k,
                                    mask_seed: rng.gen(),
                                })
                                .collect()
                        })
                        .collect();
                    let result = professional_gradient(&params, &videos, mean_len, cfg.gamma, cfg.keep, cfg.threads)?;
                    apply(result, &mut params, &mut step)?;
                }
            }
        }

        let captions = caption_records(&params, &data.validation, &data.vocab, cfg.max_caption_len, 1, cfg.threads)?;
        let metrics = evaluate_corpus(&captions, &references)?;
        let validation_loss = mean_annotation_loss(&params, &data.validation, cfg.threads)?;
        let train_eval_loss = if cfg.track_train_loss {
            Some(mean_annotation_loss(&params, &data.train, cfg.threads)?)
        } else {
            None
        };
        let decision = selection.observe_report(&metrics, validation_loss, epoch)?;
        let overall = match decision {
            Decision::Rejected => f64::NAN,
            _ => selection.history.last().map_or(f64::NAN, |h| h.overall),
        };
        if decision == Decision::SaveChampion {
            champion = Some(params.clone());
        }
        let record = EpochRecord {
            epoch,
            phase,
            n: if phase == Phase::General { 1 } else { n },
            train_loss: loss_sum / batches.max(1) as f64,
            lr: decayed_lr(step.saturating_sub(1), cfg),
            metrics,
            validation_loss,
            train_eval_loss,
            overall,
            decision,
        };
        log::info!("{}", record.log_line());
        hook(&record, &params)?;
        epochs.push(record);
    }
    Ok(TrainingOutcome {
        selection,
        epochs,
        champion,
        final_params: params,
        steps: step,
    })
}
