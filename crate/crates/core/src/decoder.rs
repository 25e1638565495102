//! Caption decoder: token embedding, two stacked semantic cells and an affine
//! output layer, with teacher-forced scoring and greedy/beam generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cells::{
    init_params, sample_masks, Cell, CellDims, CellParams, DropoutMasks, KeepRates, Normalization, Stack, StackState,
};
use crate::error::{Error, Result};
use crate::tape::{GradTape, Var};
use crate::tensor::{self, Real, Tensor, LN_EPS};

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;

/// Architecture of a decoder.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub n_x: usize,
    pub n_h: usize,
    pub n_f: usize,
    pub n_s: usize,
    pub n_v: usize,
    #[serde(default = "default_true")]
    pub layer_norm: bool,
    #[serde(default = "default_eps")]
    pub ln_eps: f64,
    #[serde(default = "default_true")]
    pub visual_to_all_layers: bool,
}

fn default_true() -> bool {
    true
}

fn default_eps() -> f64 {
    LN_EPS
}

impl ModelConfig {
    pub fn layer1(&self) -> CellDims {
        CellDims {
            n_x: self.n_x,
            n_h: self.n_h,
            n_f: self.n_f,
            n_s: self.n_s,
            n_v: self.n_v,
        }
    }

    pub fn layer2(&self) -> CellDims {
        CellDims {
            n_x: self.n_h,
            ..self.layer1()
        }
    }

    pub fn normalization(&self) -> Normalization {
        if self.layer_norm {
            Normalization::Layer { eps: self.ln_eps }
        } else {
            Normalization::Identity
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size <= UNK {
            return Err(Error::Config(format!(
                "vocabulary must hold the four special tokens, got size {}",
                self.vocab_size
            )));
        }
        if !(self.ln_eps > 0.0) {
            return Err(Error::Config("layer-norm epsilon must be positive".into()));
        }
        self.layer1().validate()
    }
}

/// All trainable tensors of a decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams<T> {
    pub config: ModelConfig,
    /// `|V| × n_x`
    pub embedding: Tensor<T>,
    pub layer1: CellParams<T>,
    pub layer2: CellParams<T>,
    /// `|V| × n_h`
    pub out_weight: Tensor<T>,
    pub out_bias: Tensor<T>,
}

/// Tape handles of a bound decoder.
#[derive(Clone, Debug)]
pub struct BoundDecoder {
    pub embedding: Var,
    pub layer1: Cell<Var>,
    pub layer2: Cell<Var>,
    pub out_weight: Var,
    pub out_bias: Var,
}

impl BoundDecoder {
    /// Handles in the same order as [`DecoderParams::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.embedding];
        out.extend(self.layer1.slots().into_iter().copied());
        out.extend(self.layer2.slots().into_iter().copied());
        out.push(self.out_weight);
        out.push(self.out_bias);
        out
    }
}

/// Dropout masks of both layers for one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceMasks<T> {
    pub layer1: DropoutMasks<Tensor<T>>,
    pub layer2: DropoutMasks<Tensor<T>>,
}

impl<T: Real> SequenceMasks<T> {
    pub fn sample(config: &ModelConfig, keep: KeepRates, rng: &mut impl Rng) -> Result<Self> {
        Ok(SequenceMasks {
            layer1: sample_masks(keep, &config.layer1(), rng)?,
            layer2: sample_masks(keep, &config.layer2(), rng)?,
        })
    }
}

impl<T: Real> DecoderParams<T> {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer1 = init_params(config.layer1(), rng.gen())?;
        let layer2 = init_params(config.layer2(), rng.gen())?;
        let v = config.vocab_size;
        let mut uniform = |rows: usize, cols: usize| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            let data = (0..rows * cols).map(|_| T::of(rng.gen_range(-limit..=limit))).collect();
            Tensor::matrix(rows, cols, data)
        };
        Ok(DecoderParams {
            config,
            embedding: uniform(v, config.n_x)?,
            layer1,
            layer2,
            out_weight: uniform(v, config.n_h)?,
            out_bias: Tensor::zeros(&[v]),
        })
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = vec![&self.embedding];
        out.extend(self.layer1.slots());
        out.extend(self.layer2.slots());
        out.push(&self.out_weight);
        out.push(&self.out_bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.embedding];
        out.extend(self.layer1.slots_mut());
        out.extend(self.layer2.slots_mut());
        out.push(&mut self.out_weight);
        out.push(&mut self.out_bias);
        out
    }

    /// Tensor names matching [`DecoderParams::tensors`].
    pub fn names() -> Vec<String> {
        let mut out = vec!["embedding".to_string()];
        out.extend(Cell::<()>::slot_names().into_iter().map(|n| format!("layer1.{n}")));
        out.extend(Cell::<()>::slot_names().into_iter().map(|n| format!("layer2.{n}")));
        out.push("output.weight".into());
        out.push("output.bias".into());
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Checks every tensor against the configuration.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let v = self.config.vocab_size;
        let expect = |t: &Tensor<T>, shape: &[usize], name: &str| {
            if t.shape() != shape {
                Err(Error::Config(format!("{name} has shape {:?}, expected {shape:?}", t.shape())))
            } else {
                Ok(())
            }
        };
        expect(&self.embedding, &[v, self.config.n_x], "embedding")?;
        expect(&self.out_weight, &[v, self.config.n_h], "output.weight")?;
        expect(&self.out_bias, &[v], "output.bias")?;
        if self.layer1.dims != self.config.layer1() || self.layer2.dims != self.config.layer2() {
            return Err(Error::Config("layer dimensions disagree with the model configuration".into()));
        }
        self.layer1.validate()?;
        self.layer2.validate()
    }

    pub fn bind(&self, tape: &mut GradTape<T>) -> BoundDecoder {
        BoundDecoder {
            embedding: tape.leaf(self.embedding.clone()),
            layer1: self.layer1.bind(tape),
            layer2: self.layer2.bind(tape),
            out_weight: tape.leaf(self.out_weight.clone()),
            out_bias: tape.leaf(self.out_bias.clone()),
        }
    }

    /// Flat copy of every parameter, in [`DecoderParams::tensors`] order.
    pub fn flatten(&self) -> Vec<T> {
        self.tensors().iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Overwrites every parameter from a flat vector.
    pub fn assign_flat(&mut self, flat: &[T]) -> Result<()> {
        let total = self.param_count();
        if flat.len() != total {
            return Err(Error::dim("assign_flat", &[flat.len()], &[total]));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Same parameters converted to another precision.
    pub fn cast<U: Real>(&self) -> DecoderParams<U> {
        DecoderParams {
            config: self.config,
            embedding: self.embedding.cast(),
            layer1: self.layer1.map(Tensor::cast),
            layer2: self.layer2.map(Tensor::cast),
            out_weight: self.out_weight.cast(),
            out_bias: self.out_bias.cast(),
        }
    }
}

/// The per-video conditioning inputs.
#[derive(Clone, Copy, Debug)]
pub struct Conditioning<'a, T> {
    pub visual: &'a Tensor<T>,
    pub semantic: &'a Tensor<T>,
}

fn check_tokens(tokens: &[TokenId], vocab: usize) -> Result<()> {
    match tokens.iter().find(|&&t| t >= vocab) {
        Some(&id) => Err(Error::Vocabulary { id, size: vocab }),
        None => Ok(()),
    }
}

/// A decoder bound to a tape together with the sequence's inputs.
pub struct Unroll<'a> {
    pub model: &'a BoundDecoder,
    pub config: &'a ModelConfig,
    pub masks: Option<&'a (DropoutMasks<Var>, DropoutMasks<Var>)>,
}

impl Unroll<'_> {
    fn stack(&self) -> Stack<'_> {
        Stack {
            layer1: &self.model.layer1,
            layer2: &self.model.layer2,
            masks1: self.masks.map(|m| &m.0),
            masks2: self.masks.map(|m| &m.1),
            norm: self.config.normalization(),
            visual_to_all_layers: self.config.visual_to_all_layers,
        }
    }

    pub fn start<T: Real>(&self, tape: &mut GradTape<T>, s: Var, v: Var) -> Result<StackState> {
        self.stack().start(tape, s, v)
    }

    /// Feeds `token` and returns the next state and the output logits.
    pub fn step<T: Real>(&self, tape: &mut GradTape<T>, state: &StackState, token: TokenId) -> Result<(StackState, Var)> {
        let x = tape.row(self.model.embedding, token)?;
        let (next, _) = self.stack().step(tape, state, x)?;
        let proj = tape.matvec(self.model.out_weight, next.h2)?;
        let logits = tape.add(proj, self.model.out_bias)?;
        Ok((next, logits))
    }

    /// Mean token cross entropy of `annotation` (which should end with EOS)
    /// under teacher forcing, plus the per-step logits.
    pub fn annotation_loss<T: Real>(
        &self,
        tape: &mut GradTape<T>,
        s: Var,
        v: Var,
        annotation: &[TokenId],
    ) -> Result<(Var, Vec<Var>)> {
        if annotation.is_empty() {
            return Err(Error::Domain("annotation must contain at least the end token".into()));
        }
        check_tokens(annotation, self.config.vocab_size)?;
        let mut state = self.start(tape, s, v)?;
        let mut prev = BOS;
        let mut total: Option<Var> = None;
        let mut all_logits = Vec::with_capacity(annotation.len());
        for &gold in annotation {
            let (next, logits) = self.step(tape, &state, prev)?;
            let nll = tape.neg_log_likelihood(logits, gold)?;
            total = Some(match total {
                Some(t) => tape.add(t, nll)?,
                None => nll,
            });
            all_logits.push(logits);
            state = next;
            prev = gold;
        }
        let total = total.expect("non-empty annotation");
        let mean = tape.scale(total, T::of(1.0 / annotation.len() as f64));
        Ok((mean, all_logits))
    }
}

fn bind_masks<T: Real>(tape: &mut GradTape<T>, masks: Option<&SequenceMasks<T>>) -> Option<(DropoutMasks<Var>, DropoutMasks<Var>)> {
    masks.map(|m| (m.layer1.bind(tape), m.layer2.bind(tape)))
}

fn bind_inputs<T: Real>(tape: &mut GradTape<T>, config: &ModelConfig, cond: Conditioning<'_, T>) -> Result<(Var, Var)> {
    if cond.semantic.shape() != [config.n_s] || cond.visual.shape() != [config.n_v] {
        return Err(Error::Config(format!(
            "feature sizes (v {:?}, s {:?}) do not match the model (n_v {}, n_s {})",
            cond.visual.shape(),
            cond.semantic.shape(),
            config.n_v,
            config.n_s
        )));
    }
    Ok((tape.leaf(cond.semantic.clone()), tape.leaf(cond.visual.clone())))
}

/// Teacher-forced next-token distributions: step `t` consumes the embedding
/// of `annotation[t-1]` (BOS at `t = 0`) and predicts `annotation[t]`.
/// `masks = None` disables dropout.
pub fn teacher_forced_forward<T: Real>(
    cond: Conditioning<'_, T>,
    annotation: &[TokenId],
    params: &DecoderParams<T>,
    masks: Option<&SequenceMasks<T>>,
) -> Result<Vec<Vec<T>>> {
    let mut tape = GradTape::new();
    let model = params.bind(&mut tape);
    let bound_masks = bind_masks(&mut tape, masks);
    let (s, v) = bind_inputs(&mut tape, &params.config, cond)?;
    let unroll = Unroll {
        model: &model,
        config: &params.config,
        masks: bound_masks.as_ref(),
    };
    let (_, logits) = unroll.annotation_loss(&mut tape, s, v, annotation)?;
    logits
        .into_iter()
        .map(|l| tensor::softmax(tape.value(l).data()))
        .collect()
}

/// Mean teacher-forced cross entropy of one annotation and its gradient with
/// respect to every parameter (in [`DecoderParams::tensors`] order).
pub fn loss_and_gradient<T: Real>(
    cond: Conditioning<'_, T>,
    annotation: &[TokenId],
    params: &DecoderParams<T>,
    masks: Option<&SequenceMasks<T>>,
) -> Result<(T, Vec<Tensor<T>>)> {
    let mut tape = GradTape::new();
    let model = params.bind(&mut tape);
    let bound_masks = bind_masks(&mut tape, masks);
    let (s, v) = bind_inputs(&mut tape, &params.config, cond)?;
    let unroll = Unroll {
        model: &model,
        config: &params.config,
        masks: bound_masks.as_ref(),
    };
    let (loss, _) = unroll.annotation_loss(&mut tape, s, v, annotation)?;
    let mut grads = tape.backward(loss)?;
    let g = model.vars().into_iter().map(|var| grads.take_or_zeros(&tape, var)).collect();
    Ok((tape.scalar(loss), g))
}

/// Log-probabilities used during generation: PAD, BOS and UNK are excluded.
pub fn generation_log_probs<T: Real>(logits: &[T]) -> Result<Vec<T>> {
    let mut masked = logits.to_vec();
    for id in [PAD, BOS, UNK] {
        if id < masked.len() {
            masked[id] = T::neg_infinity();
        }
    }
    tensor::log_softmax(&masked)
}

struct Decoding<'a, T: Real> {
    tape: GradTape<T>,
    model: BoundDecoder,
    config: &'a ModelConfig,
    s: Var,
    v: Var,
}

impl<'a, T: Real> Decoding<'a, T> {
    fn new(cond: Conditioning<'_, T>, params: &'a DecoderParams<T>) -> Result<Self> {
        let mut tape = GradTape::new();
        let model = params.bind(&mut tape);
        let (s, v) = bind_inputs(&mut tape, &params.config, cond)?;
        Ok(Decoding {
            tape,
            model,
            config: &params.config,
            s,
            v,
        })
    }

    fn start(&mut self) -> Result<StackState> {
        let unroll = Unroll {
            model: &self.model,
            config: self.config,
            masks: None,
        };
        unroll.start(&mut self.tape, self.s, self.v)
    }

    fn advance(&mut self, state: &StackState, token: TokenId) -> Result<(StackState, Vec<T>)> {
        let unroll = Unroll {
            model: &self.model,
            config: self.config,
            masks: None,
        };
        let (next, logits) = unroll.step(&mut self.tape, state, token)?;
        let logp = generation_log_probs(self.tape.value(logits).data())?;
        Ok((next, logp))
    }
}

fn argmax<T: Real>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding without dropout: the most likely token is fed back until
/// EOS or `max_len` tokens. The returned caption excludes EOS.
pub fn greedy_decode<T: Real>(cond: Conditioning<'_, T>, params: &DecoderParams<T>, max_len: usize) -> Result<Vec<TokenId>> {
    let mut dec = Decoding::new(cond, params)?;
    Ok(greedy_search(&mut dec, max_len)?.tokens)
}

fn greedy_search<T: Real>(dec: &mut Decoding<'_, T>, max_len: usize) -> Result<BeamResult> {
    let mut state = dec.start()?;
    let mut prev = BOS;
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    let mut terminated = false;
    while tokens.len() < max_len {
        let (next, logp) = dec.advance(&state, prev)?;
        let tok = argmax(&logp);
        log_prob += logp[tok].as_f64();
        if tok == EOS {
            terminated = true;
            break;
        }
        tokens.push(tok);
        state = next;
        prev = tok;
    }
    let scored = if terminated { tokens.len() + 1 } else { tokens.len().max(1) };
    Ok(BeamResult {
        normalized: log_prob / scored as f64,
        log_prob,
        tokens,
        terminated,
    })
}

#[derive(Clone, Debug)]
struct Hypothesis {
    tokens: Vec<TokenId>,
    log_prob: f64,
    state: StackState,
}

/// A finished beam-search result.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamResult {
    pub tokens: Vec<TokenId>,
    /// Sum of generation log-probabilities, EOS included when emitted.
    pub log_prob: f64,
    /// `log_prob` divided by the number of scored tokens.
    pub normalized: f64,
    pub terminated: bool,
}

/// Length-normalized beam search. Width 1 reproduces [`greedy_decode`]; the
/// greedy hypothesis also competes in the final choice, so the result never
/// scores below it.
pub fn beam_decode<T: Real>(
    cond: Conditioning<'_, T>,
    params: &DecoderParams<T>,
    max_len: usize,
    width: usize,
) -> Result<Vec<TokenId>> {
    beam_search(cond, params, max_len, width).map(|r| r.tokens)
}

/// [`beam_decode`] returning scores as well.
pub fn beam_search<T: Real>(
    cond: Conditioning<'_, T>,
    params: &DecoderParams<T>,
    max_len: usize,
    width: usize,
) -> Result<BeamResult> {
    if width == 0 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    let mut dec = Decoding::new(cond, params)?;
    let start = dec.start()?;
    let mut beams = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: start,
    }];
    let mut finished: Vec<BeamResult> = Vec::new();

    for _ in 0..max_len {
        // (beam index, token, new log prob)
        let mut candidates: Vec<(usize, TokenId, f64, StackState)> = Vec::new();
        for (b, hyp) in beams.iter().enumerate() {
            let prev = hyp.tokens.last().copied().unwrap_or(BOS);
            let (next, logp) = dec.advance(&hyp.state, prev)?;
            let mut order: Vec<usize> = (0..logp.len()).filter(|&i| logp[i].is_finite()).collect();
            order.sort_by(|&a, &c| logp[c].partial_cmp(&logp[a]).expect("finite").then(a.cmp(&c)));
            for &tok in order.iter().take(width) {
                candidates.push((b, tok, hyp.log_prob + logp[tok].as_f64(), next.clone()));
            }
        }
        // stable: ties keep beam order then token order
        candidates.sort_by(|a, c| c.2.partial_cmp(&a.2).expect("finite scores"));
        let mut next_beams = Vec::with_capacity(width);
        for (b, tok, lp, state) in candidates.into_iter().take(width) {
            let mut tokens = beams[b].tokens.clone();
            if tok == EOS {
                let scored = tokens.len() + 1;
                finished.push(BeamResult {
                    tokens,
                    log_prob: lp,
                    normalized: lp / scored as f64,
                    terminated: true,
                });
            } else {
                tokens.push(tok);
                next_beams.push(Hypothesis {
                    tokens,
                    log_prob: lp,
                    state,
                });
            }
        }
        beams = next_beams;
        if beams.is_empty() || finished.len() >= width {
            break;
        }
    }
    for hyp in beams {
        let scored = hyp.tokens.len().max(1);
        finished.push(BeamResult {
            normalized: hyp.log_prob / scored as f64,
            log_prob: hyp.log_prob,
            tokens: hyp.tokens,
            terminated: false,
        });
    }
    finished.push(greedy_search(&mut dec, max_len)?);
    let mut best: Option<BeamResult> = None;
    for r in finished {
        if best.as_ref().is_none_or(|b| r.normalized > b.normalized) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one hypothesis"))
}
