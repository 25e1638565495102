//! Gated recurrent cells: the plain GRU, the semantic GRU whose weights are
//! factorized through a per-video semantic vector, and the variational,
//! layer-normalized semantic GRU used in the decoder stack.
//!
//! Every cell is written once against [`GradTape`]; the tensor-level
//! functions (`gru_step`, `semantic_gru_step`, `vns_gru_step`,
//! `stacked_forward`) wrap the taped versions for evaluation-only use.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{GradTape, Var};
use crate::tensor::{Real, Tensor, LN_EPS};

/// Dimensions of one recurrent layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellDims {
    /// input size
    pub n_x: usize,
    /// hidden size
    pub n_h: usize,
    /// factor (internal embedding) size
    pub n_f: usize,
    /// semantic vector size
    pub n_s: usize,
    /// visual vector size
    pub n_v: usize,
}

impl CellDims {
    pub fn validate(&self) -> Result<()> {
        let d = [self.n_x, self.n_h, self.n_f, self.n_s, self.n_v];
        if d.contains(&0) {
            return Err(Error::Config(format!("cell dimensions must be positive: {self:?}")));
        }
        if self.n_h < 2 {
            return Err(Error::Config("layer normalization needs n_h >= 2".into()));
        }
        Ok(())
    }

    /// Number of scalars in a [`CellParams`] with these dimensions.
    pub fn param_count(&self) -> usize {
        let CellDims { n_x, n_h, n_f, n_s, n_v } = *self;
        let per_gate = n_f * (3 * n_s + n_x + n_h + n_v) + 3 * n_h * n_f;
        3 * per_gate + 3 * 2 * n_h
    }
}

/// Factorized weights of one gate: `W·1`, `W·2`, `W·3` for the input stream,
/// `U··` for the recurrent stream and `V··` for the visual stream.
#[derive(Clone, Debug, PartialEq)]
pub struct Gate<P> {
    pub w_s: P,
    pub w_x: P,
    pub w_o: P,
    pub u_s: P,
    pub u_h: P,
    pub u_o: P,
    pub v_s: P,
    pub v_v: P,
    pub v_o: P,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Norm<P> {
    pub gain: P,
    pub bias: P,
}

/// Parameters of a semantic GRU layer, generic over the slot type so the
/// same layout serves owned tensors and their tape handles.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell<P> {
    pub dims: CellDims,
    pub z: Gate<P>,
    pub r: Gate<P>,
    pub h: Gate<P>,
    pub norm_z: Norm<P>,
    pub norm_r: Norm<P>,
    pub norm_h: Norm<P>,
}

pub type CellParams<T> = Cell<Tensor<T>>;

const GATE_FIELDS: [&str; 9] = ["w_s", "w_x", "w_o", "u_s", "u_h", "u_o", "v_s", "v_v", "v_o"];

impl<P> Gate<P> {
    fn slots(&self) -> [&P; 9] {
        [
            &self.w_s, &self.w_x, &self.w_o, &self.u_s, &self.u_h, &self.u_o, &self.v_s, &self.v_v, &self.v_o,
        ]
    }

    fn slots_mut(&mut self) -> [&mut P; 9] {
        [
            &mut self.w_s,
            &mut self.w_x,
            &mut self.w_o,
            &mut self.u_s,
            &mut self.u_h,
            &mut self.u_o,
            &mut self.v_s,
            &mut self.v_v,
            &mut self.v_o,
        ]
    }

    fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> Gate<Q> {
        Gate {
            w_s: f(&self.w_s),
            w_x: f(&self.w_x),
            w_o: f(&self.w_o),
            u_s: f(&self.u_s),
            u_h: f(&self.u_h),
            u_o: f(&self.u_o),
            v_s: f(&self.v_s),
            v_v: f(&self.v_v),
            v_o: f(&self.v_o),
        }
    }
}

impl<P> Cell<P> {
    pub fn map<Q>(&self, mut f: impl FnMut(&P) -> Q) -> Cell<Q> {
        let mut norm = |n: &Norm<P>| Norm {
            gain: f(&n.gain),
            bias: f(&n.bias),
        };
        let (norm_z, norm_r, norm_h) = (norm(&self.norm_z), norm(&self.norm_r), norm(&self.norm_h));
        Cell {
            dims: self.dims,
            z: self.z.map(&mut f),
            r: self.r.map(&mut f),
            h: self.h.map(&mut f),
            norm_z,
            norm_r,
            norm_h,
        }
    }

    /// All slots in canonical order (gates z, r, h, then the three norms).
    pub fn slots(&self) -> Vec<&P> {
        let mut out: Vec<&P> = Vec::with_capacity(33);
        for g in [&self.z, &self.r, &self.h] {
            out.extend(g.slots());
        }
        for n in [&self.norm_z, &self.norm_r, &self.norm_h] {
            out.push(&n.gain);
            out.push(&n.bias);
        }
        out
    }

    pub fn slots_mut(&mut self) -> Vec<&mut P> {
        let mut out: Vec<&mut P> = Vec::with_capacity(33);
        for g in [&mut self.z, &mut self.r, &mut self.h] {
            out.extend(g.slots_mut());
        }
        for n in [&mut self.norm_z, &mut self.norm_r, &mut self.norm_h] {
            out.push(&mut n.gain);
            out.push(&mut n.bias);
        }
        out
    }

    /// Slot names matching [`Cell::slots`], e.g. `z.w_s` or `norm_h.gain`.
    pub fn slot_names() -> Vec<String> {
        let mut out = Vec::with_capacity(33);
        for g in ["z", "r", "h"] {
            out.extend(GATE_FIELDS.iter().map(|f| format!("{g}.{f}")));
        }
        for g in ["z", "r", "h"] {
            out.push(format!("norm_{g}.gain"));
            out.push(format!("norm_{g}.bias"));
        }
        out
    }

    fn gates(&self) -> [(&Gate<P>, &Norm<P>); 3] {
        [(&self.z, &self.norm_z), (&self.r, &self.norm_r), (&self.h, &self.norm_h)]
    }
}

/// Expected shape of every slot, in canonical order.
pub fn slot_shapes(dims: &CellDims) -> Vec<[usize; 2]> {
    let CellDims { n_x, n_h, n_f, n_s, n_v } = *dims;
    let gate = [
        [n_f, n_s],
        [n_f, n_x],
        [n_h, n_f],
        [n_f, n_s],
        [n_f, n_h],
        [n_h, n_f],
        [n_f, n_s],
        [n_f, n_v],
        [n_h, n_f],
    ];
    let mut out = Vec::with_capacity(33);
    for _ in 0..3 {
        out.extend(gate);
    }
    for _ in 0..6 {
        out.push([n_h, 0]);
    }
    out
}

fn glorot<T: Real>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<T> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| T::of(rng.gen_range(-limit..=limit))).collect();
    Tensor::matrix(rows, cols, data).expect("shape matches data")
}

/// Glorot-uniform weights, unit layer-norm gains and zero biases.
pub fn init_params<T: Real>(dims: CellDims, seed: u64) -> Result<CellParams<T>> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = slot_shapes(&dims);
    let mut tensors = shapes.iter().enumerate().map(|(i, &[r, c])| {
        if c > 0 {
            glorot(&mut rng, r, c)
        } else if (i - 27) % 2 == 1 {
            // norm block: gain, bias, gain, bias, ...
            Tensor::zeros(&[r])
        } else {
            Tensor::filled(&[r], T::one())
        }
    });
    let mut next = || tensors.next().expect("33 slots");
    let mut gate = || Gate {
        w_s: next(),
        w_x: next(),
        w_o: next(),
        u_s: next(),
        u_h: next(),
        u_o: next(),
        v_s: next(),
        v_v: next(),
        v_o: next(),
    };
    let (z, r, h) = (gate(), gate(), gate());
    let mut norm = || Norm {
        gain: next(),
        bias: next(),
    };
    let (norm_z, norm_r, norm_h) = (norm(), norm(), norm());
    Ok(Cell {
        dims,
        z,
        r,
        h,
        norm_z,
        norm_r,
        norm_h,
    })
}

impl<T: Real> CellParams<T> {
    /// Checks every slot against the shape implied by `dims`.
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        for ((t, [r, c]), name) in self
            .slots()
            .into_iter()
            .zip(slot_shapes(&self.dims))
            .zip(Self::slot_names())
        {
            let want: Vec<usize> = if c == 0 { vec![r] } else { vec![r, c] };
            if t.shape() != want.as_slice() {
                return Err(Error::Config(format!(
                    "cell slot {name} has shape {:?}, expected {want:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.slots().iter().map(|t| t.len()).sum()
    }

    /// Records every slot as a tape leaf.
    pub fn bind(&self, tape: &mut GradTape<T>) -> Cell<Var> {
        self.map(|t| tape.leaf(t.clone()))
    }
}

/// Weights of a plain GRU: `W·` is `n_h × n_x`, `U·` is `n_h × n_h`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams<P> {
    pub w_z: P,
    pub u_z: P,
    pub w_r: P,
    pub u_r: P,
    pub w: P,
    pub u: P,
}

impl<T: Real> GruParams<Tensor<T>> {
    pub fn init(n_x: usize, n_h: usize, seed: u64) -> Result<Self> {
        if n_x == 0 || n_h == 0 {
            return Err(Error::Config("GRU dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(GruParams {
            w_z: glorot(&mut rng, n_h, n_x),
            u_z: glorot(&mut rng, n_h, n_h),
            w_r: glorot(&mut rng, n_h, n_x),
            u_r: glorot(&mut rng, n_h, n_h),
            w: glorot(&mut rng, n_h, n_x),
            u: glorot(&mut rng, n_h, n_h),
        })
    }

    pub fn bind(&self, tape: &mut GradTape<T>) -> GruParams<Var> {
        GruParams {
            w_z: tape.leaf(self.w_z.clone()),
            u_z: tape.leaf(self.u_z.clone()),
            w_r: tape.leaf(self.w_r.clone()),
            u_r: tape.leaf(self.u_r.clone()),
            w: tape.leaf(self.w.clone()),
            u: tape.leaf(self.u.clone()),
        }
    }
}

/// Keep probabilities for each input stream of a cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeepRates {
    pub x: f64,
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

impl KeepRates {
    pub const NONE: KeepRates = KeepRates::uniform(1.0);

    pub const fn uniform(p: f64) -> Self {
        KeepRates { x: p, h: p, s: p, v: p }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("x", self.x), ("h", self.h), ("s", self.s), ("v", self.v)] {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Config(format!("keep rate for stream {name} must be in (0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

impl Default for KeepRates {
    fn default() -> Self {
        KeepRates {
            x: 0.8,
            h: 0.5,
            s: 0.8,
            v: 0.8,
        }
    }
}

/// Masks of one gate, one per input stream.
#[derive(Clone, Debug, PartialEq)]
pub struct GateMasks<P> {
    pub x: P,
    pub h: P,
    pub s: P,
    pub v: P,
}

/// Time-invariant dropout masks for one layer and one sequence. Entries are
/// either 0 or `1/keep` (inverted dropout).
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMasks<P> {
    pub keep: KeepRates,
    pub z: GateMasks<P>,
    pub r: GateMasks<P>,
    pub h: GateMasks<P>,
}

impl<P> DropoutMasks<P> {
    pub fn gates(&self) -> [&GateMasks<P>; 3] {
        [&self.z, &self.r, &self.h]
    }

    pub fn map<Q>(&self, mut f: impl FnMut(&P) -> Q) -> DropoutMasks<Q> {
        let mut g = |m: &GateMasks<P>| GateMasks {
            x: f(&m.x),
            h: f(&m.h),
            s: f(&m.s),
            v: f(&m.v),
        };
        DropoutMasks {
            keep: self.keep,
            z: g(&self.z),
            r: g(&self.r),
            h: g(&self.h),
        }
    }
}

fn bernoulli_mask<T: Real>(rng: &mut impl Rng, n: usize, keep: f64) -> Tensor<T> {
    let scale = T::of(1.0 / keep);
    let data = (0..n)
        .map(|_| if keep >= 1.0 || rng.gen_bool(keep) { scale } else { T::zero() })
        .collect();
    Tensor::vector(data).expect("positive length")
}

/// Samples one set of masks for a whole sequence.
pub fn sample_masks<T: Real>(keep: KeepRates, dims: &CellDims, rng: &mut impl Rng) -> Result<DropoutMasks<Tensor<T>>> {
    keep.validate()?;
    dims.validate()?;
    let mut gate = || GateMasks {
        x: bernoulli_mask(rng, dims.n_x, keep.x),
        h: bernoulli_mask(rng, dims.n_h, keep.h),
        s: bernoulli_mask(rng, dims.n_s, keep.s),
        v: bernoulli_mask(rng, dims.n_v, keep.v),
    };
    let (z, r, h) = (gate(), gate(), gate());
    Ok(DropoutMasks { keep, z, r, h })
}

/// All-ones masks (dropout disabled).
pub fn unit_masks<T: Real>(dims: &CellDims) -> DropoutMasks<Tensor<T>> {
    let ones = |n| Tensor::filled(&[n], T::one());
    let gate = || GateMasks {
        x: ones(dims.n_x),
        h: ones(dims.n_h),
        s: ones(dims.n_s),
        v: ones(dims.n_v),
    };
    DropoutMasks {
        keep: KeepRates::NONE,
        z: gate(),
        r: gate(),
        h: gate(),
    }
}

impl<T: Real> DropoutMasks<Tensor<T>> {
    pub fn bind(&self, tape: &mut GradTape<T>) -> DropoutMasks<Var> {
        self.map(|t| tape.leaf(t.clone()))
    }

    /// Flattened entries in gate order (z, r, h) and stream order (x, h, s, v).
    pub fn flatten(&self) -> Vec<T> {
        self.gates()
            .iter()
            .flat_map(|g| [&g.x, &g.h, &g.s, &g.v])
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }
}

/// Gate pre-activation normalization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Normalization {
    Layer { eps: f64 },
    /// Identity, used to switch layer normalization off.
    Identity,
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization::Layer { eps: LN_EPS }
    }
}

/// Per-sequence quantities that do not depend on the time step: the
/// semantic factors `Ψ·1 (s ⊙ m_s)` and the visual contribution
/// `V·3 v̂·` of every gate.
#[derive(Clone, Debug)]
pub struct SequenceContext {
    w_s: [Var; 3],
    u_s: [Var; 3],
    v_hat: [Var; 3],
    v_out: [Option<Var>; 3],
}

impl SequenceContext {
    pub fn v_hat(&self) -> [Var; 3] {
        self.v_hat
    }
}

/// Taped intermediates of one step.
#[derive(Clone, Debug)]
pub struct StepVars {
    pub z: Var,
    pub r: Var,
    pub h_tilde: Var,
    pub h: Var,
    pub x_hat: [Var; 3],
    pub h_hat: [Var; 3],
    /// Mask handles this step multiplied with, if any.
    pub masks: Option<DropoutMasks<Var>>,
}

fn masked(tape: &mut GradTape<impl Real>, x: Var, m: Option<Var>) -> Result<Var> {
    match m {
        Some(m) => tape.mul(x, m),
        None => Ok(x),
    }
}

/// Computes the step-invariant part of a semantic cell for one sequence.
/// `use_visual = false` drops the visual stream from the gate sums.
pub fn prepare_sequence<T: Real>(
    tape: &mut GradTape<T>,
    cell: &Cell<Var>,
    s: Var,
    v: Var,
    masks: Option<&DropoutMasks<Var>>,
    use_visual: bool,
) -> Result<SequenceContext> {
    let mut w_s = [s; 3];
    let mut u_s = [s; 3];
    let mut v_hat = [s; 3];
    let mut v_out = [None; 3];
    for (k, (gate, _)) in cell.gates().into_iter().enumerate() {
        let gm = masks.map(|m| m.gates()[k]);
        let s_m = masked(tape, s, gm.map(|m| m.s))?;
        w_s[k] = tape.matvec(gate.w_s, s_m)?;
        u_s[k] = tape.matvec(gate.u_s, s_m)?;
        let v_m = masked(tape, v, gm.map(|m| m.v))?;
        let vs = tape.matvec(gate.v_s, s_m)?;
        let vv = tape.matvec(gate.v_v, v_m)?;
        v_hat[k] = tape.mul(vs, vv)?;
        if use_visual {
            v_out[k] = Some(tape.matvec(gate.v_o, v_hat[k])?);
        }
    }
    Ok(SequenceContext { w_s, u_s, v_hat, v_out })
}

/// One step of the semantic GRU, optionally with variational masks and
/// normalization of the three gate pre-activations.
pub fn semantic_step<T: Real>(
    tape: &mut GradTape<T>,
    cell: &Cell<Var>,
    ctx: &SequenceContext,
    x: Var,
    h_prev: Var,
    masks: Option<&DropoutMasks<Var>>,
    norm: Normalization,
) -> Result<StepVars> {
    let mut x_hat = [x; 3];
    let mut h_hat = [x; 3];
    let mut pre = [x; 3];
    let mut recurrent = [x; 3];
    for (k, (gate, _)) in cell.gates().into_iter().enumerate() {
        let gm = masks.map(|m| m.gates()[k]);
        let x_m = masked(tape, x, gm.map(|m| m.x))?;
        let h_m = masked(tape, h_prev, gm.map(|m| m.h))?;
        let wx = tape.matvec(gate.w_x, x_m)?;
        x_hat[k] = tape.mul(ctx.w_s[k], wx)?;
        let uh = tape.matvec(gate.u_h, h_m)?;
        h_hat[k] = tape.mul(ctx.u_s[k], uh)?;
        pre[k] = tape.matvec(gate.w_o, x_hat[k])?;
        recurrent[k] = tape.matvec(gate.u_o, h_hat[k])?;
    }

    let finish = |tape: &mut GradTape<T>, k: usize, sum: Var| -> Result<Var> {
        let sum = match ctx.v_out[k] {
            Some(vo) => tape.add(sum, vo)?,
            None => sum,
        };
        match norm {
            Normalization::Layer { eps } => {
                let n = cell.gates()[k].1;
                tape.layer_norm(sum, n.gain, n.bias, T::of(eps))
            }
            Normalization::Identity => Ok(sum),
        }
    };

    let a_z = tape.add(pre[0], recurrent[0])?;
    let a_z = finish(tape, 0, a_z)?;
    let z = tape.sigmoid(a_z);
    let a_r = tape.add(pre[1], recurrent[1])?;
    let a_r = finish(tape, 1, a_r)?;
    let r = tape.sigmoid(a_r);
    let gated = tape.mul(r, recurrent[2])?;
    let a_h = tape.add(pre[2], gated)?;
    let a_h = finish(tape, 2, a_h)?;
    let h_tilde = tape.tanh(a_h);
    let h = interpolate(tape, z, h_prev, h_tilde)?;
    Ok(StepVars {
        z,
        r,
        h_tilde,
        h,
        x_hat,
        h_hat,
        masks: masks.cloned(),
    })
}

/// `(1 - z) ⊙ h_prev + z ⊙ h_tilde`, evaluated as `h_prev + z ⊙ (h_tilde - h_prev)`.
fn interpolate<T: Real>(tape: &mut GradTape<T>, z: Var, h_prev: Var, h_tilde: Var) -> Result<Var> {
    let diff = tape.sub(h_tilde, h_prev)?;
    let step = tape.mul(z, diff)?;
    tape.add(h_prev, step)
}

/// One step of the plain GRU, candidate computed as `tanh(W x + r ⊙ (U h))`.
pub fn gru_step_taped<T: Real>(tape: &mut GradTape<T>, p: &GruParams<Var>, x: Var, h_prev: Var) -> Result<StepVars> {
    let wz = tape.matvec(p.w_z, x)?;
    let uz = tape.matvec(p.u_z, h_prev)?;
    let az = tape.add(wz, uz)?;
    let z = tape.sigmoid(az);
    let wr = tape.matvec(p.w_r, x)?;
    let ur = tape.matvec(p.u_r, h_prev)?;
    let ar = tape.add(wr, ur)?;
    let r = tape.sigmoid(ar);
    let wx = tape.matvec(p.w, x)?;
    let uh = tape.matvec(p.u, h_prev)?;
    let gated = tape.mul(r, uh)?;
    let ah = tape.add(wx, gated)?;
    let h_tilde = tape.tanh(ah);
    let h = interpolate(tape, z, h_prev, h_tilde)?;
    Ok(StepVars {
        z,
        r,
        h_tilde,
        h,
        x_hat: [x; 3],
        h_hat: [h_prev; 3],
        masks: None,
    })
}

/// Values of one step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepTrace<T> {
    pub z: Tensor<T>,
    pub r: Tensor<T>,
    pub h_tilde: Tensor<T>,
    pub h: Tensor<T>,
    /// Semantic cells only: `x̂`, `ĥ`, `v̂` per gate (z, r, h).
    pub x_hat: Vec<Tensor<T>>,
    pub h_hat: Vec<Tensor<T>>,
    pub v_hat: Vec<Tensor<T>>,
    /// Tape nodes of the masks applied at this step, in mask order.
    pub mask_nodes: Vec<usize>,
    /// Values of the masks applied at this step.
    pub masks: Option<DropoutMasks<Tensor<T>>>,
}

fn read_trace<T: Real>(tape: &GradTape<T>, s: &StepVars, ctx: Option<&SequenceContext>, semantic: bool) -> StepTrace<T> {
    let val = |v: Var| tape.value(v).clone();
    let (x_hat, h_hat, v_hat) = if semantic {
        (
            s.x_hat.iter().map(|&v| val(v)).collect(),
            s.h_hat.iter().map(|&v| val(v)).collect(),
            ctx.map(|c| c.v_hat.iter().map(|&v| val(v)).collect()).unwrap_or_default(),
        )
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    let mask_nodes = s
        .masks
        .as_ref()
        .map(|m| m.gates().iter().flat_map(|g| [g.x, g.h, g.s, g.v]).map(Var::index).collect())
        .unwrap_or_default();
    StepTrace {
        z: val(s.z),
        r: val(s.r),
        h_tilde: val(s.h_tilde),
        h: val(s.h),
        x_hat,
        h_hat,
        v_hat,
        mask_nodes,
        masks: s.masks.as_ref().map(|m| m.map(|&v| val(v))),
    }
}

fn check_len<T: Real>(what: &'static str, t: &Tensor<T>, n: usize) -> Result<()> {
    if t.rank() != 1 || t.len() != n {
        return Err(Error::dim(what, t.shape(), &[n]));
    }
    Ok(())
}

fn check_inputs<T: Real>(dims: &CellDims, x: &Tensor<T>, h: &Tensor<T>, s: &Tensor<T>, v: &Tensor<T>) -> Result<()> {
    check_len("cell input x", x, dims.n_x)?;
    check_len("cell input h", h, dims.n_h)?;
    check_len("cell input s", s, dims.n_s)?;
    check_len("cell input v", v, dims.n_v)
}

/// Plain GRU step on tensors.
pub fn gru_step<T: Real>(x: &Tensor<T>, h_prev: &Tensor<T>, params: &GruParams<Tensor<T>>) -> Result<StepTrace<T>> {
    let (n_h, n_x) = (params.w_z.rows(), params.w_z.cols());
    check_len("gru input x", x, n_x)?;
    check_len("gru input h", h_prev, n_h)?;
    let mut tape = GradTape::new();
    let p = params.bind(&mut tape);
    let xv = tape.leaf(x.clone());
    let hv = tape.leaf(h_prev.clone());
    let s = gru_step_taped(&mut tape, &p, xv, hv)?;
    Ok(read_trace(&tape, &s, None, false))
}

/// Semantic GRU step on tensors (no masks, no normalization).
pub fn semantic_gru_step<T: Real>(
    x: &Tensor<T>,
    h_prev: &Tensor<T>,
    s: &Tensor<T>,
    v: &Tensor<T>,
    params: &CellParams<T>,
) -> Result<StepTrace<T>> {
    check_inputs(&params.dims, x, h_prev, s, v)?;
    let mut tape = GradTape::new();
    let cell = params.bind(&mut tape);
    let (xv, hv, sv, vv) = (
        tape.leaf(x.clone()),
        tape.leaf(h_prev.clone()),
        tape.leaf(s.clone()),
        tape.leaf(v.clone()),
    );
    let ctx = prepare_sequence(&mut tape, &cell, sv, vv, None, true)?;
    let step = semantic_step(&mut tape, &cell, &ctx, xv, hv, None, Normalization::Identity)?;
    Ok(read_trace(&tape, &step, Some(&ctx), true))
}

/// Variational, normalized semantic GRU step on tensors.
pub fn vns_gru_step<T: Real>(
    x: &Tensor<T>,
    h_prev: &Tensor<T>,
    s: &Tensor<T>,
    v: &Tensor<T>,
    params: &CellParams<T>,
    masks: &DropoutMasks<Tensor<T>>,
    norm: Normalization,
) -> Result<StepTrace<T>> {
    check_inputs(&params.dims, x, h_prev, s, v)?;
    let mut tape = GradTape::new();
    let cell = params.bind(&mut tape);
    let mv = masks.bind(&mut tape);
    let (xv, hv, sv, vv) = (
        tape.leaf(x.clone()),
        tape.leaf(h_prev.clone()),
        tape.leaf(s.clone()),
        tape.leaf(v.clone()),
    );
    let ctx = prepare_sequence(&mut tape, &cell, sv, vv, Some(&mv), true)?;
    let step = semantic_step(&mut tape, &cell, &ctx, xv, hv, Some(&mv), norm)?;
    Ok(read_trace(&tape, &step, Some(&ctx), true))
}

/// Two stacked variational normalized layers on one tape.
pub struct Stack<'a> {
    pub layer1: &'a Cell<Var>,
    pub layer2: &'a Cell<Var>,
    pub masks1: Option<&'a DropoutMasks<Var>>,
    pub masks2: Option<&'a DropoutMasks<Var>>,
    pub norm: Normalization,
    pub visual_to_all_layers: bool,
}

/// Running state of a [`Stack`] over one sequence.
#[derive(Clone, Debug)]
pub struct StackState {
    ctx1: SequenceContext,
    ctx2: SequenceContext,
    pub h1: Var,
    pub h2: Var,
}

impl Stack<'_> {
    pub fn check(&self) -> Result<()> {
        let (d1, d2) = (self.layer1.dims, self.layer2.dims);
        if d2.n_x != d1.n_h || d2.n_s != d1.n_s || d2.n_v != d1.n_v {
            return Err(Error::Config(format!(
                "layer 2 must consume layer 1 hidden states and share s/v sizes: {d1:?} then {d2:?}"
            )));
        }
        Ok(())
    }

    /// Starts a sequence with zero hidden states.
    pub fn start<T: Real>(&self, tape: &mut GradTape<T>, s: Var, v: Var) -> Result<StackState> {
        self.check()?;
        let ctx1 = prepare_sequence(tape, self.layer1, s, v, self.masks1, true)?;
        let ctx2 = prepare_sequence(tape, self.layer2, s, v, self.masks2, self.visual_to_all_layers)?;
        let h1 = tape.leaf(Tensor::zeros(&[self.layer1.dims.n_h]));
        let h2 = tape.leaf(Tensor::zeros(&[self.layer2.dims.n_h]));
        Ok(StackState { ctx1, ctx2, h1, h2 })
    }

    pub fn step<T: Real>(&self, tape: &mut GradTape<T>, state: &StackState, x: Var) -> Result<(StackState, [StepVars; 2])> {
        let s1 = semantic_step(tape, self.layer1, &state.ctx1, x, state.h1, self.masks1, self.norm)?;
        let s2 = semantic_step(tape, self.layer2, &state.ctx2, s1.h, state.h2, self.masks2, self.norm)?;
        let next = StackState {
            ctx1: state.ctx1.clone(),
            ctx2: state.ctx2.clone(),
            h1: s1.h,
            h2: s2.h,
        };
        Ok((next, [s1, s2]))
    }
}

/// Per-step traces of both layers.
pub type StackTrace<T> = Vec<[StepTrace<T>; 2]>;

/// Runs the two-layer stack over `x_seq` from zero hidden states and returns
/// the layer-2 hidden sequence.
#[allow(clippy::too_many_arguments)]
pub fn stacked_forward<T: Real>(
    x_seq: &[Tensor<T>],
    s: &Tensor<T>,
    v: &Tensor<T>,
    layer1: &CellParams<T>,
    layer2: &CellParams<T>,
    masks1: &DropoutMasks<Tensor<T>>,
    masks2: &DropoutMasks<Tensor<T>>,
    norm: Normalization,
) -> Result<Vec<Tensor<T>>> {
    let trace = stacked_forward_traced(x_seq, s, v, layer1, layer2, masks1, masks2, norm)?;
    Ok(trace.into_iter().map(|[_, l2]| l2.h).collect())
}

/// [`stacked_forward`] returning the full per-step traces.
#[allow(clippy::too_many_arguments)]
pub fn stacked_forward_traced<T: Real>(
    x_seq: &[Tensor<T>],
    s: &Tensor<T>,
    v: &Tensor<T>,
    layer1: &CellParams<T>,
    layer2: &CellParams<T>,
    masks1: &DropoutMasks<Tensor<T>>,
    masks2: &DropoutMasks<Tensor<T>>,
    norm: Normalization,
) -> Result<StackTrace<T>> {
    let mut tape = GradTape::new();
    let l1 = layer1.bind(&mut tape);
    let l2 = layer2.bind(&mut tape);
    let m1 = masks1.bind(&mut tape);
    let m2 = masks2.bind(&mut tape);
    let stack = Stack {
        layer1: &l1,
        layer2: &l2,
        masks1: Some(&m1),
        masks2: Some(&m2),
        norm,
        visual_to_all_layers: true,
    };
    stack.check()?;
    check_len("stack input s", s, layer1.dims.n_s)?;
    check_len("stack input v", v, layer1.dims.n_v)?;
    let sv = tape.leaf(s.clone());
    let vv = tape.leaf(v.clone());
    let mut state = stack.start(&mut tape, sv, vv)?;
    let mut out = Vec::with_capacity(x_seq.len());
    for x in x_seq {
        check_len("stack input x", x, layer1.dims.n_x)?;
        let xv = tape.leaf(x.clone());
        let (next, [s1, s2]) = stack.step(&mut tape, &state, xv)?;
        out.push([
            read_trace(&tape, &s1, Some(&state.ctx1), true),
            read_trace(&tape, &s2, Some(&state.ctx2), true),
        ]);
        state = next;
    }
    Ok(out)
}
