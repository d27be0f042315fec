//! LSTM and dense layers, and the BiLSTM classifier built from them.
//!
//! Batched sequences are stored time-major: a batch of `n` sequences of `d`
//! steps with `f` features is a `[d*n x f]` matrix whose rows `t*n .. (t+1)*n`
//! hold step `t` of every sequence. Slicing one step is then a contiguous row
//! range, and the input projection of a whole sequence is one matmul.
//!
//! Classifier pipeline: BiLSTM(h1) -> BiLSTM(h2) -> last-step features ->
//! dense(u, tanh) -> dense(2). With [`HeadKind::VariationalFlipout`] the two
//! dense layers are mean-field Gaussian layers from [`crate::variational`];
//! the LSTMs are always deterministic.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{Tape, Var};
use crate::rng::Stream;
use crate::tensor::Tensor;
use crate::variational::{self, VariationalDenseVars};

/// Input channels per pair-matrix cell.
pub const CHANNELS: usize = 3;
/// Output classes (negative / somatic).
pub const NUM_CLASSES: usize = 2;

/// LSTM weights with gate blocks ordered (input, forget, cell candidate, output).
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    /// `[in x 4h]`
    pub kernel: Tensor,
    /// `[h x 4h]`
    pub recurrent: Tensor,
    /// `[4h]`
    pub bias: Tensor,
}

impl LstmParams {
    pub fn hidden(&self) -> usize {
        self.recurrent.rows()
    }

    pub fn input(&self) -> usize {
        self.kernel.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hidden();
        let ok = self.kernel.rank() == 2
            && self.kernel.cols() == 4 * h
            && self.recurrent.shape() == [h, 4 * h]
            && self.bias.shape() == [4 * h];
        if ok {
            Ok(())
        } else {
            Err(Error::dim(format!(
                "inconsistent LSTM shapes: kernel {:?}, recurrent {:?}, bias {:?}",
                self.kernel.shape(),
                self.recurrent.shape(),
                self.bias.shape()
            )))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams {
    /// `[in x out]`
    pub weights: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadKind {
    #[serde(rename = "deterministic")]
    Deterministic,
    #[serde(rename = "variational-flipout")]
    VariationalFlipout,
}

impl HeadKind {
    pub fn is_variational(self) -> bool {
        self == HeadKind::VariationalFlipout
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadKind::Deterministic => "standard",
            HeadKind::VariationalFlipout => "bayes",
        })
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" | "deterministic" => Ok(HeadKind::Deterministic),
            "bayes" | "variational-flipout" => Ok(HeadKind::VariationalFlipout),
            other => Err(Error::Config {
                key: "head".into(),
                message: format!("unknown head kind `{other}` (expected standard or bayes)"),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Sequence length: pair-matrix depth.
    pub depth: usize,
    /// Loci per half of the pair matrix.
    pub width: usize,
    /// Features per step, `2 * width * CHANNELS`.
    pub features: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub dense_units: usize,
    pub head: HeadKind,
}

impl ModelSpec {
    pub fn new(
        depth: usize,
        width: usize,
        hidden1: usize,
        hidden2: usize,
        dense_units: usize,
        head: HeadKind,
    ) -> Result<Self> {
        let spec = Self {
            depth,
            width,
            features: 2 * width * CHANNELS,
            hidden1,
            hidden2,
            dense_units,
            head,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features != 2 * self.width * CHANNELS {
            return Err(Error::dim(format!(
                "features {} != 2 * width {} * {CHANNELS}",
                self.features, self.width
            )));
        }
        if self.depth == 0 || self.width == 0 {
            return Err(Error::domain("depth and width must be positive"));
        }
        if self.hidden1 == 0 || self.hidden2 == 0 || self.dense_units == 0 {
            return Err(Error::domain("hidden sizes and dense width must be positive"));
        }
        Ok(())
    }

    /// Name and shape of every trainable array, in initialization order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let lstm = |out: &mut Vec<(String, Vec<usize>)>, name: &str, input: usize, h: usize| {
            for dir in ["fwd", "bwd"] {
                out.push((format!("{name}.{dir}.kernel"), vec![input, 4 * h]));
                out.push((format!("{name}.{dir}.recurrent"), vec![h, 4 * h]));
                out.push((format!("{name}.{dir}.bias"), vec![4 * h]));
            }
        };
        lstm(&mut out, "lstm1", self.features, self.hidden1);
        lstm(&mut out, "lstm2", 2 * self.hidden1, self.hidden2);
        let dense = [
            ("dense1", 2 * self.hidden2, self.dense_units),
            ("dense2", self.dense_units, NUM_CLASSES),
        ];
        for (name, input, units) in dense {
            let parts = [("kernel", vec![input, units]), ("bias", vec![units])];
            for (part, shape) in parts {
                if self.head.is_variational() {
                    out.push((format!("{name}.{part}.mu"), shape.clone()));
                    out.push((format!("{name}.{part}.rho"), shape));
                } else {
                    out.push((format!("{name}.{part}"), shape));
                }
            }
        }
        out
    }
}

/// Named parameter arrays, iterated in name order.
pub type ParamSet = BTreeMap<String, Tensor>;

/// Upper bound on the chrono-init horizon, in rows.
pub const CHRONO_HORIZON: usize = 30;

/// `softplus^-1(0.05)`: initial posterior scale of every variational weight.
pub fn initial_rho() -> f64 {
    0.05f64.exp_m1().ln()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamSet,
}

/// How the variational head obtains its weights on a forward pass.
pub enum WeightMode<'a> {
    /// Posterior means (or the plain weights of a deterministic head).
    Mean,
    /// Flipout: one shared Gaussian draw, decorrelated per example by signs.
    Flipout(&'a mut Stream),
    /// One reparameterized draw shared by the whole batch.
    Shared(&'a mut Stream),
}

impl WeightMode<'_> {
    pub fn is_sampled(&self) -> bool {
        !matches!(self, WeightMode::Mean)
    }
}

/// Model parameters registered on a tape.
pub struct BoundModel {
    vars: BTreeMap<String, Var>,
}

impl BoundModel {
    /// Binds an explicit name-to-variable map, e.g. the parameters a
    /// gradient check registered itself.
    pub fn from_vars(vars: BTreeMap<String, Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::contract(format!("parameter `{name}` not bound")))
    }

    pub fn lstm(&self, prefix: &str) -> Result<LstmVars> {
        Ok(LstmVars {
            kernel: self.var(&format!("{prefix}.kernel"))?,
            recurrent: self.var(&format!("{prefix}.recurrent"))?,
            bias: self.var(&format!("{prefix}.bias"))?,
        })
    }

    pub fn dense(&self, prefix: &str) -> Result<(Var, Var)> {
        Ok((
            self.var(&format!("{prefix}.kernel"))?,
            self.var(&format!("{prefix}.bias"))?,
        ))
    }

    pub fn variational_dense(&self, prefix: &str) -> Result<VariationalDenseVars> {
        Ok(VariationalDenseVars {
            kernel_mu: self.var(&format!("{prefix}.kernel.mu"))?,
            kernel_rho: self.var(&format!("{prefix}.kernel.rho"))?,
            bias_mu: self.var(&format!("{prefix}.bias.mu"))?,
            bias_rho: self.var(&format!("{prefix}.bias.rho"))?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub kernel: Var,
    pub recurrent: Var,
    pub bias: Var,
}

impl LstmVars {
    pub fn bind(tape: &mut Tape, prefix: &str, p: &LstmParams) -> Result<Self> {
        p.validate()?;
        Ok(Self {
            kernel: tape.param(format!("{prefix}.kernel"), p.kernel.clone()),
            recurrent: tape.param(format!("{prefix}.recurrent"), p.recurrent.clone()),
            bias: tape.param(format!("{prefix}.bias"), p.bias.clone()),
        })
    }

    fn hidden(&self, tape: &Tape) -> usize {
        tape.value(self.recurrent).rows()
    }
}

/// Gate nonlinearities and state update from pre-activations `z = [n x 4h]`.
fn lstm_update(tape: &mut Tape, z: Var, c: Var, h: usize) -> Result<(Var, Var)> {
    let zi = tape.slice_cols(z, 0, h)?;
    let zf = tape.slice_cols(z, h, 2 * h)?;
    let zg = tape.slice_cols(z, 2 * h, 3 * h)?;
    let zo = tape.slice_cols(z, 3 * h, 4 * h)?;
    let i = tape.sigmoid(zi)?;
    let f = tape.sigmoid(zf)?;
    let g = tape.tanh(zg)?;
    let o = tape.sigmoid(zo)?;
    let fc = tape.multiply(f, c)?;
    let ig = tape.multiply(i, g)?;
    let c_next = tape.add(fc, ig)?;
    let tc = tape.tanh(c_next)?;
    let h_next = tape.multiply(o, tc)?;
    Ok((h_next, c_next))
}

/// One LSTM step for a batch: `x_t [n x in]`, `h, c [n x h]` -> `(h', c')`.
pub fn lstm_cell_step(
    tape: &mut Tape,
    x_t: Var,
    h: Var,
    c: Var,
    p: &LstmVars,
) -> Result<(Var, Var)> {
    let hidden = p.hidden(tape);
    let (n, hh) = tape.value(h).dims2()?;
    if hh != hidden || tape.value(c).dims2()? != (n, hidden) || tape.value(x_t).rows() != n {
        return Err(Error::dim(format!(
            "lstm step: x {:?}, h {:?}, c {:?} inconsistent with hidden size {hidden}",
            tape.value(x_t).shape(),
            tape.value(h).shape(),
            tape.value(c).shape()
        )));
    }
    let xk = tape.matmul(x_t, p.kernel)?;
    let hu = tape.matmul(h, p.recurrent)?;
    let z = tape.add(xk, hu)?;
    let z = tape.add(z, p.bias)?;
    lstm_update(tape, z, c, hidden)
}

fn batch_of(tape: &Tape, seq: Var, steps: usize) -> Result<usize> {
    if steps == 0 {
        return Err(Error::domain("sequence has no steps"));
    }
    let rows = tape.value(seq).rows();
    if rows == 0 || !rows.is_multiple_of(steps) {
        return Err(Error::dim(format!(
            "{rows} rows is not a whole number of {steps}-step sequences"
        )));
    }
    Ok(rows / steps)
}

/// Runs one direction over all steps given the precomputed input projection
/// `x·K + b` (`[d*n x 4h]`). Returns hidden states in step order `0..d`.
fn scan(
    tape: &mut Tape,
    proj: Var,
    n: usize,
    steps: usize,
    p: &LstmVars,
    reverse: bool,
) -> Result<Vec<Var>> {
    let hidden = p.hidden(tape);
    let mut h = tape.constant(Tensor::zeros(&[n, hidden]));
    let mut c = tape.constant(Tensor::zeros(&[n, hidden]));
    let mut out = vec![h; steps];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..steps).rev())
    } else {
        Box::new(0..steps)
    };
    for t in order {
        let zx = tape.slice_rows(proj, t * n, (t + 1) * n)?;
        let hu = tape.matmul(h, p.recurrent)?;
        let z = tape.add(zx, hu)?;
        let (h2, c2) = lstm_update(tape, z, c, hidden)?;
        h = h2;
        c = c2;
        out[t] = h;
    }
    Ok(out)
}

fn project(tape: &mut Tape, seq: Var, p: &LstmVars) -> Result<Var> {
    let xk = tape.matmul(seq, p.kernel)?;
    tape.add(xk, p.bias)
}

/// Bidirectional LSTM over a time-major batch `[d*n x f]`; returns
/// `[d*n x 2h]` with each row `[forward h_t ; backward h_t]`.
pub fn bilstm_forward(
    tape: &mut Tape,
    seq: Var,
    steps: usize,
    fwd: &LstmVars,
    bwd: &LstmVars,
) -> Result<Var> {
    let n = batch_of(tape, seq, steps)?;
    let pf = project(tape, seq, fwd)?;
    let pb = project(tape, seq, bwd)?;
    let hf = scan(tape, pf, n, steps, fwd, false)?;
    let hb = scan(tape, pb, n, steps, bwd, true)?;
    let f_all = tape.concat_rows(&hf)?;
    let b_all = tape.concat_rows(&hb)?;
    tape.concat_cols(&[f_all, b_all])
}

/// Final states of both directions, `[n x 2h]`: the forward state after
/// step `d` and the backward state after step 1, so each half has read the
/// whole sequence.
pub fn bilstm_last_step(
    tape: &mut Tape,
    seq: Var,
    steps: usize,
    fwd: &LstmVars,
    bwd: &LstmVars,
) -> Result<Var> {
    let n = batch_of(tape, seq, steps)?;
    let pf = project(tape, seq, fwd)?;
    let pb = project(tape, seq, bwd)?;
    let hf = scan(tape, pf, n, steps, fwd, false)?;
    let hb = scan(tape, pb, n, steps, bwd, true)?;
    tape.concat_cols(&[hf[steps - 1], hb[0]])
}

/// A time-major batch of encoded pair matrices with labels.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `[d*n x f]`
    pub x: Tensor,
    pub labels: Vec<u8>,
    pub steps: usize,
}

impl Batch {
    /// Interleaves `n` sequences of shape `[d x f]` into time-major layout.
    pub fn from_sequences(seqs: &[&Tensor], labels: &[u8]) -> Result<Self> {
        let first = seqs
            .first()
            .ok_or_else(|| Error::domain("batch has no examples"))?;
        if labels.len() != seqs.len() {
            return Err(Error::dim("labels and sequences differ in count"));
        }
        let (d, f) = first.dims2()?;
        let n = seqs.len();
        let mut data = vec![0.0; d * n * f];
        for (j, s) in seqs.iter().enumerate() {
            if s.dims2()? != (d, f) {
                return Err(Error::dim(format!(
                    "sequence {j} has shape {:?}, expected [{d}, {f}]",
                    s.shape()
                )));
            }
            for t in 0..d {
                let dst = (t * n + j) * f;
                data[dst..dst + f].copy_from_slice(s.row(t));
            }
        }
        Ok(Self {
            x: Tensor::matrix(d * n, f, data)?,
            labels: labels.to_vec(),
            steps: d,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Row-major one-hot label matrix `[n x 2]`.
    pub fn one_hot(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.len(), NUM_CLASSES]);
        for (i, &y) in self.labels.iter().enumerate() {
            t.data_mut()[i * NUM_CLASSES + y as usize] = 1.0;
        }
        t
    }
}

impl Model {
    /// Uniform(-s, s) kernels with `s = 1/sqrt(fan_in)`, variational
    /// `rho = softplus^-1(0.05)`, zero dense biases.
    ///
    /// LSTM biases use chrono initialization with horizon
    /// `T = clamp(depth, 3, CHRONO_HORIZON)`:
    /// `b_f = ln u`, `u ~ Uniform(1, T - 1)`, `b_i = -b_f`, others 0.
    pub fn init(spec: ModelSpec, rng: &mut Stream) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamSet::new();
        for (name, shape) in spec.param_shapes() {
            let mut t = Tensor::zeros(&shape);
            if name.ends_with(".kernel")
                || name.ends_with(".recurrent")
                || name.ends_with(".kernel.mu")
            {
                let s = 1.0 / (shape[0] as f64).sqrt();
                for x in t.data_mut() {
                    *x = -s + 2.0 * s * rng.random::<f64>();
                }
            } else if name.ends_with(".rho") {
                t = Tensor::filled(&shape, initial_rho());
            } else if name.starts_with("lstm") && name.ends_with(".bias") {
                let h = shape[0] / 4;
                let t_max = spec.depth.clamp(3, CHRONO_HORIZON) as f64;
                let b = t.data_mut();
                for j in 0..h {
                    let f = (1.0 + (t_max - 2.0) * rng.random::<f64>()).ln();
                    b[h + j] = f;
                    b[j] = -f;
                }
            }
            params.insert(name, t);
        }
        Ok(Self { spec, params })
    }

    /// Checks that `params` has exactly the arrays `spec` requires.
    pub fn from_parts(spec: ModelSpec, params: ParamSet) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.param_shapes();
        if shapes.len() != params.len() {
            return Err(Error::dim(format!(
                "model needs {} arrays, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for (name, shape) in &shapes {
            match params.get(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::dim(format!(
                        "array `{name}` has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                None => return Err(Error::dim(format!("missing array `{name}`"))),
            }
        }
        Ok(Self { spec, params })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn lstm_params(&self, prefix: &str) -> Option<LstmParams> {
        Some(LstmParams {
            kernel: self.params.get(&format!("{prefix}.kernel"))?.clone(),
            recurrent: self.params.get(&format!("{prefix}.recurrent"))?.clone(),
            bias: self.params.get(&format!("{prefix}.bias"))?.clone(),
        })
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        let vars = self
            .params
            .iter()
            .map(|(name, t)| (name.clone(), tape.param(name.clone(), t.clone())))
            .collect();
        BoundModel { vars }
    }

    /// Binds only the dense head, for re-running it on cached features.
    pub fn bind_head(&self, tape: &mut Tape) -> BoundModel {
        let vars = self
            .params
            .iter()
            .filter(|(name, _)| name.starts_with("dense"))
            .map(|(name, t)| (name.clone(), tape.param(name.clone(), t.clone())))
            .collect();
        BoundModel { vars }
    }

    /// Deterministic BiLSTM stack: `[d*n x f]` -> last-step features `[n x 2h2]`.
    pub fn features(&self, tape: &mut Tape, bound: &BoundModel, x: Var) -> Result<Var> {
        let cols = tape.value(x).cols();
        if cols != self.spec.features {
            return Err(Error::dim(format!(
                "input has {cols} features per step, model expects {}",
                self.spec.features
            )));
        }
        let d = self.spec.depth;
        let l1 = bilstm_forward(tape, x, d, &bound.lstm("lstm1.fwd")?, &bound.lstm("lstm1.bwd")?)?;
        bilstm_last_step(tape, l1, d, &bound.lstm("lstm2.fwd")?, &bound.lstm("lstm2.bwd")?)
    }

    /// Dense head on `[n x 2h2]` features -> logits `[n x 2]`.
    pub fn head(
        &self,
        tape: &mut Tape,
        bound: &BoundModel,
        features: Var,
        mode: &mut WeightMode<'_>,
    ) -> Result<Var> {
        match self.spec.head {
            HeadKind::Deterministic => {
                if mode.is_sampled() {
                    return Err(Error::contract(
                        "sampled weight mode requested on a deterministic head",
                    ));
                }
                let (k1, b1) = bound.dense("dense1")?;
                let (k2, b2) = bound.dense("dense2")?;
                let a = tape.matmul(features, k1)?;
                let a = tape.add(a, b1)?;
                let a = tape.tanh(a)?;
                let z = tape.matmul(a, k2)?;
                tape.add(z, b2)
            }
            HeadKind::VariationalFlipout => {
                let l1 = bound.variational_dense("dense1")?;
                let l2 = bound.variational_dense("dense2")?;
                let a = variational::dense_forward(tape, features, &l1, mode)?;
                let a = tape.tanh(a)?;
                variational::dense_forward(tape, a, &l2, mode)
            }
        }
    }

    /// Logits `[n x 2]` for a time-major batch `[d*n x f]`.
    pub fn forward_batch(
        &self,
        tape: &mut Tape,
        bound: &BoundModel,
        x: Var,
        mode: &mut WeightMode<'_>,
    ) -> Result<Var> {
        if mode.is_sampled() && !self.spec.head.is_variational() {
            return Err(Error::contract(
                "sampled weight mode requested on a deterministic head",
            ));
        }
        let feats = self.features(tape, bound, x)?;
        self.head(tape, bound, feats, mode)
    }

    /// Two-class logits for one encoded pair matrix `[d x f]`.
    pub fn forward(&self, x: &Tensor, mut mode: WeightMode<'_>) -> Result<Tensor> {
        let (d, _) = x.dims2()?;
        if d != self.spec.depth {
            return Err(Error::dim(format!(
                "input has {d} steps, model expects {}",
                self.spec.depth
            )));
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let logits = self.forward_batch(&mut tape, &bound, xv, &mut mode)?;
        tape.value(logits).reshape(&[NUM_CLASSES])
    }
}
