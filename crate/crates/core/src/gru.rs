//! GRU cell and sequence engine.
//!
//! The float path is the training reference:
//!
//! ```text
//! r  = σ(W_r x + U_r h + b_r)
//! z  = σ(W_z x + U_z h + b_z)
//! h̃  = tanh(W_h x + U_h (r ⊙ h) + b_h)
//! h' = (1 - z) ⊙ h̃ + z ⊙ h
//! ```
//!
//! The reset gate scales the previous state *before* the recurrent
//! candidate product. [`bptt`] differentiates exactly this recurrence.
//!
//! [`quantized_forward`] evaluates the same cell the way the accelerator's
//! four pipeline stages do: gate affines as in-order fixed-point MACs,
//! sigmoids from a table, the candidate as MACs plus a tanh table, and the
//! blend as two MACs into a wide accumulator.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actlut::{ActKind, ActTable};
use crate::fxp::{fx_mac, fx_mul, fx_sub, quantize, requantize, FxError, FxFormat, FxValue};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GruError {
    #[error("dimension mismatch: {what} has {found}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("empty input sequence")]
    EmptySequence,
    #[error("tape has {tape} steps but {grads} upstream gradients were given")]
    LengthMismatch { tape: usize, grads: usize },
    #[error("inconsistent quantization setup: {0}")]
    Quantization(String),
    #[error(transparent)]
    Fixed(#[from] FxError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

fn check_len(what: &'static str, v: &[f64], expected: usize) -> Result<(), GruError> {
    if v.len() != expected {
        return Err(GruError::Dimension {
            what,
            expected,
            found: v.len(),
        });
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, GruError> {
        check_len("matrix data", &data, rows * cols)?;
        Ok(Self { rows, cols, data })
    }

    pub fn uniform<R: Rng>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out += self · v`
    pub fn mul_vec_add(&self, v: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o += self.row(r).iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// `out += selfᵀ · v`
    pub fn mul_t_vec_add(&self, v: &[f64], out: &mut [f64]) {
        for (r, &vr) in v.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o += a * vr;
            }
        }
    }

    /// `self += a bᵀ`
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        for (r, &ar) in a.iter().enumerate() {
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (x, bc) in row.iter_mut().zip(b) {
                *x += ar * bc;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Weights and biases of one GRU layer.
///
/// `w_*` map the input (`hidden × input`), `u_*` the previous state
/// (`hidden × hidden`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub w_r: Matrix,
    pub w_z: Matrix,
    pub w_h: Matrix,
    pub u_r: Matrix,
    pub u_z: Matrix,
    pub u_h: Matrix,
    pub b_r: Vec<f64>,
    pub b_z: Vec<f64>,
    pub b_h: Vec<f64>,
}

impl GruParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let w = || Matrix::zeros(hidden_dim, input_dim);
        let u = || Matrix::zeros(hidden_dim, hidden_dim);
        Self {
            w_r: w(),
            w_z: w(),
            w_h: w(),
            u_r: u(),
            u_z: u(),
            u_h: u(),
            b_r: vec![0.0; hidden_dim],
            b_z: vec![0.0; hidden_dim],
            b_h: vec![0.0; hidden_dim],
        }
    }

    /// Matrices uniform in `±1/√hidden`, biases zero.
    pub fn init<R: Rng>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        let mut p = Self::zeros(input_dim, hidden_dim);
        for m in p.matrices_mut() {
            *m = Matrix::uniform(m.rows(), m.cols(), bound, rng);
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.w_r.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_r.rows()
    }

    fn matrices_mut(&mut self) -> [&mut Matrix; 6] {
        [
            &mut self.w_r,
            &mut self.w_z,
            &mut self.w_h,
            &mut self.u_r,
            &mut self.u_z,
            &mut self.u_h,
        ]
    }

    /// Every parameter block in a fixed order.
    pub fn blocks(&self) -> [&[f64]; 9] {
        [
            self.w_r.as_slice(),
            self.w_z.as_slice(),
            self.w_h.as_slice(),
            self.u_r.as_slice(),
            self.u_z.as_slice(),
            self.u_h.as_slice(),
            &self.b_r,
            &self.b_z,
            &self.b_h,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 9] {
        [
            self.w_r.as_mut_slice(),
            self.w_z.as_mut_slice(),
            self.w_h.as_mut_slice(),
            self.u_r.as_mut_slice(),
            self.u_z.as_mut_slice(),
            self.u_h.as_mut_slice(),
            &mut self.b_r,
            &mut self.b_z,
            &mut self.b_h,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// Checks shapes and finiteness.
    pub fn validate(&self) -> Result<(), GruError> {
        let (i, h) = (self.input_dim(), self.hidden_dim());
        for (what, m, cols) in [
            ("w_z", &self.w_z, i),
            ("w_h", &self.w_h, i),
            ("u_r", &self.u_r, h),
            ("u_z", &self.u_z, h),
            ("u_h", &self.u_h, h),
        ] {
            if m.rows() != h || m.cols() != cols {
                return Err(GruError::Dimension {
                    what,
                    expected: h * cols,
                    found: m.rows() * m.cols(),
                });
            }
        }
        check_len("b_r", &self.b_r, h)?;
        check_len("b_z", &self.b_z, h)?;
        check_len("b_h", &self.b_h, h)?;
        if self
            .blocks()
            .iter()
            .any(|b| b.iter().any(|x| !x.is_finite()))
        {
            return Err(GruError::NonFinite("parameters"));
        }
        Ok(())
    }

    pub fn add_scaled(&mut self, other: &GruParams, scale: f64) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|x| *x *= s);
        }
    }
}

/// Hidden state `h_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruState {
    pub h: Vec<f64>,
}

impl GruState {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self {
            h: vec![0.0; hidden_dim],
        }
    }
}

/// Values one step keeps for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub h_tilde: Vec<f64>,
    pub h: Vec<f64>,
}

/// Per-step caches of a forward sequence.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GruTape {
    pub steps: Vec<StepCache>,
}

impl GruTape {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

pub fn cell_forward(
    p: &GruParams,
    h_prev: &GruState,
    x: &[f64],
) -> Result<(GruState, StepCache), GruError> {
    let hd = p.hidden_dim();
    check_len("input", x, p.input_dim())?;
    check_len("hidden state", &h_prev.h, hd)?;
    if x.iter().chain(&h_prev.h).any(|v| !v.is_finite()) {
        return Err(GruError::NonFinite("cell input"));
    }
    let hp = &h_prev.h;

    let mut r = p.b_r.clone();
    p.w_r.mul_vec_add(x, &mut r);
    p.u_r.mul_vec_add(hp, &mut r);
    r.iter_mut().for_each(|v| *v = sigmoid(*v));

    let mut z = p.b_z.clone();
    p.w_z.mul_vec_add(x, &mut z);
    p.u_z.mul_vec_add(hp, &mut z);
    z.iter_mut().for_each(|v| *v = sigmoid(*v));

    let rh: Vec<f64> = r.iter().zip(hp).map(|(a, b)| a * b).collect();
    let mut h_tilde = p.b_h.clone();
    p.w_h.mul_vec_add(x, &mut h_tilde);
    p.u_h.mul_vec_add(&rh, &mut h_tilde);
    h_tilde.iter_mut().for_each(|v| *v = v.tanh());

    let h: Vec<f64> = (0..hd)
        .map(|i| (1.0 - z[i]) * h_tilde[i] + z[i] * hp[i])
        .collect();
    let cache = StepCache {
        x: x.to_vec(),
        h_prev: hp.clone(),
        r,
        z,
        h_tilde,
        h: h.clone(),
    };
    Ok((GruState { h }, cache))
}

/// Runs the cell over `xs`, returning `h_1..h_T` and the tape.
pub fn seq_forward(
    p: &GruParams,
    h0: &GruState,
    xs: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, GruTape), GruError> {
    if xs.is_empty() {
        return Err(GruError::EmptySequence);
    }
    let mut state = h0.clone();
    let mut hs = Vec::with_capacity(xs.len());
    let mut tape = GruTape {
        steps: Vec::with_capacity(xs.len()),
    };
    for x in xs {
        let (next, cache) = cell_forward(p, &state, x)?;
        hs.push(next.h.clone());
        tape.steps.push(cache);
        state = next;
    }
    Ok((hs, tape))
}

/// Gradients returned by [`bptt`].
#[derive(Debug, Clone, PartialEq)]
pub struct GruGrads {
    pub params: GruParams,
    pub h0: Vec<f64>,
    pub xs: Vec<Vec<f64>>,
}

/// Reverse-mode gradients of the recurrence.
///
/// `dl_dh[t]` is the loss gradient flowing directly into `h_{t+1}` (the
/// output of step `t`); gradients through later steps are added here.
pub fn bptt(p: &GruParams, tape: &GruTape, dl_dh: &[Vec<f64>]) -> Result<GruGrads, GruError> {
    if tape.len() != dl_dh.len() {
        return Err(GruError::LengthMismatch {
            tape: tape.len(),
            grads: dl_dh.len(),
        });
    }
    let hd = p.hidden_dim();
    let mut grads = GruParams::zeros(p.input_dim(), hd);
    let mut dxs = vec![vec![0.0; p.input_dim()]; tape.len()];
    let mut carry = vec![0.0; hd];

    for (t, step) in tape.steps.iter().enumerate().rev() {
        check_len("upstream gradient", &dl_dh[t], hd)?;
        let dh: Vec<f64> = carry.iter().zip(&dl_dh[t]).map(|(a, b)| a + b).collect();
        let StepCache {
            x,
            h_prev,
            r,
            z,
            h_tilde,
            ..
        } = step;

        let mut dh_prev: Vec<f64> = (0..hd).map(|i| dh[i] * z[i]).collect();
        let da_h: Vec<f64> = (0..hd)
            .map(|i| dh[i] * (1.0 - z[i]) * (1.0 - h_tilde[i] * h_tilde[i]))
            .collect();
        let da_z: Vec<f64> = (0..hd)
            .map(|i| dh[i] * (h_prev[i] - h_tilde[i]) * z[i] * (1.0 - z[i]))
            .collect();

        let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
        grads.w_h.add_outer(&da_h, x);
        grads.u_h.add_outer(&da_h, &rh);
        grads.b_h.iter_mut().zip(&da_h).for_each(|(g, d)| *g += d);
        let mut d_rh = vec![0.0; hd];
        p.u_h.mul_t_vec_add(&da_h, &mut d_rh);
        let da_r: Vec<f64> = (0..hd)
            .map(|i| d_rh[i] * h_prev[i] * r[i] * (1.0 - r[i]))
            .collect();
        for i in 0..hd {
            dh_prev[i] += d_rh[i] * r[i];
        }

        grads.w_z.add_outer(&da_z, x);
        grads.u_z.add_outer(&da_z, h_prev);
        grads.b_z.iter_mut().zip(&da_z).for_each(|(g, d)| *g += d);

        grads.w_r.add_outer(&da_r, x);
        grads.u_r.add_outer(&da_r, h_prev);
        grads.b_r.iter_mut().zip(&da_r).for_each(|(g, d)| *g += d);

        let dx = &mut dxs[t];
        p.w_h.mul_t_vec_add(&da_h, dx);
        p.w_z.mul_t_vec_add(&da_z, dx);
        p.w_r.mul_t_vec_add(&da_r, dx);
        p.u_z.mul_t_vec_add(&da_z, &mut dh_prev);
        p.u_r.mul_t_vec_add(&da_r, &mut dh_prev);

        carry = dh_prev;
    }
    Ok(GruGrads {
        params: grads,
        h0: carry,
        xs: dxs,
    })
}

/// Fixed-point formats used by the quantized datapath.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FormatConfig {
    /// Inputs, hidden state, gate outputs and table outputs.
    pub activation: FxFormat,
    pub weight: FxFormat,
    /// Holds `weight × activation` products at full precision.
    pub accumulator: FxFormat,
    /// Pre-activations are rounded into this format before table lookup.
    pub lut_input: FxFormat,
}

impl Default for FormatConfig {
    fn default() -> Self {
        let activation = FxFormat::activation_default();
        let weight = FxFormat::weight_default();
        Self {
            activation,
            weight,
            accumulator: FxFormat::accumulator_for(weight, activation),
            lut_input: FxFormat::new(16, 11).expect("valid"),
        }
    }
}

impl FormatConfig {
    /// Every datapath value in `fmt`, with a matching wide accumulator.
    pub fn uniform(fmt: FxFormat) -> Self {
        Self {
            activation: fmt,
            weight: fmt,
            accumulator: FxFormat::accumulator_for(fmt, fmt),
            lut_input: fmt,
        }
    }

    pub fn validate(&self) -> Result<(), GruError> {
        for (name, f) in [
            ("activation", self.activation),
            ("weight", self.weight),
            ("lut_input", self.lut_input),
        ] {
            if !f.is_datapath() {
                return Err(GruError::Quantization(format!(
                    "{name} format {f} is wider than 32 bits"
                )));
            }
        }
        if self.accumulator.frac_bits() != self.weight.frac_bits() + self.activation.frac_bits() {
            return Err(GruError::Quantization(format!(
                "accumulator {} must carry weight+activation fraction bits ({})",
                self.accumulator,
                self.weight.frac_bits() + self.activation.frac_bits()
            )));
        }
        if 2 * self.activation.frac_bits() >= 64 {
            return Err(GruError::Quantization(
                "activation too fine for the blend accumulator".into(),
            ));
        }
        Ok(())
    }

    /// Accumulator for the `activation × activation` blend in stage 4.
    fn blend_accumulator(&self) -> FxFormat {
        let frac = 2 * self.activation.frac_bits();
        let total = self.accumulator.total_bits().max(frac + 8).min(64);
        FxFormat::accumulator(total, frac).expect("validated")
    }
}

/// Sigmoid and tanh tables for the quantized cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTables {
    pub sigmoid: ActTable,
    pub tanh: ActTable,
}

impl ActivationTables {
    /// Default 1024-entry piecewise-linear tables emitting `out_fmt`.
    pub fn standard(out_fmt: FxFormat) -> Self {
        Self {
            sigmoid: ActTable::standard(ActKind::Sigmoid, out_fmt),
            tanh: ActTable::standard(ActKind::Tanh, out_fmt),
        }
    }
}

/// GRU parameters rounded to the weight format.
#[derive(Debug, Clone)]
pub struct QuantizedGru {
    fmts: FormatConfig,
    input_dim: usize,
    hidden_dim: usize,
    // Row-major, same layout as the float matrices.
    w: [Vec<FxValue>; 3],
    u: [Vec<FxValue>; 3],
    // Biases already aligned to the accumulator.
    b: [Vec<FxValue>; 3],
}

impl QuantizedGru {
    pub fn new(p: &GruParams, fmts: FormatConfig) -> Result<Self, GruError> {
        p.validate()?;
        fmts.validate()?;
        let qm = |m: &Matrix| -> Result<Vec<FxValue>, GruError> {
            m.as_slice()
                .iter()
                .map(|&v| quantize(v, fmts.weight).map_err(GruError::from))
                .collect()
        };
        let qb = |b: &[f64]| -> Result<Vec<FxValue>, GruError> {
            b.iter()
                .map(|&v| Ok(requantize(quantize(v, fmts.weight)?, fmts.accumulator)))
                .collect()
        };
        Ok(Self {
            fmts,
            input_dim: p.input_dim(),
            hidden_dim: p.hidden_dim(),
            w: [qm(&p.w_r)?, qm(&p.w_z)?, qm(&p.w_h)?],
            u: [qm(&p.u_r)?, qm(&p.u_z)?, qm(&p.u_h)?],
            b: [qb(&p.b_r)?, qb(&p.b_z)?, qb(&p.b_h)?],
        })
    }

    pub fn formats(&self) -> &FormatConfig {
        &self.fmts
    }

    /// Stage 1 / stage 3 affine: `b + W x + U v`, MACs in input-index order.
    fn affine(&self, gate: usize, x: &[FxValue], v: &[FxValue]) -> Result<Vec<FxValue>, GruError> {
        let (w, u) = (&self.w[gate], &self.u[gate]);
        (0..self.hidden_dim)
            .map(|i| {
                let mut acc = self.b[gate][i];
                for (j, &xj) in x.iter().enumerate() {
                    acc = fx_mac(acc, w[i * self.input_dim + j], xj)?;
                }
                for (j, &vj) in v.iter().enumerate() {
                    acc = fx_mac(acc, u[i * self.hidden_dim + j], vj)?;
                }
                Ok(acc)
            })
            .collect()
    }

    fn activate(&self, table: &ActTable, pre: &[FxValue]) -> Vec<FxValue> {
        pre.iter()
            .map(|&a| table.eval(requantize(a, self.fmts.lut_input)))
            .collect()
    }

    /// One quantized cell step.
    pub fn step(
        &self,
        h: &[FxValue],
        x: &[FxValue],
        tables: &ActivationTables,
    ) -> Result<Vec<FxValue>, GruError> {
        let act = self.fmts.activation;
        // Stage 1: gate affines.
        let pre_r = self.affine(0, x, h)?;
        let pre_z = self.affine(1, x, h)?;
        // Stage 2: sigmoids and reset modulation.
        let r = self.activate(&tables.sigmoid, &pre_r);
        let z = self.activate(&tables.sigmoid, &pre_z);
        let rh: Vec<FxValue> = r.iter().zip(h).map(|(&a, &b)| fx_mul(a, b, act)).collect();
        // Stage 3: candidate.
        let pre_h = self.affine(2, x, &rh)?;
        let h_tilde = self.activate(&tables.tanh, &pre_h);
        // Stage 4: interpolation.
        let one = quantize(1.0, act)?;
        let blend = self.fmts.blend_accumulator();
        (0..self.hidden_dim)
            .map(|i| {
                let keep = fx_sub(one, z[i])?;
                let acc = fx_mac(FxValue::zero(blend), keep, h_tilde[i])?;
                let acc = fx_mac(acc, z[i], h[i])?;
                Ok(requantize(acc, act))
            })
            .collect()
    }

    /// Runs the quantized cell over `xs`, returning `h_1..h_T`.
    pub fn forward(
        &self,
        h0: &[f64],
        xs: &[Vec<f64>],
        tables: &ActivationTables,
    ) -> Result<Vec<Vec<FxValue>>, GruError> {
        let act = self.fmts.activation;
        for (name, t) in [("sigmoid", &tables.sigmoid), ("tanh", &tables.tanh)] {
            if t.out_format() != act {
                return Err(GruError::Quantization(format!(
                    "{name} table emits {} but activations are {act}",
                    t.out_format()
                )));
            }
        }
        if tables.sigmoid.kind() != ActKind::Sigmoid || tables.tanh.kind() != ActKind::Tanh {
            return Err(GruError::Quantization("tables swapped".into()));
        }
        if xs.is_empty() {
            return Err(GruError::EmptySequence);
        }
        check_len("initial state", h0, self.hidden_dim)?;
        let mut h: Vec<FxValue> = h0
            .iter()
            .map(|&v| quantize(v, act))
            .collect::<Result<_, _>>()?;
        let mut out = Vec::with_capacity(xs.len());
        for x in xs {
            check_len("input", x, self.input_dim)?;
            let xq: Vec<FxValue> = x
                .iter()
                .map(|&v| quantize(v, act))
                .collect::<Result<_, _>>()?;
            h = self.step(&h, &xq, tables)?;
            out.push(h.clone());
        }
        Ok(out)
    }
}

/// Quantizes `p` and runs it over `xs`.
pub fn quantized_forward(
    p: &GruParams,
    h0: &GruState,
    xs: &[Vec<f64>],
    fmts: &FormatConfig,
    tables: &ActivationTables,
) -> Result<Vec<Vec<FxValue>>, GruError> {
    QuantizedGru::new(p, *fmts)?.forward(&h0.h, xs, tables)
}

/// Largest absolute difference between float and quantized hidden states.
pub fn max_deviation(float: &[Vec<f64>], quant: &[Vec<FxValue>]) -> f64 {
    float
        .iter()
        .flatten()
        .zip(quant.iter().flatten())
        .map(|(a, b)| (a - b.to_f64()).abs())
        .fold(0.0, f64::max)
}

pub const CHECKPOINT_FORMAT: &str = "merinda-gru/1";

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    input_dim: usize,
    hidden_dim: usize,
    #[serde(flatten)]
    params: GruParams,
}

impl GruParams {
    /// Versioned JSON checkpoint with row-major weight arrays.
    pub fn to_checkpoint_json(&self) -> String {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            input_dim: self.input_dim(),
            hidden_dim: self.hidden_dim(),
            params: self.clone(),
        };
        serde_json::to_string_pretty(&ck).expect("params serialize")
    }

    pub fn from_checkpoint_json(s: &str) -> Result<Self, GruError> {
        let ck: Checkpoint =
            serde_json::from_str(s).map_err(|e| GruError::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(GruError::Checkpoint(format!(
                "unsupported format tag {:?}",
                ck.format
            )));
        }
        let p = ck.params;
        if p.input_dim() != ck.input_dim || p.hidden_dim() != ck.hidden_dim {
            return Err(GruError::Checkpoint(
                "declared dims disagree with weights".into(),
            ));
        }
        for m in [&p.w_r, &p.w_z, &p.w_h, &p.u_r, &p.u_z, &p.u_h] {
            if m.data.len() != m.rows * m.cols {
                return Err(GruError::Checkpoint(
                    "matrix data length disagrees with its shape".into(),
                ));
            }
        }
        p.validate()?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_params(input: usize, hidden: usize, seed: u64) -> GruParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = GruParams::init(input, hidden, &mut rng);
        for b in [&mut p.b_r, &mut p.b_z, &mut p.b_h] {
            b.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        }
        p
    }

    fn random_seq(len: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    /// Scalar restatement of the cell, written without the matrix helpers.
    fn oracle_cell(p: &GruParams, h: &[f64], x: &[f64]) -> Vec<f64> {
        let v = p.hidden_dim();
        let mut out = vec![0.0; v];
        let mut r = vec![0.0; v];
        for i in 0..v {
            let mut a = p.b_r[i];
            for j in 0..x.len() {
                a += p.w_r.get(i, j) * x[j];
            }
            for j in 0..v {
                a += p.u_r.get(i, j) * h[j];
            }
            r[i] = 1.0 / (1.0 + f64::exp(-a));
        }
        for i in 0..v {
            let mut az = p.b_z[i];
            let mut ah = p.b_h[i];
            for j in 0..x.len() {
                az += p.w_z.get(i, j) * x[j];
                ah += p.w_h.get(i, j) * x[j];
            }
            for j in 0..v {
                az += p.u_z.get(i, j) * h[j];
                ah += p.u_h.get(i, j) * (r[j] * h[j]);
            }
            let z = 1.0 / (1.0 + f64::exp(-az));
            out[i] = (1.0 - z) * ah.tanh() + z * h[i];
        }
        out
    }

    #[test]
    fn update_gate_saturated_keeps_state() {
        let mut p = random_params(2, 3, 1);
        p.w_z = Matrix::zeros(3, 2);
        p.u_z = Matrix::zeros(3, 3);
        p.b_z = vec![1e3; 3];
        let h0 = GruState {
            h: vec![0.3, -0.7, 0.9],
        };
        let (h, _) = cell_forward(&p, &h0, &[0.4, -0.2]).unwrap();
        assert_eq!(h.h, h0.h);
        let xs = random_seq(6, 2, 9);
        let (hs, _) = seq_forward(&p, &h0, &xs).unwrap();
        assert_eq!(hs.last().unwrap(), &h0.h);
    }

    #[test]
    fn zero_params_give_half_gates() {
        let p = GruParams::zeros(2, 3);
        let (h, c) = cell_forward(&p, &GruState::zeros(3), &[0.0, 0.0]).unwrap();
        assert_eq!(c.r, vec![0.5; 3]);
        assert_eq!(c.z, vec![0.5; 3]);
        assert_eq!(c.h_tilde, vec![0.0; 3]);
        assert_eq!(h.h, vec![0.0; 3]);
    }

    #[test]
    fn cell_matches_scalar_oracle() {
        for seed in 0..10 {
            let p = random_params(2, 3, seed);
            let h0 = GruState {
                h: vec![0.1, -0.4, 0.6],
            };
            let x = [0.7, -1.3];
            let (h, _) = cell_forward(&p, &h0, &x).unwrap();
            for (a, b) in h.h.iter().zip(oracle_cell(&p, &h0.h, &x)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_errors() {
        let p = GruParams::zeros(2, 3);
        assert!(matches!(
            cell_forward(&p, &GruState::zeros(3), &[1.0]),
            Err(GruError::Dimension { .. })
        ));
        assert!(matches!(
            cell_forward(&p, &GruState::zeros(3), &[1.0, f64::NAN]),
            Err(GruError::NonFinite(_))
        ));
        assert!(matches!(
            seq_forward(&p, &GruState::zeros(3), &[]),
            Err(GruError::EmptySequence)
        ));
    }

    #[test]
    fn single_step_sequence_equals_cell() {
        let p = random_params(2, 4, 3);
        let x = vec![0.2, 0.9];
        let (hs, tape) = seq_forward(&p, &GruState::zeros(4), std::slice::from_ref(&x)).unwrap();
        let (h, c) = cell_forward(&p, &GruState::zeros(4), &x).unwrap();
        assert_eq!(hs, vec![h.h]);
        assert_eq!(tape.steps, vec![c]);
    }

    #[test]
    fn forward_is_deterministic() {
        let p = random_params(3, 5, 4);
        let xs = random_seq(5, 3, 5);
        let a = seq_forward(&p, &GruState::zeros(5), &xs).unwrap().0;
        let b = seq_forward(&p, &GruState::zeros(5), &xs).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let p = random_params(2, 3, 6);
        let xs = random_seq(4, 2, 7);
        let (_, tape) = seq_forward(&p, &GruState::zeros(3), &xs).unwrap();
        let g = bptt(&p, &tape, &vec![vec![0.0; 3]; 4]).unwrap();
        assert!(g
            .params
            .blocks()
            .iter()
            .all(|b| b.iter().all(|&v| v == 0.0)));
        assert!(matches!(
            bptt(&p, &tape, &vec![vec![0.0; 3]; 3]),
            Err(GruError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn saturated_update_gate_blocks_candidate_gradient() {
        let mut p = random_params(1, 2, 8);
        p.w_z = Matrix::zeros(2, 1);
        p.u_z = Matrix::zeros(2, 2);
        p.b_z = vec![1e3; 2];
        let xs = random_seq(3, 1, 9);
        let (_, tape) = seq_forward(&p, &GruState { h: vec![0.2, -0.1] }, &xs).unwrap();
        let mut up = vec![vec![0.0; 2]; 3];
        up[2] = vec![1.0; 2];
        let g = bptt(&p, &tape, &up).unwrap();
        assert!(g.params.w_h.as_slice().iter().all(|&v| v == 0.0));
    }

    /// L = Σ_t c_t · h_t with fixed random weights c_t.
    fn weighted_loss(p: &GruParams, h0: &GruState, xs: &[Vec<f64>], c: &[Vec<f64>]) -> f64 {
        let (hs, _) = seq_forward(p, h0, xs).unwrap();
        hs.iter()
            .zip(c)
            .map(|(h, w)| h.iter().zip(w).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    }

    #[test]
    fn bptt_matches_central_differences() {
        let p = random_params(1, 2, 10);
        let h0 = GruState { h: vec![0.3, -0.2] };
        let xs = random_seq(3, 1, 11);
        let c = random_seq(3, 2, 12);
        let (_, tape) = seq_forward(&p, &h0, &xs).unwrap();
        let g = bptt(&p, &tape, &c).unwrap();
        let eps = 1e-5;
        let mut probe = p.clone();
        let grads = g.params.blocks().map(|b| b.to_vec());
        for (bi, gb) in grads.iter().enumerate() {
            for k in 0..gb.len() {
                let orig = probe.blocks()[bi][k];
                probe.blocks_mut()[bi][k] = orig + eps;
                let up = weighted_loss(&probe, &h0, &xs, &c);
                probe.blocks_mut()[bi][k] = orig - eps;
                let down = weighted_loss(&probe, &h0, &xs, &c);
                probe.blocks_mut()[bi][k] = orig;
                let fd = (up - down) / (2.0 * eps);
                let rel = (fd - gb[k]).abs() / fd.abs().max(gb[k].abs()).max(1e-8);
                assert!(
                    rel < 1e-4 || (fd - gb[k]).abs() < 1e-9,
                    "block {bi} idx {k}: {fd} vs {}",
                    gb[k]
                );
            }
        }
        for k in 0..2 {
            let mut hp = h0.clone();
            hp.h[k] += eps;
            let mut hm = h0.clone();
            hm.h[k] -= eps;
            let fd =
                (weighted_loss(&p, &hp, &xs, &c) - weighted_loss(&p, &hm, &xs, &c)) / (2.0 * eps);
            assert!((fd - g.h0[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn quantized_zero_params_blend_table_values() {
        let p = GruParams::zeros(2, 3);
        let fmts = FormatConfig::default();
        let tables = ActivationTables::standard(fmts.activation);
        let hs =
            quantized_forward(&p, &GruState::zeros(3), &[vec![0.5, -0.5]], &fmts, &tables).unwrap();
        // r = z = σ-table(0), h̃ = tanh-table(0) = 0, h_prev = 0.
        let zero_in = FxValue::zero(fmts.lut_input);
        assert_eq!(tables.tanh.eval(zero_in).raw(), 0);
        assert!(hs[0].iter().all(|v| v.raw() == 0));
    }

    #[test]
    fn wide_format_tracks_float() {
        let fmt = FxFormat::new(32, 23).unwrap();
        let fmts = FormatConfig::uniform(fmt);
        let tables = ActivationTables::standard(fmt);
        for seed in 0..5 {
            let p = random_params(2, 4, 20 + seed);
            let xs = random_seq(20, 2, 40 + seed);
            let (hf, _) = seq_forward(&p, &GruState::zeros(4), &xs).unwrap();
            let hq = quantized_forward(&p, &GruState::zeros(4), &xs, &fmts, &tables).unwrap();
            let dev = max_deviation(&hf, &hq);
            assert!(dev <= 1e-4, "seed {seed}: {dev}");
        }
    }

    #[test]
    fn quantized_rejects_mismatched_tables() {
        let p = GruParams::zeros(2, 3);
        let fmts = FormatConfig::default();
        let tables = ActivationTables::standard(FxFormat::weight_default());
        assert!(matches!(
            quantized_forward(&p, &GruState::zeros(3), &[vec![0.0, 0.0]], &fmts, &tables),
            Err(GruError::Quantization(_))
        ));
        let mut bad = fmts;
        bad.accumulator = FxFormat::accumulator(32, 10).unwrap();
        assert!(matches!(
            QuantizedGru::new(&p, bad),
            Err(GruError::Quantization(_))
        ));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let p = random_params(2, 3, 30);
        let json = p.to_checkpoint_json();
        assert!(json.contains(CHECKPOINT_FORMAT));
        assert_eq!(GruParams::from_checkpoint_json(&json).unwrap(), p);
        let tampered = json.replace(CHECKPOINT_FORMAT, "merinda-gru/0");
        assert!(GruParams::from_checkpoint_json(&tampered).is_err());
    }

    proptest::proptest! {
        #[test]
        fn hidden_state_stays_bounded(seed in 0u64..1000, scale in 0.1f64..5.0) {
            let mut p = random_params(2, 4, seed);
            p.scale(scale);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let h0 = GruState { h: (0..4).map(|_| rng.gen_range(-1.0..=1.0)).collect() };
            let xs: Vec<Vec<f64>> = (0..8).map(|_| vec![rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)]).collect();
            let (hs, _) = seq_forward(&p, &h0, &xs).unwrap();
            proptest::prop_assert!(hs.iter().flatten().all(|v| v.abs() <= 1.0));
        }
    }
}
