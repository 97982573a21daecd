//! Recurrent coefficient estimation: a GRU reads a window of samples, a
//! dense head turns its final state into a coefficient matrix, and the
//! window's ODE loss drives training.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::gru::{bptt, seq_forward, GruParams, GruState, Matrix};
use crate::seeds::{stream_rng, Stream};

use super::odeloss::{ode_loss, ode_loss_grad};
use super::optim::{Adam, AdamConfig};
use super::{CoeffVector, RecoveryError, TermLibrary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadActivation {
    /// Signed outputs; needed for systems with negative coefficients.
    #[default]
    Identity,
    Relu,
}

/// Affine map from the final hidden state to the flattened coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseHead {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: HeadActivation,
    /// Outputs outside the mask are pinned to zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<Vec<bool>>,
}

impl DenseHead {
    pub fn init<R: Rng>(
        outputs: usize,
        hidden: usize,
        activation: HeadActivation,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            weights: Matrix::uniform(outputs, hidden, bound, rng),
            bias: vec![0.0; outputs],
            activation,
            support: None,
        }
    }

    pub fn outputs(&self) -> usize {
        self.bias.len()
    }

    /// Returns `(pre-activation, output)`.
    fn forward(&self, h: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut pre = self.bias.clone();
        self.weights.mul_vec_add(h, &mut pre);
        let mut out: Vec<f64> = match self.activation {
            HeadActivation::Identity => pre.clone(),
            HeadActivation::Relu => pre.iter().map(|v| v.max(0.0)).collect(),
        };
        if let Some(mask) = &self.support {
            out.iter_mut()
                .zip(mask)
                .filter(|(_, &m)| !m)
                .for_each(|(o, _)| *o = 0.0);
        }
        (pre, out)
    }

    fn passes_gradient(&self, i: usize, pre: f64) -> bool {
        let active = self.support.as_ref().is_none_or(|m| m[i]);
        active && !(self.activation == HeadActivation::Relu && pre <= 0.0)
    }
}

pub const MODEL_FORMAT: &str = "merinda-model/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MerindaModel {
    pub gru: GruParams,
    pub head: DenseHead,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    model: MerindaModel,
}

impl MerindaModel {
    /// Fresh model for `input_dim` features per sample and `outputs`
    /// coefficients, drawn from the GRU and head init streams of `seed`.
    pub fn init(
        input_dim: usize,
        hidden: usize,
        outputs: usize,
        activation: HeadActivation,
        seed: u64,
    ) -> Self {
        let gru = GruParams::init(input_dim, hidden, &mut stream_rng(seed, Stream::GruInit));
        let head = DenseHead::init(
            outputs,
            hidden,
            activation,
            &mut stream_rng(seed, Stream::HeadInit),
        );
        Self { gru, head }
    }

    pub fn num_params(&self) -> usize {
        self.gru.num_params() + self.head.weights.as_slice().len() + self.head.bias.len()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for b in self.gru.blocks() {
            v.extend_from_slice(b);
        }
        v.extend_from_slice(self.head.weights.as_slice());
        v.extend_from_slice(&self.head.bias);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut at = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&flat[at..at + dst.len()]);
            at += dst.len();
        };
        for b in self.gru.blocks_mut() {
            take(b);
        }
        take(self.head.weights.as_mut_slice());
        take(&mut self.head.bias);
    }

    fn features(&self, window: &Trajectory) -> Result<Vec<Vec<f64>>, RecoveryError> {
        let width = window.state_dim() + window.input_dim();
        if width != self.gru.input_dim() {
            return Err(RecoveryError::Dimension(format!(
                "window rows have {width} features, model expects {}",
                self.gru.input_dim()
            )));
        }
        Ok((0..window.len())
            .map(|i| [window.y_row(i), window.u_row(i)].concat())
            .collect())
    }

    /// Coefficient estimate for one window.
    pub fn estimate(&self, window: &Trajectory) -> Result<Vec<f64>, RecoveryError> {
        let xs = self.features(window)?;
        let (hs, _) = seq_forward(&self.gru, &GruState::zeros(self.gru.hidden_dim()), &xs)?;
        Ok(self.head.forward(hs.last().expect("non-empty")).1)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelFile {
            format: MODEL_FORMAT.into(),
            model: self.clone(),
        })
        .expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, RecoveryError> {
        let file: ModelFile =
            serde_json::from_str(s).map_err(|e| RecoveryError::Checkpoint(e.to_string()))?;
        if file.format != MODEL_FORMAT {
            return Err(RecoveryError::Checkpoint(format!(
                "unknown format {:?}",
                file.format
            )));
        }
        file.model.gru.validate()?;
        if file.model.head.weights.cols() != file.model.gru.hidden_dim()
            || file.model.head.weights.rows() != file.model.head.bias.len()
        {
            return Err(RecoveryError::Checkpoint(
                "head shape does not match the GRU".into(),
            ));
        }
        if file
            .model
            .head
            .support
            .as_ref()
            .is_some_and(|m| m.len() != file.model.head.bias.len())
        {
            return Err(RecoveryError::Checkpoint(
                "support mask length does not match the head".into(),
            ));
        }
        Ok(file.model)
    }
}

/// One coefficient estimate per window of `batch`.
pub fn merinda_forward(
    model: &MerindaModel,
    batch: &[Trajectory],
) -> Result<Vec<Vec<f64>>, RecoveryError> {
    batch.iter().map(|w| model.estimate(w)).collect()
}

/// Windows of `k` samples starting every `stride` samples; a trailing
/// partial window is dropped.
pub fn make_windows(
    traj: &Trajectory,
    k: usize,
    stride: usize,
) -> Result<Vec<Trajectory>, RecoveryError> {
    if k < 2 || stride == 0 {
        return Err(RecoveryError::Config(format!(
            "window length {k} and stride {stride} are not usable"
        )));
    }
    if traj.len() < k {
        return Err(RecoveryError::TooShort {
            needed: k,
            found: traj.len(),
        });
    }
    Ok((0..=traj.len() - k)
        .step_by(stride)
        .map(|s| traj.slice(s, k))
        .collect())
}

/// Mean [`ode_loss`] of a fixed coefficient matrix over windows of `k`.
pub fn reconstruction_mse(
    theta: &[f64],
    traj: &Trajectory,
    lib: &TermLibrary,
    k: usize,
) -> Result<f64, RecoveryError> {
    let windows = make_windows(traj, k, k)?;
    let dt = traj.dt();
    let mut sum = 0.0;
    for w in &windows {
        sum += ode_loss(theta, w, lib, dt)?.loss;
    }
    Ok(sum / windows.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: usize,
    pub window: usize,
    /// Defaults to `window` (non-overlapping) when absent.
    pub stride: Option<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub data_weight: f64,
    pub l1_weight: f64,
    /// Final coefficients below this magnitude are zeroed.
    pub sparsity_threshold: f64,
    /// Keep only this many largest coefficients, if set.
    pub target_support: Option<usize>,
    /// Epochs of further training with the thresholded support fixed.
    pub refit_epochs: usize,
    pub head_activation: HeadActivation,
    pub pooling: ThetaPooling,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            window: 50,
            stride: None,
            batch_size: 8,
            epochs: 1500,
            adam: AdamConfig {
                learning_rate: 1e-2,
                ..AdamConfig::default()
            },
            data_weight: 1.0,
            l1_weight: 0.0,
            sparsity_threshold: 0.05,
            target_support: None,
            refit_epochs: 500,
            head_activation: HeadActivation::Identity,
            pooling: ThetaPooling::Batch,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean window ODE loss seen during the epoch.
    pub ode_loss: f64,
    /// Weighted objective including the sparsity penalty.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub initial_loss: f64,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map_or(self.initial_loss, |e| e.ode_loss)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MerindaModel,
    /// Mean head output over all windows before thresholding.
    pub raw_theta: Vec<f64>,
    pub coeffs: CoeffVector,
    pub log: TrainLog,
}

/// How window estimates enter the loss during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaPooling {
    /// Each window is rolled out with its own estimate.
    Window,
    /// Every window of a batch is rolled out with the batch-mean estimate.
    #[default]
    Batch,
}

struct WindowPass {
    xs_len: usize,
    tape: crate::gru::GruTape,
    h: Vec<f64>,
    pre: Vec<f64>,
    theta: Vec<f64>,
}

fn window_pass(model: &MerindaModel, window: &Trajectory) -> Result<WindowPass, RecoveryError> {
    let xs = model.features(window)?;
    let (hs, tape) = seq_forward(&model.gru, &GruState::zeros(model.gru.hidden_dim()), &xs)?;
    let h = hs.last().expect("non-empty").clone();
    let (pre, theta) = model.head.forward(&h);
    Ok(WindowPass {
        xs_len: xs.len(),
        tape,
        h,
        pre,
        theta,
    })
}

/// Adds the parameter gradient implied by `∂objective/∂θ = g_theta` for
/// one window into `grad`.
fn window_backward(
    model: &MerindaModel,
    pass: &WindowPass,
    g_theta: &[f64],
    grad: &mut [f64],
) -> Result<(), RecoveryError> {
    let hd = model.gru.hidden_dim();
    let g_pre: Vec<f64> = g_theta
        .iter()
        .zip(&pass.pre)
        .enumerate()
        .map(|(i, (&g, &pre))| {
            if model.head.passes_gradient(i, pre) {
                g
            } else {
                0.0
            }
        })
        .collect();
    let n_gru = model.gru.num_params();
    let n_w = model.head.weights.as_slice().len();
    let (g_gru, rest) = grad.split_at_mut(n_gru);
    let (g_w, g_b) = rest.split_at_mut(n_w);
    for (o, &gp) in g_pre.iter().enumerate() {
        for (j, &hj) in pass.h.iter().enumerate() {
            g_w[o * hd + j] += gp * hj;
        }
        g_b[o] += gp;
    }
    let mut dh_last = vec![0.0; hd];
    model.head.weights.mul_t_vec_add(&g_pre, &mut dh_last);
    let mut dl_dh = vec![vec![0.0; hd]; pass.xs_len];
    *dl_dh.last_mut().expect("non-empty") = dh_last;
    let gg = bptt(&model.gru, &pass.tape, &dl_dh)?;
    let mut at = 0;
    for b in gg.params.blocks() {
        for (dst, src) in g_gru[at..at + b.len()].iter_mut().zip(b) {
            *dst += src;
        }
        at += b.len();
    }
    Ok(())
}

fn l1_grad(theta: &[f64], weight: f64) -> impl Iterator<Item = f64> + '_ {
    theta
        .iter()
        .map(move |&v| if v == 0.0 { 0.0 } else { weight * v.signum() })
}

/// Sum over `batch` of the window objectives and their gradient with
/// respect to the flat parameters (added into `grad`). Returns the summed
/// ODE loss and summed objective.
fn batch_grad(
    model: &MerindaModel,
    batch: &[&Trajectory],
    lib: &TermLibrary,
    dt: f64,
    cfg: &TrainConfig,
    grad: &mut [f64],
) -> Result<(f64, f64), RecoveryError> {
    let passes = batch
        .iter()
        .map(|w| window_pass(model, w))
        .collect::<Result<Vec<_>, _>>()?;
    let (mut loss_sum, mut obj_sum) = (0.0, 0.0);
    match cfg.pooling {
        ThetaPooling::Window => {
            for (pass, w) in passes.iter().zip(batch) {
                let (loss, g) = ode_loss_grad(&pass.theta, w, lib, dt)?;
                let l1: f64 = pass.theta.iter().map(|v| v.abs()).sum();
                loss_sum += loss.loss;
                obj_sum += cfg.data_weight * loss.loss + cfg.l1_weight * l1;
                let g_theta: Vec<f64> = g
                    .iter()
                    .zip(l1_grad(&pass.theta, cfg.l1_weight))
                    .map(|(a, b)| cfg.data_weight * a + b)
                    .collect();
                window_backward(model, pass, &g_theta, grad)?;
            }
        }
        ThetaPooling::Batch => {
            let b = batch.len() as f64;
            let mut mean = vec![0.0; model.head.outputs()];
            for pass in &passes {
                mean.iter_mut()
                    .zip(&pass.theta)
                    .for_each(|(m, t)| *m += t / b);
            }
            let l1: f64 = mean.iter().map(|v| v.abs()).sum();
            let mut g_mean: Vec<f64> = l1_grad(&mean, cfg.l1_weight).map(|v| v * b).collect();
            for w in batch {
                let (loss, g) = ode_loss_grad(&mean, w, lib, dt)?;
                loss_sum += loss.loss;
                obj_sum += cfg.data_weight * loss.loss + cfg.l1_weight * l1;
                g_mean
                    .iter_mut()
                    .zip(g)
                    .for_each(|(a, v)| *a += cfg.data_weight * v);
            }
            // Each window contributes 1/b of the mean.
            let share: Vec<f64> = g_mean.iter().map(|v| v / b).collect();
            for pass in &passes {
                window_backward(model, pass, &share, grad)?;
            }
        }
    }
    Ok((loss_sum, obj_sum))
}

fn check_setup(
    traj: &Trajectory,
    lib: &TermLibrary,
    cfg: &TrainConfig,
) -> Result<(), RecoveryError> {
    if traj.state_dim() != lib.state_dim() || traj.input_dim() != lib.input_dim() {
        return Err(RecoveryError::Dimension(format!(
            "trajectory has {} states/{} inputs, library expects {}/{}",
            traj.state_dim(),
            traj.input_dim(),
            lib.state_dim(),
            lib.input_dim()
        )));
    }
    if cfg.batch_size == 0 || cfg.hidden == 0 {
        return Err(RecoveryError::Config(
            "batch size and hidden width must be positive".into(),
        ));
    }
    Ok(())
}

/// Trains a freshly initialized model; see [`train_model`].
pub fn train_merinda(
    traj: &Trajectory,
    lib: &TermLibrary,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, RecoveryError> {
    check_setup(traj, lib, cfg)?;
    let model = MerindaModel::init(
        traj.state_dim() + traj.input_dim(),
        cfg.hidden,
        lib.state_dim() * lib.len(),
        cfg.head_activation,
        cfg.seed,
    );
    train_model(model, traj, lib, cfg)
}

/// Runs Adam on the mean window objective for `cfg.epochs` epochs, then
/// averages the head output over all windows and sparsifies it.
pub fn train_model(
    mut model: MerindaModel,
    traj: &Trajectory,
    lib: &TermLibrary,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, RecoveryError> {
    check_setup(traj, lib, cfg)?;
    if model.head.outputs() != lib.state_dim() * lib.len() {
        return Err(RecoveryError::Dimension(format!(
            "head emits {} coefficients, library needs {}",
            model.head.outputs(),
            lib.state_dim() * lib.len()
        )));
    }
    let windows = make_windows(traj, cfg.window, cfg.stride.unwrap_or(cfg.window))?;
    let dt = traj.dt();
    let rng = stream_rng(cfg.seed, Stream::WindowShuffle);
    let flat = model.to_flat();
    let adam = Adam::new(cfg.adam, flat.len());
    let order: Vec<usize> = (0..windows.len()).collect();

    let mut log = TrainLog::default();
    let mut initial = 0.0;
    for (w, theta) in windows.iter().zip(merinda_forward(&model, &windows)?) {
        initial += ode_loss(&theta, w, lib, dt)?.loss;
    }
    log.initial_loss = initial / windows.len() as f64;

    let mut run = Run {
        windows: &windows,
        lib,
        dt,
        cfg,
        rng,
        adam,
        flat,
        order,
    };
    run.epochs(&mut model, cfg.epochs, &mut log)?;
    let mut raw_theta = mean_estimate(&model, &windows)?;
    let mut coeffs = sparsify(&raw_theta, lib, cfg)?;
    if cfg.refit_epochs > 0 {
        model.head.support = Some(coeffs.support().to_vec());
        run.epochs(&mut model, cfg.refit_epochs, &mut log)?;
        raw_theta = mean_estimate(&model, &windows)?;
        coeffs = sparsify(&raw_theta, lib, cfg)?;
    }
    Ok(TrainOutcome {
        model,
        raw_theta,
        coeffs,
        log,
    })
}

fn mean_estimate(model: &MerindaModel, windows: &[Trajectory]) -> Result<Vec<f64>, RecoveryError> {
    let estimates = merinda_forward(model, windows)?;
    let mut mean = vec![0.0; model.head.outputs()];
    for e in &estimates {
        mean.iter_mut()
            .zip(e)
            .for_each(|(a, b)| *a += b / estimates.len() as f64);
    }
    Ok(mean)
}

fn sparsify(
    theta: &[f64],
    lib: &TermLibrary,
    cfg: &TrainConfig,
) -> Result<CoeffVector, RecoveryError> {
    let mut coeffs = CoeffVector::from_dense(lib.state_dim(), lib.len(), theta.to_vec())?
        .threshold(cfg.sparsity_threshold);
    if let Some(k) = cfg.target_support {
        coeffs = coeffs.keep_largest(k);
    }
    Ok(coeffs)
}

/// Optimizer state carried across the training phases.
struct Run<'a> {
    windows: &'a [Trajectory],
    lib: &'a TermLibrary,
    dt: f64,
    cfg: &'a TrainConfig,
    rng: rand_chacha::ChaCha8Rng,
    adam: Adam,
    flat: Vec<f64>,
    order: Vec<usize>,
}

impl Run<'_> {
    fn epochs(
        &mut self,
        model: &mut MerindaModel,
        count: usize,
        log: &mut TrainLog,
    ) -> Result<(), RecoveryError> {
        let mut grad = vec![0.0; self.flat.len()];
        let first = log.epochs.len() + 1;
        for epoch in first..first + count {
            self.order.shuffle(&mut self.rng);
            let (mut loss_sum, mut obj_sum) = (0.0, 0.0);
            for batch in self.order.chunks(self.cfg.batch_size) {
                grad.fill(0.0);
                let members: Vec<&Trajectory> = batch.iter().map(|&i| &self.windows[i]).collect();
                let (l, o) = batch_grad(model, &members, self.lib, self.dt, self.cfg, &mut grad)?;
                loss_sum += l;
                obj_sum += o;
                let inv = 1.0 / batch.len() as f64;
                grad.iter_mut().for_each(|g| *g *= inv);
                if grad.iter().any(|g| !g.is_finite()) {
                    return Err(RecoveryError::Divergence { epoch });
                }
                self.adam.step(&mut self.flat, &grad);
                model.set_flat(&self.flat);
            }
            let count = self.windows.len() as f64;
            if !obj_sum.is_finite() || self.flat.iter().any(|v| !v.is_finite()) {
                return Err(RecoveryError::Divergence { epoch });
            }
            log.epochs.push(EpochRecord {
                epoch,
                ode_loss: loss_sum / count,
                objective: obj_sum / count,
            });
        }
        Ok(())
    }
}
