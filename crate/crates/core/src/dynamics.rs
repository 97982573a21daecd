//! Benchmark systems, fixed-step RK4 integration and trajectory I/O.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::seeds::{stream_rng, Stream};

#[derive(Debug, Error)]
pub enum DynError {
    #[error("integration blew up at step {step}")]
    BlowUp { step: usize },
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("dimension mismatch: {what} has {found}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("time grid is not uniform at index {0}")]
    NonUniformGrid(usize),
    #[error("need at least {needed} samples, got {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error(transparent)]
    Csv(#[from] CsvError),
}

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("bad header: {0}")]
    Header(String),
    #[error("line {line}: expected {expected} columns, found {found}")]
    Ragged {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("line {line}, column {column}: cannot parse {value:?} as a number")]
    Malformed {
        line: u64,
        column: String,
        value: String,
    },
    #[error("line {line}: time does not increase")]
    NonMonotoneTime { line: u64 },
    #[error("line {line}, column {column}: non-finite value")]
    NonFinite { line: u64, column: String },
    #[error("no data rows")]
    Empty,
    #[error("csv: {0}")]
    Reader(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Right-hand side `ẋ = f(x, u, θ)` of an ODE system.
pub trait DynSystem {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    /// Length of the parameter vector `θ`.
    fn param_dim(&self) -> usize;
    fn rhs(&self, x: &[f64], u: &[f64], theta: &[f64], out: &mut [f64]);
}

/// `ẋ = a x − b x y`, `ẏ = c x y − d y` with `θ = [a, b, c, d]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LotkaVolterra;

impl LotkaVolterra {
    pub const DEFAULT_THETA: [f64; 4] = [1.0, 0.5, 0.3, 1.0];
}

impl DynSystem for LotkaVolterra {
    fn name(&self) -> &str {
        "lotka_volterra"
    }
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        0
    }
    fn param_dim(&self) -> usize {
        4
    }
    fn rhs(&self, x: &[f64], _u: &[f64], th: &[f64], out: &mut [f64]) {
        out[0] = th[0] * x[0] - th[1] * x[0] * x[1];
        out[1] = th[2] * x[0] * x[1] - th[3] * x[1];
    }
}

/// Lorenz-63 with `θ = [σ, ρ, β]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Lorenz;

impl Lorenz {
    pub const DEFAULT_THETA: [f64; 3] = [10.0, 28.0, 8.0 / 3.0];
}

impl DynSystem for Lorenz {
    fn name(&self) -> &str {
        "lorenz"
    }
    fn state_dim(&self) -> usize {
        3
    }
    fn input_dim(&self) -> usize {
        0
    }
    fn param_dim(&self) -> usize {
        3
    }
    fn rhs(&self, x: &[f64], _u: &[f64], th: &[f64], out: &mut [f64]) {
        out[0] = th[0] * (x[1] - x[0]);
        out[1] = x[0] * (th[1] - x[2]) - x[1];
        out[2] = x[0] * x[1] - th[2] * x[2];
    }
}

/// A system defined by a closure, handy for tests and one-off models.
pub struct FnSystem<F> {
    name: String,
    n: usize,
    m: usize,
    p: usize,
    f: F,
}

impl<F: Fn(&[f64], &[f64], &[f64], &mut [f64])> FnSystem<F> {
    pub fn new(name: impl Into<String>, n: usize, m: usize, p: usize, f: F) -> Self {
        Self {
            name: name.into(),
            n,
            m,
            p,
            f,
        }
    }
}

impl<F: Fn(&[f64], &[f64], &[f64], &mut [f64])> DynSystem for FnSystem<F> {
    fn name(&self) -> &str {
        &self.name
    }
    fn state_dim(&self) -> usize {
        self.n
    }
    fn input_dim(&self) -> usize {
        self.m
    }
    fn param_dim(&self) -> usize {
        self.p
    }
    fn rhs(&self, x: &[f64], u: &[f64], th: &[f64], out: &mut [f64]) {
        (self.f)(x, u, th, out)
    }
}

/// Sampled series `(t, Y, U)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    t: Vec<f64>,
    y: Vec<f64>,
    u: Vec<f64>,
    n: usize,
    m: usize,
}

impl Trajectory {
    pub fn new(
        t: Vec<f64>,
        y: Vec<f64>,
        u: Vec<f64>,
        n: usize,
        m: usize,
    ) -> Result<Self, DynError> {
        let len = t.len();
        if y.len() != len * n {
            return Err(DynError::Dimension {
                what: "Y",
                expected: len * n,
                found: y.len(),
            });
        }
        if u.len() != len * m {
            return Err(DynError::Dimension {
                what: "U",
                expected: len * m,
                found: u.len(),
            });
        }
        if let Some(i) = t.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(DynError::InvalidTrajectory(format!(
                "time not strictly increasing at sample {}",
                i + 1
            )));
        }
        if t.iter().chain(&y).chain(&u).any(|v| !v.is_finite()) {
            return Err(DynError::InvalidTrajectory("non-finite value".into()));
        }
        Ok(Self { t, y, u, n, m })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn times(&self) -> &[f64] {
        &self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn y_row(&self, i: usize) -> &[f64] {
        &self.y[i * self.n..(i + 1) * self.n]
    }

    pub fn u_row(&self, i: usize) -> &[f64] {
        &self.u[i * self.m..(i + 1) * self.m]
    }

    /// Mean sample spacing.
    pub fn dt(&self) -> f64 {
        if self.len() < 2 {
            return 0.0;
        }
        (self.t[self.len() - 1] - self.t[0]) / (self.len() - 1) as f64
    }

    /// Samples `start..start+len` as a new trajectory.
    pub fn slice(&self, start: usize, len: usize) -> Trajectory {
        let end = start + len;
        Trajectory {
            t: self.t[start..end].to_vec(),
            y: self.y[start * self.n..end * self.n].to_vec(),
            u: self.u[start * self.m..end * self.m].to_vec(),
            n: self.n,
            m: self.m,
        }
    }
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

struct Rk4Scratch {
    k: [Vec<f64>; 4],
    stage: Vec<f64>,
}

impl Rk4Scratch {
    fn new(n: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; n]),
            stage: vec![0.0; n],
        }
    }
}

fn rk4_into(
    sys: &dyn DynSystem,
    x: &mut [f64],
    u: &[f64],
    theta: &[f64],
    dt: f64,
    s: &mut Rk4Scratch,
) {
    let n = x.len();
    let Rk4Scratch { k, stage } = s;
    sys.rhs(x, u, theta, &mut k[0]);
    for (i, st) in stage.iter_mut().enumerate() {
        *st = x[i] + 0.5 * dt * k[0][i];
    }
    sys.rhs(stage, u, theta, &mut k[1]);
    for (i, st) in stage.iter_mut().enumerate() {
        *st = x[i] + 0.5 * dt * k[1][i];
    }
    sys.rhs(stage, u, theta, &mut k[2]);
    for (i, st) in stage.iter_mut().enumerate() {
        *st = x[i] + dt * k[2][i];
    }
    sys.rhs(stage, u, theta, &mut k[3]);
    for i in 0..n {
        x[i] += dt / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
    }
}

fn check_call(sys: &dyn DynSystem, x: &[f64], u: &[f64], theta: &[f64]) -> Result<(), DynError> {
    let dims = [
        ("state", x.len(), sys.state_dim()),
        ("input", u.len(), sys.input_dim()),
        ("theta", theta.len(), sys.param_dim()),
    ];
    for (what, found, expected) in dims {
        if found != expected {
            return Err(DynError::Dimension {
                what,
                expected,
                found,
            });
        }
    }
    Ok(())
}

/// One classical RK4 step with `u` held constant over the step.
pub fn rk4_step(
    sys: &dyn DynSystem,
    x: &[f64],
    u: &[f64],
    theta: &[f64],
    dt: f64,
) -> Result<Vec<f64>, DynError> {
    if !(dt > 0.0) {
        return Err(DynError::NonPositiveStep(dt));
    }
    check_call(sys, x, u, theta)?;
    let mut next = x.to_vec();
    rk4_into(sys, &mut next, u, theta, dt, &mut Rk4Scratch::new(x.len()));
    if !all_finite(&next) {
        return Err(DynError::BlowUp { step: 0 });
    }
    Ok(next)
}

fn uniform_step(t_grid: &[f64]) -> Result<f64, DynError> {
    if t_grid.len() < 2 {
        return Ok(0.0);
    }
    let dt = (t_grid[t_grid.len() - 1] - t_grid[0]) / (t_grid.len() - 1) as f64;
    if !(dt > 0.0) {
        return Err(DynError::NonPositiveStep(dt));
    }
    let scale = t_grid.iter().fold(1.0f64, |a, t| a.max(t.abs()));
    for (i, w) in t_grid.windows(2).enumerate() {
        if ((w[1] - w[0]) - dt).abs() > 1e-9 * scale {
            return Err(DynError::NonUniformGrid(i + 1));
        }
    }
    Ok(dt)
}

/// Integrates from `x0` across `t_grid`; `u_traj` holds one input row per
/// grid point (row-major), applied with a zero-order hold.
pub fn solve(
    sys: &dyn DynSystem,
    x0: &[f64],
    theta: &[f64],
    u_traj: &[f64],
    t_grid: &[f64],
) -> Result<Trajectory, DynError> {
    let (n, m, len) = (sys.state_dim(), sys.input_dim(), t_grid.len());
    if len == 0 {
        return Err(DynError::TooFewSamples {
            needed: 1,
            found: 0,
        });
    }
    if u_traj.len() != len * m {
        return Err(DynError::Dimension {
            what: "U",
            expected: len * m,
            found: u_traj.len(),
        });
    }
    check_call(sys, x0, &u_traj[..m], theta)?;
    let dt = uniform_step(t_grid)?;
    let mut y = Vec::with_capacity(len * n);
    y.extend_from_slice(x0);
    let mut x = x0.to_vec();
    let mut scratch = Rk4Scratch::new(n);
    for step in 1..len {
        rk4_into(
            sys,
            &mut x,
            &u_traj[(step - 1) * m..step * m],
            theta,
            dt,
            &mut scratch,
        );
        if !all_finite(&x) {
            return Err(DynError::BlowUp { step });
        }
        y.extend_from_slice(&x);
    }
    Trajectory::new(t_grid.to_vec(), y, u_traj.to_vec(), n, m)
}

/// `t_i = i·dt` for `i < len`.
pub fn uniform_grid(dt: f64, len: usize) -> Vec<f64> {
    (0..len).map(|i| i as f64 * dt).collect()
}

/// Solves with zero inputs and adds i.i.d. Gaussian measurement noise.
pub fn generate_dataset(
    sys: &dyn DynSystem,
    x0: &[f64],
    theta: &[f64],
    dt: f64,
    len: usize,
    noise_std: f64,
    seed: u64,
) -> Result<Trajectory, DynError> {
    let u = vec![0.0; len * sys.input_dim()];
    generate_dataset_with_inputs(sys, x0, theta, &u, dt, len, noise_std, seed)
}

#[allow(clippy::too_many_arguments)]
pub fn generate_dataset_with_inputs(
    sys: &dyn DynSystem,
    x0: &[f64],
    theta: &[f64],
    u: &[f64],
    dt: f64,
    len: usize,
    noise_std: f64,
    seed: u64,
) -> Result<Trajectory, DynError> {
    if len < 2 {
        return Err(DynError::TooFewSamples {
            needed: 2,
            found: len,
        });
    }
    if !(dt > 0.0) {
        return Err(DynError::NonPositiveStep(dt));
    }
    let clean = solve(sys, x0, theta, u, &uniform_grid(dt, len))?;
    if noise_std == 0.0 {
        return Ok(clean);
    }
    let normal = Normal::new(0.0, noise_std)
        .map_err(|e| DynError::InvalidTrajectory(format!("noise std {noise_std}: {e}")))?;
    let mut rng = stream_rng(seed, Stream::MeasurementNoise);
    let Trajectory { t, mut y, u, n, m } = clean;
    y.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    Trajectory::new(t, y, u, n, m)
}

fn header(n: usize, m: usize) -> Vec<String> {
    std::iter::once("t".to_string())
        .chain((1..=n).map(|i| format!("y{i}")))
        .chain((1..=m).map(|i| format!("u{i}")))
        .collect()
}

/// Writes `t,y1..yn,u1..um` with 17 significant digits per value.
pub fn write_csv<W: Write>(traj: &Trajectory, out: W) -> Result<(), CsvError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let map = |e: csv::Error| CsvError::Reader(e.to_string());
    w.write_record(header(traj.n, traj.m)).map_err(map)?;
    for i in 0..traj.len() {
        let row: Vec<String> = std::iter::once(&traj.t[i])
            .chain(traj.y_row(i))
            .chain(traj.u_row(i))
            .map(|v| format!("{v:.16e}"))
            .collect();
        w.write_record(&row).map_err(map)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(traj: &Trajectory, path: &Path) -> Result<(), CsvError> {
    write_csv(traj, BufWriter::new(File::create(path)?))
}

pub fn read_csv<R: Read>(input: R) -> Result<Trajectory, CsvError> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let names: Vec<String> = rdr
        .headers()
        .map_err(|e| CsvError::Reader(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if names.first().map(String::as_str) != Some("t") {
        return Err(CsvError::Header("first column must be `t`".into()));
    }
    let n = names.iter().filter(|c| c.starts_with('y')).count();
    let m = names.iter().filter(|c| c.starts_with('u')).count();
    if names != header(n, m) {
        return Err(CsvError::Header(format!(
            "expected {:?}, found {:?}",
            header(n, m),
            names
        )));
    }
    let width = names.len();
    let (mut t, mut y, mut u) = (Vec::new(), Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CsvError::Reader(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != width {
            return Err(CsvError::Ragged {
                line,
                expected: width,
                found: rec.len(),
            });
        }
        for (col, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| CsvError::Malformed {
                line,
                column: names[col].clone(),
                value: field.to_string(),
            })?;
            if !v.is_finite() {
                return Err(CsvError::NonFinite {
                    line,
                    column: names[col].clone(),
                });
            }
            match col {
                0 => {
                    if t.last().is_some_and(|&prev| v <= prev) {
                        return Err(CsvError::NonMonotoneTime { line });
                    }
                    t.push(v);
                }
                c if c <= n => y.push(v),
                _ => u.push(v),
            }
        }
    }
    if t.is_empty() {
        return Err(CsvError::Empty);
    }
    Ok(Trajectory { t, y, u, n, m })
}

pub fn load_csv(path: &Path) -> Result<Trajectory, CsvError> {
    read_csv(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[allow(clippy::type_complexity)]
    fn decay() -> FnSystem<impl Fn(&[f64], &[f64], &[f64], &mut [f64])> {
        FnSystem::new("decay", 1, 0, 1, |x, _u, th, out| out[0] = th[0] * x[0])
    }

    fn lv_terminal(dt: f64, t_end: f64) -> Vec<f64> {
        let steps = (t_end / dt).round() as usize;
        let mut x = vec![2.0, 1.0];
        for _ in 0..steps {
            x = rk4_step(&LotkaVolterra, &x, &[], &LotkaVolterra::DEFAULT_THETA, dt).unwrap();
        }
        x
    }

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn zero_rhs_keeps_state() {
        let still = FnSystem::new("still", 2, 0, 0, |_x, _u, _th, out| out.fill(0.0));
        assert_eq!(
            rk4_step(&still, &[1.5, -2.0], &[], &[], 0.1).unwrap(),
            vec![1.5, -2.0]
        );
    }

    #[test]
    fn exponential_decay_one_step() {
        let x = rk4_step(&decay(), &[1.0], &[], &[-1.0], 0.1).unwrap();
        assert!((x[0] - (-0.1f64).exp()).abs() < 1e-7);
    }

    #[test]
    fn step_errors() {
        assert!(matches!(
            rk4_step(&decay(), &[1.0], &[], &[-1.0], 0.0),
            Err(DynError::NonPositiveStep(_))
        ));
        assert!(matches!(
            rk4_step(&decay(), &[1.0, 2.0], &[], &[-1.0], 0.1),
            Err(DynError::Dimension { .. })
        ));
        let boom = FnSystem::new("boom", 1, 0, 0, |_x, _u, _th, out| out[0] = f64::INFINITY);
        assert!(matches!(
            rk4_step(&boom, &[1.0], &[], &[], 0.1),
            Err(DynError::BlowUp { .. })
        ));
    }

    #[test]
    fn halving_step_cuts_error_sixteenfold() {
        let reference = lv_terminal(0.1 / 64.0, 10.0);
        let e1 = dist(&lv_terminal(0.1, 10.0), &reference);
        let e2 = dist(&lv_terminal(0.05, 10.0), &reference);
        let ratio = e1 / e2;
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn single_point_grid_is_initial_condition() {
        let tr = solve(
            &LotkaVolterra,
            &[2.0, 1.0],
            &LotkaVolterra::DEFAULT_THETA,
            &[],
            &[0.0],
        )
        .unwrap();
        assert_eq!(tr.len(), 1);
        assert_eq!(tr.y_row(0), &[2.0, 1.0]);
    }

    #[test]
    fn solve_reports_blowup_step() {
        let quad = FnSystem::new("quad", 1, 0, 0, |x, _u, _th, out| out[0] = x[0] * x[0]);
        let err = solve(&quad, &[10.0], &[], &[], &uniform_grid(0.1, 100)).unwrap_err();
        assert!(matches!(err, DynError::BlowUp { step } if step > 0 && step < 100));
    }

    #[test]
    fn solve_rejects_nonuniform_grid() {
        let err = solve(&decay(), &[1.0], &[-1.0], &[], &[0.0, 0.1, 0.3]).unwrap_err();
        assert!(matches!(err, DynError::NonUniformGrid(1)));
    }

    #[test]
    fn regenerating_with_truth_reproduces_data() {
        let th = LotkaVolterra::DEFAULT_THETA;
        let data = generate_dataset(&LotkaVolterra, &[2.0, 1.0], &th, 0.01, 500, 0.0, 1).unwrap();
        let again = solve(&LotkaVolterra, &[2.0, 1.0], &th, &[], data.times()).unwrap();
        let worst = data
            .y()
            .iter()
            .zip(again.y())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-8);
    }

    #[test]
    fn lorenz_nearby_states_diverge() {
        let th = Lorenz::DEFAULT_THETA;
        let grid = uniform_grid(0.01, 2501);
        let a = solve(&Lorenz, &[1.0, 1.0, 1.0], &th, &[], &grid).unwrap();
        let b = solve(&Lorenz, &[1.0 + 1e-8, 1.0, 1.0], &th, &[], &grid).unwrap();
        let d0 = dist(a.y_row(0), b.y_row(0));
        let d_end = dist(a.y_row(2500), b.y_row(2500));
        assert!(d_end > 1e4 * d0, "separation {d0} -> {d_end}");
    }

    #[test]
    fn noise_is_seeded_and_calibrated() {
        let th = LotkaVolterra::DEFAULT_THETA;
        let clean = generate_dataset(&LotkaVolterra, &[2.0, 1.0], &th, 0.01, 2000, 0.0, 3).unwrap();
        let a = generate_dataset(&LotkaVolterra, &[2.0, 1.0], &th, 0.01, 2000, 0.01, 3).unwrap();
        let b = generate_dataset(&LotkaVolterra, &[2.0, 1.0], &th, 0.01, 2000, 0.01, 3).unwrap();
        assert_eq!(a, b);
        let diffs: Vec<f64> = a.y().iter().zip(clean.y()).map(|(x, y)| x - y).collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64)
            .sqrt();
        assert!((sd - 0.01).abs() < 0.001, "sd {sd}");
    }

    #[test]
    fn constant_input_matches_baked_in_constant() {
        let driven = FnSystem::new("driven", 1, 1, 1, |x, u, th, out| {
            out[0] = th[0] * x[0] + u[0]
        });
        let baked = FnSystem::new("baked", 1, 0, 1, |x, _u, th, out| {
            out[0] = th[0] * x[0] + 0.7
        });
        let grid = uniform_grid(0.05, 40);
        let a = solve(&driven, &[0.2], &[-0.5], &vec![0.7; 40], &grid).unwrap();
        let b = solve(&baked, &[0.2], &[-0.5], &[], &grid).unwrap();
        assert_eq!(a.y(), b.y());
    }

    #[test]
    fn csv_roundtrip_is_bit_exact() {
        let driven = FnSystem::new("driven", 2, 1, 0, |x, u, _th, out| {
            out[0] = -x[1] + u[0];
            out[1] = x[0];
        });
        let u: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let tr =
            generate_dataset_with_inputs(&driven, &[1.0, 0.0], &[], &u, 0.1, 50, 0.01, 9).unwrap();
        let mut buf = Vec::new();
        write_csv(&tr, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,y1,y2,u1\n"));
        assert_eq!(read_csv(buf.as_slice()).unwrap(), tr);
    }

    #[test]
    fn crlf_and_lf_parse_identically() {
        let lf = "t,y1\n0,1.5\n0.1,1.25\n";
        let crlf = lf.replace('\n', "\r\n");
        assert_eq!(
            read_csv(lf.as_bytes()).unwrap(),
            read_csv(crlf.as_bytes()).unwrap()
        );
    }

    #[test]
    fn csv_errors_are_distinct() {
        let ragged = read_csv("t,y1,y2\n0,1,2\n0.1,1\n".as_bytes()).unwrap_err();
        assert!(
            matches!(
                ragged,
                CsvError::Ragged {
                    line: 3,
                    expected: 3,
                    found: 2
                }
            ),
            "{ragged}"
        );
        assert!(ragged.to_string().contains("line 3"));
        let bad = read_csv("t,y1\n0,abc\n".as_bytes()).unwrap_err();
        assert!(matches!(bad, CsvError::Malformed { line: 2, .. }));
        let back = read_csv("t,y1\n0,1\n0,2\n".as_bytes()).unwrap_err();
        assert!(matches!(back, CsvError::NonMonotoneTime { line: 3 }));
        assert!(matches!(
            read_csv("x,y1\n0,1\n".as_bytes()),
            Err(CsvError::Header(_))
        ));
        assert!(matches!(
            read_csv("t,y1\n".as_bytes()),
            Err(CsvError::Empty)
        ));
    }
}
