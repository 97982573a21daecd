//! Trajectory-matching loss for a candidate coefficient matrix and its
//! exact gradient through the RK4 unroll.

use crate::dynamics::Trajectory;

use super::{RecoveryError, TermLibrary};

/// States whose magnitude exceeds this count as a blow-up.
pub const BLOWUP_LIMIT: f64 = 1e6;
/// Base loss assigned to a window whose rollout blew up.
pub const BLOWUP_PENALTY: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct OdeLoss {
    pub loss: f64,
    /// Step at which the rollout left the finite range, if it did.
    pub blew_up_at: Option<usize>,
}

fn check(theta: &[f64], window: &Trajectory, lib: &TermLibrary) -> Result<(), RecoveryError> {
    let (n, p) = (lib.state_dim(), lib.len());
    if theta.len() != n * p {
        return Err(RecoveryError::Dimension(format!(
            "θ has {} entries, library needs {}",
            theta.len(),
            n * p
        )));
    }
    if window.state_dim() != n || window.input_dim() != lib.input_dim() {
        return Err(RecoveryError::Dimension(format!(
            "window has {} states/{} inputs, library expects {n}/{}",
            window.state_dim(),
            window.input_dim(),
            lib.input_dim()
        )));
    }
    Ok(())
}

/// Working buffers for one RK4 step of the library dynamics.
struct Stepper<'a> {
    lib: &'a TermLibrary,
    theta: &'a [f64],
    terms: Vec<f64>,
    jac: Vec<f64>,
    stage: Vec<f64>,
    k: [Vec<f64>; 4],
    points: [Vec<f64>; 4],
}

impl<'a> Stepper<'a> {
    fn new(lib: &'a TermLibrary, theta: &'a [f64]) -> Self {
        let (n, p) = (lib.state_dim(), lib.len());
        Self {
            lib,
            theta,
            terms: vec![0.0; p],
            jac: vec![0.0; p * n],
            stage: vec![0.0; n],
            k: std::array::from_fn(|_| vec![0.0; n]),
            points: std::array::from_fn(|_| vec![0.0; n]),
        }
    }

    fn rhs(&mut self, x: &[f64], u: &[f64], out_stage: usize) {
        let p = self.lib.len();
        self.lib.eval_into(x, u, &mut self.terms);
        for (i, o) in self.k[out_stage].iter_mut().enumerate() {
            *o = self.theta[i * p..(i + 1) * p]
                .iter()
                .zip(&self.terms)
                .map(|(a, b)| a * b)
                .sum();
        }
    }

    /// Advances `x` in place, keeping the four stage points.
    fn step(&mut self, x: &mut [f64], u: &[f64], dt: f64) {
        let n = x.len();
        self.points[0].copy_from_slice(x);
        let coef = [0.0, dt / 2.0, dt / 2.0, dt];
        for s in 0..4 {
            if s > 0 {
                for i in 0..n {
                    self.points[s][i] = x[i] + coef[s] * self.k[s - 1][i];
                }
            }
            self.stage.copy_from_slice(&self.points[s]);
            let pt = std::mem::take(&mut self.stage);
            self.rhs(&pt, u, s);
            self.stage = pt;
        }
        for i in 0..n {
            x[i] +=
                dt / 6.0 * (self.k[0][i] + 2.0 * self.k[1][i] + 2.0 * self.k[2][i] + self.k[3][i]);
        }
    }

    /// Given `λ = ∂L/∂x_{j+1}` for the step taken from the stage points
    /// currently stored, returns `∂L/∂x_j` through this step and adds the
    /// coefficient gradient into `theta_bar`.
    fn step_vjp(&mut self, u: &[f64], dt: f64, lambda: &[f64], theta_bar: &mut [f64]) -> Vec<f64> {
        let (n, p) = (self.lib.state_dim(), self.lib.len());
        let mut lx = lambda.to_vec();
        let mut gk = [
            lambda.iter().map(|l| dt / 6.0 * l).collect::<Vec<_>>(),
            lambda.iter().map(|l| dt / 3.0 * l).collect::<Vec<_>>(),
            lambda.iter().map(|l| dt / 3.0 * l).collect::<Vec<_>>(),
            lambda.iter().map(|l| dt / 6.0 * l).collect::<Vec<_>>(),
        ];
        let feed = [0.0, dt / 2.0, dt / 2.0, dt];
        for s in (0..4).rev() {
            let g = gk[s].clone();
            let pt = &self.points[s];
            self.lib.eval_into(pt, u, &mut self.terms);
            self.lib.state_jacobian_into(pt, u, &mut self.jac);
            for i in 0..n {
                for k in 0..p {
                    theta_bar[i * p + k] += g[i] * self.terms[k];
                }
            }
            // gx = (Θ ∂L/∂x)ᵀ g
            let mut gx = vec![0.0; n];
            for k in 0..p {
                let w: f64 = (0..n).map(|i| self.theta[i * p + k] * g[i]).sum();
                if w != 0.0 {
                    for j in 0..n {
                        gx[j] += w * self.jac[k * n + j];
                    }
                }
            }
            for j in 0..n {
                lx[j] += gx[j];
                if s > 0 {
                    gk[s - 1][j] += feed[s] * gx[j];
                }
            }
        }
        lx
    }
}

fn out_of_range(x: &[f64]) -> bool {
    x.iter().any(|v| !v.is_finite() || v.abs() > BLOWUP_LIMIT)
}

/// Penalty for a rollout that failed at step `s` of a `k`-sample window;
/// earlier failures cost more.
fn blowup_loss(s: usize, k: usize) -> f64 {
    BLOWUP_PENALTY + (k - s) as f64 / k as f64
}

/// Rolls the window forward from its first sample and returns the mean
/// squared state error over all `k·n` entries (the first sample included).
pub fn ode_loss(
    theta: &[f64],
    window: &Trajectory,
    lib: &TermLibrary,
    dt: f64,
) -> Result<OdeLoss, RecoveryError> {
    check(theta, window, lib)?;
    let (k, n) = (window.len(), lib.state_dim());
    if k == 0 {
        return Ok(OdeLoss {
            loss: 0.0,
            blew_up_at: None,
        });
    }
    let mut st = Stepper::new(lib, theta);
    let mut x = window.y_row(0).to_vec();
    let mut sum = 0.0;
    for j in 1..k {
        st.step(&mut x, window.u_row(j - 1), dt);
        if out_of_range(&x) {
            return Ok(OdeLoss {
                loss: blowup_loss(j, k),
                blew_up_at: Some(j),
            });
        }
        sum += x
            .iter()
            .zip(window.y_row(j))
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>();
    }
    Ok(OdeLoss {
        loss: sum / (k * n) as f64,
        blew_up_at: None,
    })
}

/// [`ode_loss`] together with `∂loss/∂θ` from the discrete adjoint of the
/// unroll. A blown-up window gets a zero gradient.
pub fn ode_loss_grad(
    theta: &[f64],
    window: &Trajectory,
    lib: &TermLibrary,
    dt: f64,
) -> Result<(OdeLoss, Vec<f64>), RecoveryError> {
    check(theta, window, lib)?;
    let (k, n) = (window.len(), lib.state_dim());
    let mut grad = vec![0.0; theta.len()];
    if k == 0 {
        return Ok((
            OdeLoss {
                loss: 0.0,
                blew_up_at: None,
            },
            grad,
        ));
    }
    let mut st = Stepper::new(lib, theta);
    let mut xs = Vec::with_capacity(k);
    xs.push(window.y_row(0).to_vec());
    let mut sum = 0.0;
    for j in 1..k {
        let mut x = xs[j - 1].clone();
        st.step(&mut x, window.u_row(j - 1), dt);
        if out_of_range(&x) {
            return Ok((
                OdeLoss {
                    loss: blowup_loss(j, k),
                    blew_up_at: Some(j),
                },
                grad,
            ));
        }
        sum += x
            .iter()
            .zip(window.y_row(j))
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>();
        xs.push(x);
    }
    let scale = 2.0 / (k * n) as f64;
    let resid = |j: usize| -> Vec<f64> {
        xs[j]
            .iter()
            .zip(window.y_row(j))
            .map(|(a, b)| scale * (a - b))
            .collect()
    };
    let mut lambda = resid(k - 1);
    for j in (0..k - 1).rev() {
        // Recompute the stage points of step j -> j+1.
        let mut x = xs[j].clone();
        st.step(&mut x, window.u_row(j), dt);
        let back = st.step_vjp(window.u_row(j), dt, &lambda, &mut grad);
        // x_0 is pinned to the data, so its residual term is zero anyway.
        lambda = back.iter().zip(resid(j)).map(|(a, b)| a + b).collect();
    }
    Ok((
        OdeLoss {
            loss: sum / (k * n) as f64,
            blew_up_at: None,
        },
        grad,
    ))
}

/// Relative ∞-norm gap between the adjoint gradient and central
/// differences of [`ode_loss`]. An empty window reports zero.
pub fn adjoint_grad_check(
    theta: &[f64],
    window: &Trajectory,
    lib: &TermLibrary,
    dt: f64,
) -> Result<f64, RecoveryError> {
    if window.is_empty() {
        return Ok(0.0);
    }
    let (_, adj) = ode_loss_grad(theta, window, lib, dt)?;
    let mut th = theta.to_vec();
    let mut fd = vec![0.0; theta.len()];
    for i in 0..theta.len() {
        let h = 1e-6 * theta[i].abs().max(1.0);
        th[i] = theta[i] + h;
        let lp = ode_loss(&th, window, lib, dt)?.loss;
        th[i] = theta[i] - h;
        let lm = ode_loss(&th, window, lib, dt)?.loss;
        th[i] = theta[i];
        fd[i] = (lp - lm) / (2.0 * h);
    }
    let gap = adj
        .iter()
        .zip(&fd)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let scale = fd.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-12);
    Ok(gap / scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{generate_dataset, rk4_step, LotkaVolterra};
    use crate::recovery::{build_library, truth_coefficients, LibraryDynamics};
    use proptest::prelude::*;

    fn lv_window(len: usize) -> (Trajectory, TermLibrary, Vec<f64>) {
        let th = LotkaVolterra::DEFAULT_THETA;
        let traj = generate_dataset(&LotkaVolterra, &[2.0, 1.0], &th, 0.01, 200, 0.0, 0).unwrap();
        let lib = build_library(2, 0, 2).unwrap();
        let truth = truth_coefficients("lotka_volterra", &th, &lib)
            .unwrap()
            .values()
            .to_vec();
        (traj.slice(0, len), lib, truth)
    }

    #[test]
    fn true_coefficients_give_near_zero_loss() {
        let (w, lib, truth) = lv_window(50);
        let l = ode_loss(&truth, &w, &lib, 0.01).unwrap();
        assert!(l.loss < 1e-20, "{}", l.loss);
    }

    #[test]
    fn loss_matches_independent_rollout() {
        let (w, lib, truth) = lv_window(20);
        let theta: Vec<f64> = truth.iter().map(|v| v * 0.8 + 0.01).collect();
        let sys = LibraryDynamics::new(&lib);
        let mut x = w.y_row(0).to_vec();
        let mut sum = 0.0;
        for j in 1..w.len() {
            x = rk4_step(&sys, &x, &[], &theta, 0.01).unwrap();
            sum += (x[0] - w.y_row(j)[0]).powi(2) + (x[1] - w.y_row(j)[1]).powi(2);
        }
        let l = ode_loss(&theta, &w, &lib, 0.01).unwrap().loss;
        assert!((l - sum / 40.0).abs() < 1e-15);
    }

    #[test]
    fn adjoint_matches_finite_differences() {
        let (w, lib, truth) = lv_window(50);
        let theta: Vec<f64> = truth
            .iter()
            .enumerate()
            .map(|(i, v)| v + 0.05 * (i as f64).sin())
            .collect();
        let rel = adjoint_grad_check(&theta, &w, &lib, 0.01).unwrap();
        assert!(rel < 1e-4, "relative gap {rel}");
    }

    #[test]
    fn empty_window_checks_to_zero() {
        let (w, lib, truth) = lv_window(0);
        assert_eq!(adjoint_grad_check(&truth, &w, &lib, 0.01).unwrap(), 0.0);
        assert_eq!(ode_loss(&truth, &w, &lib, 0.01).unwrap().loss, 0.0);
    }

    #[test]
    fn blowup_is_penalized_with_zero_gradient() {
        let (w, lib, _) = lv_window(50);
        let mut theta = vec![0.0; 12];
        theta[3] = 1e4; // x1' = 1e4 x1^2
        let (l, g) = ode_loss_grad(&theta, &w, &lib, 0.01).unwrap();
        let s = l.blew_up_at.expect("should blow up");
        assert!(l.loss >= BLOWUP_PENALTY && l.loss <= BLOWUP_PENALTY + 1.0);
        assert_eq!(l.loss, BLOWUP_PENALTY + (50 - s) as f64 / 50.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_checked() {
        let (w, lib, _) = lv_window(10);
        assert!(ode_loss(&[0.0; 5], &w, &lib, 0.01).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn adjoint_agrees_for_random_coefficients(
            theta in proptest::collection::vec(-1.0f64..1.0, 12),
            len in 2usize..30,
        ) {
            let (w, lib, _) = lv_window(len);
            let rel = adjoint_grad_check(&theta, &w, &lib, 0.01).unwrap();
            prop_assert!(rel < 1e-4, "relative gap {}", rel);
        }
    }
}
