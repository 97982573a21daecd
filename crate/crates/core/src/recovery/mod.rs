//! Sparse recovery of polynomial dynamics from sampled trajectories.
//!
//! Two estimators share the same term library and coefficient layout:
//! [`sindy_fit`] regresses finite-difference derivatives, while
//! [`train_merinda`] trains a GRU to emit coefficients whose RK4 rollout
//! matches each data window.

mod library;
mod merinda;
mod odeloss;
mod optim;
mod sindy;

use thiserror::Error;

use crate::dynamics::DynError;
use crate::gru::GruError;

pub use library::{binomial, build_library, CoeffVector, LibraryDynamics, TermLibrary};
pub use merinda::{
    make_windows, merinda_forward, reconstruction_mse, train_merinda, train_model, DenseHead,
    EpochRecord, HeadActivation, MerindaModel, ThetaPooling, TrainConfig, TrainLog, TrainOutcome,
    MODEL_FORMAT,
};
pub use odeloss::{
    adjoint_grad_check, ode_loss, ode_loss_grad, OdeLoss, BLOWUP_LIMIT, BLOWUP_PENALTY,
};
pub use optim::{Adam, AdamConfig};
pub use sindy::{sindy_fit, SindyConfig, SindyFit};

#[derive(Debug, Error)]
pub enum RecoveryError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("need at least {needed} samples, got {found}")]
    TooShort { needed: usize, found: usize },
    #[error("regression for state {state} is singular (condition estimate {condition:.3e})")]
    Singular { state: usize, condition: f64 },
    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Gru(#[from] GruError),
    #[error(transparent)]
    Dynamics(#[from] DynError),
}

/// Ground-truth coefficients of a built-in system expressed in `lib`.
/// Returns `None` for unknown systems or libraries that cannot hold them.
pub fn truth_coefficients(system: &str, theta: &[f64], lib: &TermLibrary) -> Option<CoeffVector> {
    if lib.order() < 2 {
        return None;
    }
    let m = lib.input_dim();
    let e = |xs: &[u32]| -> Vec<u32> {
        xs.iter()
            .copied()
            .chain(std::iter::repeat_n(0, m))
            .collect()
    };
    match (system, lib.state_dim(), theta) {
        ("lotka_volterra", 2, &[a, b, c, d]) => {
            let (x, xy, y) = (e(&[1, 0]), e(&[1, 1]), e(&[0, 1]));
            CoeffVector::from_terms(lib, &[(0, &x, a), (0, &xy, -b), (1, &xy, c), (1, &y, -d)])
        }
        ("lorenz", 3, &[sigma, rho, beta]) => {
            let (x, y, z) = (e(&[1, 0, 0]), e(&[0, 1, 0]), e(&[0, 0, 1]));
            let (xz, xy) = (e(&[1, 0, 1]), e(&[1, 1, 0]));
            CoeffVector::from_terms(
                lib,
                &[
                    (0, &x, -sigma),
                    (0, &y, sigma),
                    (1, &x, rho),
                    (1, &xz, -1.0),
                    (1, &y, -1.0),
                    (2, &xy, 1.0),
                    (2, &z, -beta),
                ],
            )
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{DynSystem, Lorenz, LotkaVolterra};

    fn agree(sys: &dyn DynSystem, name: &str, theta: &[f64]) {
        let lib = build_library(sys.state_dim(), 0, 2).unwrap();
        let c = truth_coefficients(name, theta, &lib).unwrap();
        let ld = LibraryDynamics::new(&lib);
        let n = sys.state_dim();
        for s in 0..5 {
            let x: Vec<f64> = (0..n)
                .map(|i| ((s * 3 + i) as f64 * 0.71).sin() * 2.0)
                .collect();
            let (mut a, mut b) = (vec![0.0; n], vec![0.0; n]);
            sys.rhs(&x, &[], theta, &mut a);
            ld.rhs(&x, &[], c.values(), &mut b);
            for i in 0..n {
                assert!((a[i] - b[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn truth_reproduces_builtin_rhs() {
        agree(
            &LotkaVolterra,
            "lotka_volterra",
            &LotkaVolterra::DEFAULT_THETA,
        );
        agree(&Lorenz, "lorenz", &Lorenz::DEFAULT_THETA);
    }

    #[test]
    fn truth_needs_quadratic_library() {
        let lib = build_library(2, 0, 1).unwrap();
        assert!(truth_coefficients("lotka_volterra", &[1.0; 4], &lib).is_none());
        let lib = build_library(2, 0, 2).unwrap();
        assert!(truth_coefficients("pendulum", &[1.0; 4], &lib).is_none());
    }
}
