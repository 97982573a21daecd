//! Sparse dynamical-model recovery with a GRU estimator, a fixed-point GRU
//! datapath, and an analytic model of its streaming hardware pipeline.
//!
//! - [`fxp`]: Q-format arithmetic with rounding and saturation.
//! - [`actlut`]: table-based sigmoid and tanh.
//! - [`gru`]: float GRU with backpropagation through time, and its quantized twin.
//! - [`dynamics`]: systems, RK4 integration and trajectory I/O.
//! - [`recovery`]: term libraries, SINDy, the rollout loss and model training.
//! - [`hwmodel`]: banking law, port scheduler, intervals, throughput and energy.
//! - [`cli`]: the `merinda` command-line runner.
//!
//! ```
//! use merinda::hwmodel::stage_ii;
//!
//! // Eight reads per cycle from four dual-port banks.
//! assert_eq!(stage_ii(8, 4), 1);
//! ```

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod actlut;
pub mod cli;
pub mod dynamics;
pub mod fxp;
pub mod gru;
pub mod hwmodel;
pub mod recovery;
pub mod seeds;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/fixed-point.md")]
    mod fixed_point {}
    #[doc = include_str!("../../../book/src/activation-tables.md")]
    mod activation_tables {}
    #[doc = include_str!("../../../book/src/gru.md")]
    mod gru {}
    #[doc = include_str!("../../../book/src/dynamics.md")]
    mod dynamics {}
    #[doc = include_str!("../../../book/src/recovery.md")]
    mod recovery {}
    #[doc = include_str!("../../../book/src/hardware-model.md")]
    mod hardware_model {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
