//! Parameter storage, the Adam optimizer, seeded randomness and the
//! finite-difference gradient checker.

mod adam;
mod gradcheck;
mod params;

pub use adam::{adam_step, AdamConfig, OptState};
pub use gradcheck::{grad_check, GradCheckOptions, Stencil};
pub use params::{Block, BlockView, BlockViewMut, Layout, ParamVector, Shape};

use rand::SeedableRng;

/// The one generator type used for every stochastic operation.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
