//! Dense matrices, a reverse-mode tape over them, Adam, and the seeded RNG.

mod adam;
mod matrix;
pub mod rng;
mod tape;

pub use adam::AdamState;
pub use matrix::{sigmoid, Matrix};
pub use rng::Rng;
pub use tape::{Gradients, Tape, Var};
