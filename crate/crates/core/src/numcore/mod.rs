//! Numeric substrate: tensors, the gradient tape, finite-difference
//! checking and the SGD optimizer.

mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{finite_difference_check, GradCheck, KINK_TOLERANCE};
pub use optim::{Schedule, Sgd};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
