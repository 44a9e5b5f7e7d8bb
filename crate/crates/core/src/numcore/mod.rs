//! Float64 tensors with reverse-mode gradients for the operations the
//! detector needs, plus a finite-difference gradient checker.

mod conv;
mod gradcheck;
mod io;
mod ops;
mod tensor;

pub use gradcheck::{
    compare_gradient, grad_check, grad_check_with, GradCheckOptions, GradCheckReport,
};
pub use io::{read_tensor, write_tensor, TENSOR_MAGIC};
pub use ops::LOG_FLOOR;
pub use tensor::Tensor;
