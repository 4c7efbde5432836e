//! Dense tensors, differentiable primitives with hand-written backward
//! rules, a central-difference gradient checker and the tensor archive
//! checkpoint format.

pub mod archive;
pub mod gradcheck;
pub mod ops;
mod tensor;

pub use archive::{ArchiveEntry, DType};
pub use gradcheck::{check_flat, check_flat_with, grad_check, grad_check_with, GradCheck, Stencil};
pub use tensor::{argmax, ParamSet, Parameter, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op} expects rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("non-finite value {value} at flat index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("objective returned a non-finite value")]
    NonFiniteObjective,
    #[error("finite-difference epsilon {0} outside (0, 1e-2]")]
    Epsilon(f64),
    #[error("tensor archive: {0}")]
    Archive(String),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
}

impl NumericsError {
    pub fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        NumericsError::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
