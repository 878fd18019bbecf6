#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod diagnostics;
pub mod error;
pub mod linalg;
pub mod mpca;
pub mod ranks;
pub mod robust;
pub mod rompca;
pub mod sample;
pub mod screen;
pub mod sim;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{DenseTensor, Matrix};
