pub mod constitutive;
pub mod effective;
pub mod error;
pub mod fullmodel;
pub mod linalg;
pub mod mesh;
pub mod output;
pub mod quadrature;
pub mod timestep;
pub mod upscale;

pub use error::{Error, Result};
