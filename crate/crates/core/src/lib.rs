pub mod config;
pub mod copula;
pub mod data;
pub mod design;
pub mod error;
pub mod estimators;
pub mod glm;
pub mod linalg;
pub mod links;
pub mod model;
pub mod simulate;
pub mod special;

pub use error::{Error, Result};
