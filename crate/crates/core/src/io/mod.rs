//! File formats: NPY array container, model container, TOML configuration.

pub mod config;
pub mod model;
pub mod npy;

pub use config::Config;
pub use model::{load_model, save_model, ModelFile};
