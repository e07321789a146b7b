//! File formats, VTK export and the command-line driver built on `ccsolid`.

pub mod cli;
pub mod config;
pub mod meshfile;
pub mod modelfile;
pub mod text;
pub mod vtk;

pub use cli::run_command;
pub use config::RunConfig;
pub use meshfile::{parse_mesh, write_mesh};
pub use modelfile::{parse_model, write_model};
pub use text::FormatError;
