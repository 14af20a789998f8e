//! File formats, manifests and configuration.

pub mod atomic;
pub mod config;
pub mod grd;
pub mod manifest;
pub mod mdl;
mod reader;

pub use atomic::write_atomic;
pub use config::{load_config, parse_config, to_kv};
pub use grd::{decode_grd, encode_grd, read_grd, write_grd};
pub use manifest::{load_dataset, FileEntry, Manifest};
pub use mdl::{decode_mdl, encode_mdl, read_mdl, write_mdl};
