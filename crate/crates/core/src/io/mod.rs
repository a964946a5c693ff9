//! File formats: PFM float images, PNG color/label images, OBJ meshes,
//! ASCII PLY point clouds and the JSON stack manifest tying a peelmap
//! directory together.

mod manifest;
mod obj;
mod pfm;
mod ply;

pub use manifest::{load_stack, save_stack, StackManifest, MANIFEST_SCHEMA};
pub use obj::{load_obj, save_obj, ObjMaterialLabels};
pub use pfm::{read_pfm, write_pfm, PfmImage};
pub use ply::{load_ply, save_ply};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io error on {path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
    #[error("image error on {path}: {source}")]
    Image {
        path: String,
        source: image::ImageError,
    },
    #[error("json error on {path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("stack error: {0}")]
    Stack(#[from] crate::stack::StackError),
}

impl IoError {
    pub(crate) fn file(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::File {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn format(path: &std::path::Path, msg: impl Into<String>) -> Self {
        Self::Format {
            path: path.display().to_string(),
            msg: msg.into(),
        }
    }
}
