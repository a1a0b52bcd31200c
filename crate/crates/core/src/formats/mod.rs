//! File formats shared by the CLI and the service.

mod bodies;
mod camera_file;
mod tracks;

use std::io::Write;
use std::path::Path;

use thiserror::Error;

pub use bodies::{read_body_defs, write_body_defs};
pub use camera_file::{read_camera_file, write_camera_file, CameraFile};
pub use tracks::{read_tracks_csv, write_tracks_csv};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("toml: {0}")]
    Toml(String),
    #[error("{0}")]
    Invalid(String),
}

impl FormatError {
    pub fn code(&self) -> &'static str {
        match self {
            FormatError::Io { .. } => "Io",
            FormatError::Csv(_) => "Csv",
            FormatError::Json(_) => "Json",
            FormatError::Toml(_) => "Toml",
            FormatError::Invalid(_) => "InvalidFormat",
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        FormatError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

impl From<std::io::Error> for FormatError {
    fn from(source: std::io::Error) -> Self {
        FormatError::Io {
            path: String::new(),
            source,
        }
    }
}

impl From<toml::de::Error> for FormatError {
    fn from(e: toml::de::Error) -> Self {
        FormatError::Toml(e.to_string())
    }
}

impl From<toml::ser::Error> for FormatError {
    fn from(e: toml::ser::Error) -> Self {
        FormatError::Toml(e.to_string())
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory and a rename,
/// so readers never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| FormatError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| FormatError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| FormatError::io(path, e))?;
    tmp.persist(path).map_err(|e| FormatError::io(path, e.error))?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, FormatError> {
    std::fs::read(path).map_err(|e| FormatError::io(path, e))
}
