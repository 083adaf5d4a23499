use std::path::{Path, PathBuf};

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// Failures reading or writing images, manifests and checkpoints.
#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{p}: {d}", p = .0.display(), d = .1)]
    Io(PathBuf, std::io::Error),
    #[error("{p}: unsupported format (expected .pgm or .png)", p = .0.display())]
    UnsupportedFormat(PathBuf),
    #[error("{p}: grayscale required", p = .0.display())]
    NotGrayscale(PathBuf),
    #[error("{p}: malformed file: {d}", p = .0.display(), d = .1)]
    Malformed(PathBuf, String),
    #[error("{p}: malformed sidecar: {d}", p = .0.display(), d = .1)]
    Sidecar(PathBuf, String),
    #[error("{p}: {d}", p = .0.display(), d = .1)]
    Image(PathBuf, gdce_core::Error),
    #[error("{p}: manifest has no entries", p = .0.display())]
    EmptyManifest(PathBuf),
    #[error("{}: invalid manifest: {reason}", path.display())]
    Manifest { path: PathBuf, reason: String },
    #[error("{p}: checkpoint: {d}", p = .0.display(), d = .1)]
    Checkpoint(PathBuf, String),
    #[error("{p}: checkpoint format version {v} is not supported", p = .0.display(), v = .1)]
    Version(PathBuf, u32),
    #[error("{}: expected a {expected} checkpoint, found {found}", path.display())]
    Role { path: PathBuf, expected: String, found: String },
    #[error("missing {what} {}: {hint}", path.display())]
    Missing { what: &'static str, path: PathBuf, hint: &'static str },
    #[error("{p}: output directory is not empty (pass --force to overwrite)", p = .0.display())]
    NotEmpty(PathBuf),
}

impl DataError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        DataError::Io(path.to_owned(), e)
    }
}
