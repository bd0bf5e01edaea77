use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::json;
use thiserror::Error;

use swm_core::Error as CoreError;

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_MISSING_FILE: i32 = 2;
pub const EXIT_FORMAT: i32 = 3;
pub const EXIT_SHAPE: i32 = 4;
pub const EXIT_CONFIG: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: no such file", .0.display())]
    MissingFile(PathBuf),

    #[error("configuration: {0}")]
    Config(String),

    #[error("{}: {source}", .path.display())]
    File {
        path: PathBuf,
        #[source]
        source: CoreError,
    },

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn core(&self) -> Option<&CoreError> {
        match self {
            CliError::File { source, .. } | CliError::Core(source) => Some(source),
            _ => None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::MissingFile(_) => "missing_file",
            CliError::Config(_) => "config",
            CliError::Usage(_) => "usage",
            _ => match self.core() {
                Some(
                    CoreError::BadMagic { .. }
                    | CoreError::VersionMismatch { .. }
                    | CoreError::Truncated(_)
                    | CoreError::Format(_),
                ) => "format",
                Some(
                    CoreError::ShapeMismatch { .. }
                    | CoreError::MissingBlock(_)
                    | CoreError::ModelMismatch(_)
                    | CoreError::PointCountMismatch { .. }
                    | CoreError::LabelOutOfRange { .. },
                ) => "shape",
                Some(CoreError::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => "missing_file",
                _ => "other",
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "missing_file" => EXIT_MISSING_FILE,
            "format" => EXIT_FORMAT,
            "shape" => EXIT_SHAPE,
            "config" | "usage" => EXIT_CONFIG,
            _ => EXIT_OTHER,
        }
    }

    /// Machine-readable form written to stderr on failure.
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "error": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        })
    }
}

fn at(path: &Path) -> impl FnOnce(CoreError) -> CliError + '_ {
    move |source| CliError::File {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    match File::open(path) {
        Ok(f) => Ok(BufReader::new(f)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(CliError::MissingFile(path.to_path_buf())),
        Err(e) => Err(at(path)(e.into())),
    }
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    std::io::Read::read_to_end(&mut open(path)?, &mut buf).map_err(|e| at(path)(e.into()))?;
    Ok(buf)
}

pub(crate) fn read_text(path: &Path) -> Result<String, CliError> {
    String::from_utf8(read_bytes(path)?)
        .map_err(|_| at(path)(CoreError::Format("file is not valid UTF-8".into())))
}

/// Parses the file at `path` with `f`, attaching the path to any error.
pub(crate) fn parse_file<T>(
    path: &Path,
    f: impl FnOnce(&mut BufReader<File>) -> swm_core::Result<T>,
) -> Result<T, CliError> {
    let mut r = open(path)?;
    f(&mut r).map_err(at(path))
}

/// Writes through a buffered file, creating parent directories as needed.
pub(crate) fn write_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> swm_core::Result<()>,
) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| at(path)(e.into()))?;
    }
    let file = File::create(path).map_err(|e| at(path)(e.into()))?;
    let mut w = BufWriter::new(file);
    f(&mut w).map_err(at(path))?;
    w.flush().map_err(|e| at(path)(e.into()))
}

pub(crate) fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable report");
    write_file(path, |w| {
        w.write_all(text.as_bytes())?;
        w.write_all(b"\n")?;
        Ok(())
    })
}
