//! Spill-to-file staging for cached activations.
//!
//! Values are widened to f64 and written little-endian, so both f32 and f64
//! round trip bit-exactly.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A buffer that has been moved out of memory into a file.
#[derive(Debug)]
pub struct Spilled {
    path: PathBuf,
    len: usize,
}

impl Spilled {
    pub fn store<T: Scalar>(dir: &Path, name: &str, data: &[T]) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(format!("{name}.bin"));
        let mut bytes = Vec::with_capacity(8 * data.len());
        for v in data {
            bytes.extend_from_slice(&v.as_f64().to_le_bytes());
        }
        fs::write(&path, bytes)?;
        Ok(Spilled { path, len: data.len() })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Reads the buffer back and deletes the file.
    pub fn restore<T: Scalar>(self) -> Result<Vec<T>> {
        let bytes = fs::read(&self.path)?;
        if bytes.len() != 8 * self.len {
            return Err(Error::Format(format!(
                "spill file {} holds {} bytes, expected {}",
                self.path.display(),
                bytes.len(),
                8 * self.len
            )));
        }
        fs::remove_file(&self.path)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| T::cast(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect())
    }
}
