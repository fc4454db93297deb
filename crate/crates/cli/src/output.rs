use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use tempfile::NamedTempFile;

/// Output directory whose files are written through a temp file and renamed
/// into place.
pub struct OutDir {
    dir: PathBuf,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(OutDir { dir: dir.to_path_buf() })
    }

    pub fn write_with(&self, name: &str, fill: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<PathBuf> {
        let target = self.dir.join(name);
        let mut tmp = NamedTempFile::new_in(&self.dir).with_context(|| format!("temp file in {}", self.dir.display()))?;
        fill(tmp.as_file_mut())?;
        tmp.as_file_mut().flush()?;
        tmp.persist(&target)
            .with_context(|| format!("renaming into {}", target.display()))?;
        Ok(target)
    }

    pub fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        self.write_with(name, |w| Ok(w.write_all(bytes)?))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }
}

/// Writes to `--out` when given, otherwise prints the JSON to stdout.
pub fn emit_json<T: Serialize>(out: Option<&OutDir>, name: &str, value: &T) -> Result<()> {
    match out {
        Some(dir) => {
            let path = dir.write_json(name, value)?;
            eprintln!("wrote {}", path.display());
        }
        None => writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(value)?)?,
    }
    Ok(())
}
