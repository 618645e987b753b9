//! Stage outputs are written beside their final names and renamed only once
//! the whole stage has succeeded.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::CliError;

pub struct Outputs {
    stage: &'static str,
    pending: Vec<(PathBuf, PathBuf)>,
}

fn partial_name(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    path.with_file_name(name)
}

impl Outputs {
    pub fn new(stage: &'static str) -> Self {
        Self {
            stage,
            pending: Vec::new(),
        }
    }

    fn internal(&self, path: &Path, e: impl std::fmt::Display) -> CliError {
        CliError::Internal {
            stage: self.stage,
            message: format!("writing {}: {e}", path.display()),
        }
    }

    /// Runs `f` against a buffered `.partial` file for `path`.
    pub fn write(&mut self, path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> fatigue_core::Result<()>) -> Result<(), CliError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| self.internal(path, e))?;
        }
        let partial = partial_name(path);
        let file = File::create(&partial).map_err(|e| self.internal(path, e))?;
        self.pending.push((partial, path.to_path_buf()));
        let mut w = BufWriter::new(file);
        f(&mut w).map_err(|e| match e {
            fatigue_core::Error::Stream(e) => self.internal(path, e),
            e => CliError::from_core(self.stage, e),
        })?;
        w.flush().map_err(|e| self.internal(path, e))
    }

    pub fn write_json<T: serde::Serialize>(&mut self, path: &Path, value: &T) -> Result<(), CliError> {
        self.write(path, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)?;
            Ok(())
        })
    }

    pub fn write_str(&mut self, path: &Path, text: &str) -> Result<(), CliError> {
        self.write(path, |w| Ok(w.write_all(text.as_bytes())?))
    }

    pub fn commit(mut self) -> Result<(), CliError> {
        for (partial, path) in std::mem::take(&mut self.pending) {
            std::fs::rename(&partial, &path).map_err(|e| self.internal(&path, e))?;
        }
        Ok(())
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        for (partial, _) in &self.pending {
            let _ = std::fs::remove_file(partial);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failed_stages_leave_nothing_behind() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        {
            let mut out = Outputs::new("test");
            out.write_str(&a, "x\n").unwrap();
            let err = out.write(&dir.path().join("b.csv"), |_| Err(fatigue_core::Error::Input("bad".into())));
            assert!(err.is_err());
        }
        let left: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
        assert!(left.is_empty());
    }

    #[test]
    fn commit_renames() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("sub").join("a.csv");
        let mut out = Outputs::new("test");
        out.write_str(&a, "x\n").unwrap();
        out.commit().unwrap();
        assert_eq!(std::fs::read_to_string(&a).unwrap(), "x\n");
        assert!(!partial_name(&a).exists());
    }
}
