//! Output tracking: every file a command writes is registered here, and if
//! the command fails before committing, the partial outputs are removed.

use anyhow::{Context, Result};
use std::path::{Path, PathBuf};

pub struct OutGuard {
    created: Vec<PathBuf>,
    committed: bool,
}

impl OutGuard {
    pub fn new() -> OutGuard {
        OutGuard {
            created: Vec::new(),
            committed: false,
        }
    }

    pub fn write(&mut self, path: &Path, contents: &[u8]) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)
                    .with_context(|| format!("creating {}", parent.display()))?;
            }
        }
        std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.created.push(path.to_path_buf());
        Ok(())
    }

    pub fn write_str(&mut self, path: &Path, contents: &str) -> Result<()> {
        self.write(path, contents.as_bytes())
    }

    /// Registers a file written through another API.
    pub fn track(&mut self, path: &Path) {
        self.created.push(path.to_path_buf());
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Default for OutGuard {
    fn default() -> Self {
        OutGuard::new()
    }
}

impl Drop for OutGuard {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for path in self.created.iter().rev() {
            let _ = std::fs::remove_file(path);
        }
    }
}
