use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::trial::Trial;
use crate::error::{Error, Result};

/// Append-only JSON-lines file of trials. A sibling `.lock` file keeps a
/// second process out while the store is open.
#[derive(Debug)]
pub struct TrialStore {
    path: PathBuf,
    lock: PathBuf,
    file: Mutex<File>,
}

fn lock_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".lock");
    path.with_file_name(name)
}

impl TrialStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let lock = lock_path(&path);
        OpenOptions::new().write(true).create_new(true).open(&lock).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                Error::contract(format!("study store {} is locked by {}", path.display(), lock.display()))
            } else {
                e.into()
            }
        })?;
        let file = OpenOptions::new().create(true).append(true).open(&path);
        let file = match file {
            Ok(f) => f,
            Err(e) => {
                let _ = fs::remove_file(&lock);
                return Err(e.into());
            }
        };
        Ok(TrialStore {
            path,
            lock,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn load(&self) -> Result<Vec<Trial>> {
        let _guard = self.file.lock().expect("store mutex");
        read_trials(&self.path)
    }

    pub fn append(&self, trial: &Trial) -> Result<()> {
        let mut line = serde_json::to_string(trial)?;
        line.push('\n');
        let mut f = self.file.lock().expect("store mutex");
        f.write_all(line.as_bytes())?;
        f.flush()?;
        Ok(())
    }
}

impl Drop for TrialStore {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

/// Reads a store without taking the lock. A missing file is an empty study.
pub fn read_trials(path: &Path) -> Result<Vec<Trial>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut trials = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let t: Trial = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        t.validate()?;
        trials.push(t);
    }
    Ok(trials)
}
