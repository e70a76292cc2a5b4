//! The CLI's own state: logical day, registration defaults and the
//! advisory lock on the state directory.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ppdp_core::store::{DayIndex, RotationPolicy};
use serde::{Deserialize, Serialize};

pub const STATE_FILE: &str = "ppdp-state.json";
pub const LOCK_FILE: &str = ".lock";
pub const CSP_KEY_FILE: &str = "csp.key";
const MAGIC: &str = "ppdp-state-v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Defaults {
    pub n_expected: u64,
    pub fp_rate: f64,
    pub policy: RotationPolicy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CliState {
    pub magic: String,
    /// The day currently open for ingestion; `tick` publishes it.
    pub day: DayIndex,
    pub defaults: Defaults,
}

/// Held for the lifetime of a command. Mutating commands hold it
/// exclusively, read-only ones shared.
pub struct StateDir {
    pub path: PathBuf,
    _lock: File,
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Read,
    Write,
}

impl StateDir {
    pub fn init(path: &Path, defaults: Defaults) -> Result<(Self, CliState)> {
        if path.join(STATE_FILE).exists() {
            bail!("{} is already initialized", path.display());
        }
        fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(path.join(LOCK_FILE))?;
        lock.lock()?;
        let state = CliState {
            magic: MAGIC.into(),
            day: 0,
            defaults,
        };
        let dir = Self {
            path: path.to_path_buf(),
            _lock: lock,
        };
        dir.save(&state)?;
        Ok((dir, state))
    }

    pub fn open(path: &Path, access: Access) -> Result<(Self, CliState)> {
        let state_path = path.join(STATE_FILE);
        if !state_path.exists() {
            bail!(
                "{} is not a ppdp state directory (run `ppdp init` first)",
                path.display()
            );
        }
        let lock = File::open(path.join(LOCK_FILE))
            .with_context(|| format!("opening lock file in {}", path.display()))?;
        match access {
            Access::Read => lock.lock_shared()?,
            Access::Write => lock.lock()?,
        }
        let text = fs::read_to_string(&state_path)?;
        let state: CliState = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", state_path.display()))?;
        if state.magic != MAGIC {
            bail!("{} belongs to something else", state_path.display());
        }
        Ok((
            Self {
                path: path.to_path_buf(),
                _lock: lock,
            },
            state,
        ))
    }

    pub fn save(&self, state: &CliState) -> Result<()> {
        let tmp = self.path.join(format!("{STATE_FILE}.tmp"));
        let mut f = File::create(&tmp)?;
        f.write_all(&serde_json::to_vec_pretty(state)?)?;
        f.sync_all()?;
        fs::rename(&tmp, self.path.join(STATE_FILE))?;
        Ok(())
    }

    pub fn csp_key_path(&self) -> PathBuf {
        self.path.join(CSP_KEY_FILE)
    }
}
