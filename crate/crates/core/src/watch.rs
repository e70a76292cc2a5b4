//! Polling directory watcher that ingests files dropped into per-user
//! directories.
//!
//! Each registered user owns `<root>/<encoded-user>/`. A file is ingested
//! once per distinct `(path, content hash)`; the seen-set is persisted as
//! canonical JSON lines so restarts never double-ingest. For users on the
//! signed variant, `report.pdf` must be accompanied by `report.pdf.sig`
//! holding the user's hex signature; until the sidecar appears the file is
//! skipped.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::evidence::{sha256_stream, DigestVariant, Signature, UserId};
use crate::store::{DayIndex, FilterStore, IngestReceipt, StoreError};

pub const SEEN_FILE: &str = "watch-seen.jsonl";
pub const SIG_SUFFIX: &str = ".sig";
pub const DEFAULT_POLL: Duration = Duration::from_secs(1);

#[derive(Debug, Clone)]
pub struct WatchConfig {
    pub root: PathBuf,
    pub user_dirs: BTreeMap<UserId, PathBuf>,
    pub poll_interval: Duration,
}

impl WatchConfig {
    /// One subdirectory per registered user, named like the store's user
    /// directories.
    pub fn for_store(root: impl Into<PathBuf>, store: &FilterStore) -> Self {
        let root = root.into();
        let user_dirs = store
            .users()
            .map(|u| {
                let name = store
                    .user_dir(u)
                    .file_name()
                    .expect("user dir has a name")
                    .to_owned();
                (u.clone(), root.join(name))
            })
            .collect();
        Self {
            root,
            user_dirs,
            poll_interval: DEFAULT_POLL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SeenEntry {
    pub path: String,
    pub size: u64,
    pub sha256: String,
}

/// Persisted set of already-ingested `(path, content)` pairs.
#[derive(Debug)]
pub struct SeenSet {
    path: PathBuf,
    entries: BTreeSet<(String, String)>,
}

impl SeenSet {
    pub fn load(path: impl Into<PathBuf>) -> io::Result<Self> {
        let path = path.into();
        let mut entries = BTreeSet::new();
        match File::open(&path) {
            Ok(f) => {
                for line in BufReader::new(f).lines() {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let e: SeenEntry = serde_json::from_str(&line)
                        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
                    entries.insert((e.path, e.sha256));
                }
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e),
        }
        Ok(Self { path, entries })
    }

    pub fn in_state_dir(dir: &Path) -> io::Result<Self> {
        Self::load(dir.join(SEEN_FILE))
    }

    pub fn contains(&self, path: &str, sha256: &str) -> bool {
        self.entries.contains(&(path.to_string(), sha256.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn record(&mut self, entry: SeenEntry) -> io::Result<()> {
        let line = canonical::to_string(&entry).map_err(io::Error::other)?;
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?;
        writeln!(f, "{line}")?;
        self.entries.insert((entry.path, entry.sha256));
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct WatchOutcome {
    pub receipts: Vec<IngestReceipt>,
    /// Files left for a later poll, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

fn list_files(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
        .map(|e| e.path())
        .collect();
    files.sort();
    Ok(files)
}

fn read_sidecar(file: &Path) -> Result<Signature, String> {
    let mut name = file.as_os_str().to_owned();
    name.push(SIG_SUFFIX);
    let text = fs::read_to_string(PathBuf::from(name)).map_err(|e| format!("signature sidecar: {e}"))?;
    Signature::from_hex(&text).map_err(|e| e.to_string())
}

/// Scans every user directory once and ingests unseen content.
///
/// Unreadable files and bad signatures are reported in
/// [`WatchOutcome::skipped`]; only store failures abort the scan.
pub fn watch_once(
    config: &WatchConfig,
    store: &mut FilterStore,
    seen: &mut SeenSet,
    day: DayIndex,
) -> Result<WatchOutcome, StoreError> {
    let mut out = WatchOutcome::default();
    for (user, dir) in &config.user_dirs {
        let variant = store.user_record(user)?.variant;
        let files = match list_files(dir) {
            Ok(f) => f,
            Err(e) => {
                out.skipped.push((dir.clone(), format!("cannot list directory: {e}")));
                continue;
            }
        };
        for file in files {
            let is_sidecar = file
                .file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with(SIG_SUFFIX));
            if variant == DigestVariant::Signed && is_sidecar {
                continue;
            }
            let key = file.to_string_lossy().into_owned();
            let (hash, size) = match File::open(&file).and_then(|f| {
                let size = f.metadata()?.len();
                Ok((sha256_stream(f)?, size))
            }) {
                Ok(v) => v,
                Err(e) => {
                    out.skipped.push((file.clone(), format!("unreadable: {e}")));
                    continue;
                }
            };
            let hash_hex = hex::encode(hash);
            if seen.contains(&key, &hash_hex) {
                continue;
            }
            let signature = match variant {
                DigestVariant::Plain => None,
                DigestVariant::Signed => match read_sidecar(&file) {
                    Ok(s) => Some(s),
                    Err(reason) => {
                        out.skipped.push((file.clone(), reason));
                        continue;
                    }
                },
            };
            let evidence = match File::open(&file) {
                Ok(f) => f,
                Err(e) => {
                    out.skipped.push((file.clone(), format!("unreadable: {e}")));
                    continue;
                }
            };
            match store.ingest(user, evidence, day, signature.as_ref()) {
                Ok(receipt) => {
                    seen.record(SeenEntry {
                        path: key,
                        size,
                        sha256: hash_hex,
                    })?;
                    out.receipts.push(receipt);
                }
                Err(StoreError::InvalidUserSignature(_)) => {
                    out.skipped
                        .push((file.clone(), "signature does not verify".into()));
                }
                Err(StoreError::Io(e)) => {
                    out.skipped.push((file.clone(), format!("unreadable: {e}")));
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

/// Calls `poll` every `interval` until `stop` is set. A poll in progress is
/// always allowed to finish.
pub fn watch_loop<E>(
    interval: Duration,
    stop: &AtomicBool,
    mut poll: impl FnMut() -> Result<(), E>,
) -> Result<(), E> {
    let tick = Duration::from_millis(20).min(interval.max(Duration::from_millis(1)));
    while !stop.load(Ordering::SeqCst) {
        let started = Instant::now();
        poll()?;
        while started.elapsed() < interval {
            if stop.load(Ordering::SeqCst) {
                return Ok(());
            }
            std::thread::sleep(tick);
        }
    }
    Ok(())
}
