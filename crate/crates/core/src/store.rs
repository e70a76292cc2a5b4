//! Per-user filter lifecycle on disk.
//!
//! Layout under the store root:
//!
//! ```text
//! users/<encoded-user>/meta.json
//! users/<encoded-user>/epochs/<seq>/current.bf
//! users/<encoded-user>/epochs/<seq>/snapshots/<day>.bf
//! ingest-log.jsonl
//! ```
//!
//! Snapshots are written once with `create_new` and never touched again.
//! Every mutation is appended to `ingest-log.jsonl`, which [`replay_log`]
//! can feed into an empty store to rebuild it.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bloom::{BloomError, BloomFilter, BloomParams};
use crate::canonical;
use crate::evidence::{
    digest_plain, digest_signed, verify_user_signature, DigestVariant, EvidenceDigest, KeyError,
    Signature, UserId, VerificationKey,
};

/// Logical day number.
pub type DayIndex = u64;

pub const LOG_FILE: &str = "ingest-log.jsonl";
const USER_DIR_SET: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'_').remove(b'@');

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("user {0} is already registered")]
    DuplicateUser(String),
    #[error("unknown user {0}")]
    UnknownUser(String),
    #[error("user {0} uses the signed variant; a user signature is required")]
    SignatureRequired(String),
    #[error("user {0} uses the plain variant; signatures are not accepted")]
    UnexpectedSignature(String),
    #[error("signature does not verify under the registered key of {0}")]
    InvalidUserSignature(String),
    #[error("signed variant requires a user verification key")]
    MissingUserKey,
    #[error("digest variant {got} does not match user variant {expected}")]
    VariantMismatch {
        expected: DigestVariant,
        got: DigestVariant,
    },
    #[error("day {day} was already snapshotted for {user}")]
    DoubleSnapshot { user: String, day: DayIndex },
    #[error("day {day} is not after the last snapshot day {last} of {user}")]
    ClockRewound {
        user: String,
        day: DayIndex,
        last: DayIndex,
    },
    #[error("no snapshot of {user} for day {day}")]
    MissingSnapshot { user: String, day: DayIndex },
    #[error("invalid rotation policy: {0}")]
    InvalidPolicy(String),
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Bloom(#[from] BloomError),
    #[error(transparent)]
    Key(#[from] KeyError),
    #[error("store i/o: {0}")]
    Io(#[from] io::Error),
}

/// When a user's filter is replaced by a fresh empty one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum RotationPolicy {
    /// Rotate before an insert that would exceed `n_expected`.
    Capacity,
    /// Rotate once the open epoch is `period_days` old.
    Periodic { period_days: u64 },
}

impl RotationPolicy {
    pub fn periodic(period_days: u64) -> Result<Self, StoreError> {
        if period_days == 0 {
            return Err(StoreError::InvalidPolicy("period_days must be >= 1".into()));
        }
        Ok(RotationPolicy::Periodic { period_days })
    }

    /// Period of `ceil(n / w)` periods of `days_per_period` days, for a user
    /// creating `files_per_period` (`w`) files per period.
    pub fn periodic_from_rate(
        n_expected: u64,
        files_per_period: f64,
        days_per_period: u64,
    ) -> Result<Self, StoreError> {
        if !(files_per_period > 0.0 && files_per_period.is_finite()) {
            return Err(StoreError::InvalidPolicy(
                "files_per_period must be positive".into(),
            ));
        }
        let periods = (n_expected as f64 / files_per_period).ceil().max(1.0) as u64;
        Self::periodic(periods.saturating_mul(days_per_period))
    }
}

/// Metadata of one filter lifetime. Covers days `[start_day, end_day)`;
/// a closed epoch that gained entries on its last day also carries a
/// final snapshot dated `end_day`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterEpoch {
    pub epoch_seq: u64,
    pub start_day: DayIndex,
    pub end_day: Option<DayIndex>,
    pub snapshot_days: BTreeSet<DayIndex>,
}

impl FilterEpoch {
    pub fn is_open(&self) -> bool {
        self.end_day.is_none()
    }

    fn intersects(&self, range: &RangeInclusive<DayIndex>) -> bool {
        self.start_day <= *range.end()
            && self.end_day.is_none_or(|end| {
                end > *range.start() || (end == *range.start() && self.snapshot_days.contains(&end))
            })
    }
}

/// Persisted per-user state (`meta.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user: String,
    pub params: BloomParams,
    pub policy: RotationPolicy,
    pub variant: DigestVariant,
    pub user_pub: Option<String>,
    pub epochs: Vec<FilterEpoch>,
    pub last_snapshot_day: Option<DayIndex>,
}

impl UserRecord {
    pub fn open_epoch(&self) -> &FilterEpoch {
        self.epochs.last().expect("a registered user always has an epoch")
    }

    pub fn user_key(&self) -> Result<Option<VerificationKey>, KeyError> {
        self.user_pub.as_deref().map(VerificationKey::from_hex).transpose()
    }

    /// Newest epoch whose snapshot set contains `day`.
    pub fn epoch_for_snapshot(&self, day: DayIndex) -> Option<&FilterEpoch> {
        self.epochs.iter().rev().find(|e| e.snapshot_days.contains(&day))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestReceipt {
    pub user: String,
    pub day: DayIndex,
    pub epoch_seq: u64,
    #[serde(serialize_with = "digest_hex")]
    pub digest: EvidenceDigest,
    pub rotated: bool,
}

fn digest_hex<S: serde::Serializer>(d: &EvidenceDigest, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&d.to_hex())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotEntry {
    pub user: UserId,
    pub epoch_seq: u64,
    pub day: DayIndex,
    pub bytes: Vec<u8>,
}

/// One line of the ingestion log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum LogEntry {
    Register {
        user: String,
        day: DayIndex,
        params: BloomParams,
        policy: RotationPolicy,
        variant: DigestVariant,
        user_pub: Option<String>,
    },
    Ingest {
        user: String,
        day: DayIndex,
        digest: String,
        variant: DigestVariant,
    },
    Snapshot {
        day: DayIndex,
    },
}

struct UserState {
    record: UserRecord,
    filter: BloomFilter,
}

pub struct FilterStore {
    root: PathBuf,
    users: BTreeMap<UserId, UserState>,
}

impl std::fmt::Debug for FilterStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FilterStore")
            .field("root", &self.root)
            .field("users", &self.users.len())
            .finish()
    }
}

/// Snapshots are write-once.
fn write_snapshot(path: &Path, bytes: &[u8]) -> io::Result<()> {
    fs::create_dir_all(path.parent().expect("snapshot dir"))?;
    let mut f = OpenOptions::new().write(true).create_new(true).open(path)?;
    f.write_all(bytes)?;
    f.sync_all()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
    }
    fs::rename(tmp, path)
}

fn parse_user(s: &str) -> Result<UserId, StoreError> {
    UserId::new(s).map_err(|e| StoreError::Corrupt(format!("bad user id {s:?}: {e}")))
}

impl FilterStore {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        let users_dir = root.join("users");
        fs::create_dir_all(&users_dir)?;
        let mut users = BTreeMap::new();
        let mut dirs: Vec<_> = fs::read_dir(&users_dir)?
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .map(|e| e.path())
            .collect();
        dirs.sort();
        for dir in dirs {
            let meta = dir.join("meta.json");
            if !meta.is_file() {
                continue;
            }
            let record: UserRecord = serde_json::from_slice(&fs::read(&meta)?)
                .map_err(|e| StoreError::Corrupt(format!("{}: {e}", meta.display())))?;
            let user = parse_user(&record.user)?;
            let seq = record.open_epoch().epoch_seq;
            let current = dir.join("epochs").join(seq.to_string()).join("current.bf");
            let filter = BloomFilter::deserialize(&fs::read(&current)?)?;
            users.insert(user, UserState { record, filter });
        }
        Ok(Self { root, users })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn log_path(&self) -> PathBuf {
        self.root.join(LOG_FILE)
    }

    pub fn users(&self) -> impl Iterator<Item = &UserId> {
        self.users.keys()
    }

    pub fn user_record(&self, user: &UserId) -> Result<&UserRecord, StoreError> {
        self.users
            .get(user)
            .map(|s| &s.record)
            .ok_or_else(|| StoreError::UnknownUser(user.to_string()))
    }

    /// The open epoch's live filter.
    pub fn current_filter(&self, user: &UserId) -> Result<&BloomFilter, StoreError> {
        self.users
            .get(user)
            .map(|s| &s.filter)
            .ok_or_else(|| StoreError::UnknownUser(user.to_string()))
    }

    pub fn user_dir(&self, user: &UserId) -> PathBuf {
        let encoded = utf8_percent_encode(user.as_str(), USER_DIR_SET).to_string();
        self.root.join("users").join(encoded)
    }

    fn epoch_dir(&self, user: &UserId, seq: u64) -> PathBuf {
        self.user_dir(user).join("epochs").join(seq.to_string())
    }

    pub fn current_path(&self, user: &UserId, seq: u64) -> PathBuf {
        self.epoch_dir(user, seq).join("current.bf")
    }

    pub fn snapshot_path(&self, user: &UserId, seq: u64, day: DayIndex) -> PathBuf {
        self.epoch_dir(user, seq)
            .join("snapshots")
            .join(format!("{day}.bf"))
    }

    fn append_log(&self, entry: &LogEntry) -> Result<(), StoreError> {
        let line = canonical::to_string(entry).map_err(|e| StoreError::Corrupt(e.to_string()))?;
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.log_path())?;
        writeln!(f, "{line}")?;
        Ok(())
    }

    fn save_meta(&self, user: &UserId) -> Result<(), StoreError> {
        let state = &self.users[user];
        let json = serde_json::to_vec_pretty(&state.record)
            .map_err(|e| StoreError::Corrupt(e.to_string()))?;
        write_atomic(&self.user_dir(user).join("meta.json"), &json)?;
        Ok(())
    }

    fn save_current(&self, user: &UserId) -> Result<(), StoreError> {
        let state = &self.users[user];
        let seq = state.record.open_epoch().epoch_seq;
        let path = self.current_path(user, seq);
        fs::create_dir_all(path.parent().expect("epoch dir"))?;
        write_atomic(&path, &state.filter.serialize())?;
        Ok(())
    }

    pub fn register_user(
        &mut self,
        user: &UserId,
        params: BloomParams,
        policy: RotationPolicy,
        variant: DigestVariant,
        user_pub: Option<VerificationKey>,
        day: DayIndex,
    ) -> Result<&UserRecord, StoreError> {
        if self.users.contains_key(user) {
            return Err(StoreError::DuplicateUser(user.to_string()));
        }
        if let RotationPolicy::Periodic { period_days: 0 } = policy {
            return Err(StoreError::InvalidPolicy("period_days must be >= 1".into()));
        }
        if variant == DigestVariant::Signed && user_pub.is_none() {
            return Err(StoreError::MissingUserKey);
        }
        let record = UserRecord {
            user: user.to_string(),
            params,
            policy,
            variant,
            user_pub: user_pub.map(|k| k.to_hex()),
            epochs: vec![FilterEpoch {
                epoch_seq: 0,
                start_day: day,
                end_day: None,
                snapshot_days: BTreeSet::new(),
            }],
            last_snapshot_day: None,
        };
        let entry = LogEntry::Register {
            user: record.user.clone(),
            day,
            params,
            policy,
            variant,
            user_pub: record.user_pub.clone(),
        };
        fs::create_dir_all(self.user_dir(user))?;
        self.users.insert(
            user.clone(),
            UserState {
                record,
                filter: BloomFilter::new(params),
            },
        );
        self.save_current(user)?;
        self.save_meta(user)?;
        self.append_log(&entry)?;
        Ok(&self.users[user].record)
    }

    /// Digests `evidence` with the user's variant and inserts it.
    ///
    /// In the signed variant `signature` must be the user's signature over
    /// the evidence; it is checked against the registered key first.
    pub fn ingest(
        &mut self,
        user: &UserId,
        evidence: impl Read,
        day: DayIndex,
        signature: Option<&Signature>,
    ) -> Result<IngestReceipt, StoreError> {
        let record = self.user_record(user)?;
        let digest = match (record.variant, signature) {
            (DigestVariant::Plain, None) => digest_plain(evidence, user)?,
            (DigestVariant::Plain, Some(_)) => {
                return Err(StoreError::UnexpectedSignature(user.to_string()))
            }
            (DigestVariant::Signed, None) => {
                return Err(StoreError::SignatureRequired(user.to_string()))
            }
            (DigestVariant::Signed, Some(sig)) => {
                let key = record.user_key()?.ok_or(StoreError::MissingUserKey)?;
                if !verify_user_signature(evidence, sig, &key)? {
                    return Err(StoreError::InvalidUserSignature(user.to_string()));
                }
                digest_signed(sig, user)
            }
        };
        self.ingest_digest(user, digest, day)
    }

    /// Closes the open epoch on `day` and opens a fresh one. If the closing
    /// filter gained entries since its last daily cut, it is snapshotted
    /// under `day` one final time so those entries still get published.
    fn close_epoch(
        &mut self,
        user: &UserId,
        seq: u64,
        last_cut: Option<DayIndex>,
        day: DayIndex,
    ) -> Result<(), StoreError> {
        let cut_count = match last_cut {
            Some(d) => BloomFilter::deserialize(&self.snapshot(user, seq, d)?)?.inserted_count(),
            None => 0,
        };
        let path = self.snapshot_path(user, seq, day);
        let state = self.users.get_mut(user).expect("known user");
        let epoch = state.record.epochs.last_mut().expect("open epoch");
        if state.filter.inserted_count() > cut_count {
            write_snapshot(&path, &state.filter.serialize())?;
            epoch.snapshot_days.insert(day);
        }
        epoch.end_day = Some(day);
        state.record.epochs.push(FilterEpoch {
            epoch_seq: seq + 1,
            start_day: day,
            end_day: None,
            snapshot_days: BTreeSet::new(),
        });
        state.filter = BloomFilter::new(state.record.params);
        Ok(())
    }

    /// Inserts a precomputed digest, applying the rotation check first.
    pub fn ingest_digest(
        &mut self,
        user: &UserId,
        digest: EvidenceDigest,
        day: DayIndex,
    ) -> Result<IngestReceipt, StoreError> {
        let state = self
            .users
            .get_mut(user)
            .ok_or_else(|| StoreError::UnknownUser(user.to_string()))?;
        if digest.variant() != state.record.variant {
            return Err(StoreError::VariantMismatch {
                expected: state.record.variant,
                got: digest.variant(),
            });
        }
        if let Some(last) = state.record.last_snapshot_day {
            if day <= last {
                return Err(StoreError::ClockRewound {
                    user: user.to_string(),
                    day,
                    last,
                });
            }
        }
        let open = state.record.open_epoch();
        if day < open.start_day {
            return Err(StoreError::ClockRewound {
                user: user.to_string(),
                day,
                last: open.start_day,
            });
        }
        let rotate = match state.record.policy {
            RotationPolicy::Capacity => {
                state.filter.inserted_count() + 1 > state.record.params.n_expected
            }
            RotationPolicy::Periodic { period_days } => day - open.start_day >= period_days,
        };
        if rotate {
            let closing = open.epoch_seq;
            let last_cut = open.snapshot_days.last().copied();
            self.close_epoch(user, closing, last_cut, day)?;
        }
        let state = self.users.get_mut(user).expect("checked above");
        state.filter.insert(&digest);
        let epoch_seq = state.record.open_epoch().epoch_seq;
        self.save_current(user)?;
        if rotate {
            self.save_meta(user)?;
        }
        self.append_log(&LogEntry::Ingest {
            user: user.to_string(),
            day,
            digest: digest.to_hex(),
            variant: digest.variant(),
        })?;
        Ok(IngestReceipt {
            user: user.to_string(),
            day,
            epoch_seq,
            digest,
            rotated: rotate,
        })
    }

    /// Records the open filter of every user as that user's snapshot for `day`.
    pub fn snapshot_all(&mut self, day: DayIndex) -> Result<Vec<SnapshotEntry>, StoreError> {
        for (user, state) in &self.users {
            if let Some(last) = state.record.last_snapshot_day {
                if last == day {
                    return Err(StoreError::DoubleSnapshot {
                        user: user.to_string(),
                        day,
                    });
                }
                if last > day {
                    return Err(StoreError::ClockRewound {
                        user: user.to_string(),
                        day,
                        last,
                    });
                }
            }
        }
        let users: Vec<UserId> = self.users.keys().cloned().collect();
        let mut out = Vec::with_capacity(users.len());
        for user in users {
            let state = self.users.get_mut(&user).expect("listed user");
            let bytes = state.filter.serialize();
            let epoch = state.record.epochs.last_mut().expect("open epoch");
            epoch.snapshot_days.insert(day);
            let epoch_seq = epoch.epoch_seq;
            state.record.last_snapshot_day = Some(day);
            write_snapshot(&self.snapshot_path(&user, epoch_seq, day), &bytes)?;
            self.save_meta(&user)?;
            out.push(SnapshotEntry {
                user,
                epoch_seq,
                day,
                bytes,
            });
        }
        self.append_log(&LogEntry::Snapshot { day })?;
        Ok(out)
    }

    /// Epochs of `user` intersecting `range`, oldest first.
    pub fn get_epochs(
        &self,
        user: &UserId,
        range: Option<RangeInclusive<DayIndex>>,
    ) -> Result<Vec<FilterEpoch>, StoreError> {
        let record = self.user_record(user)?;
        Ok(record
            .epochs
            .iter()
            .filter(|e| range.as_ref().is_none_or(|r| e.intersects(r)))
            .cloned()
            .collect())
    }

    /// Reads the stored snapshot of `user` for `day` in epoch `epoch_seq`.
    pub fn snapshot(
        &self,
        user: &UserId,
        epoch_seq: u64,
        day: DayIndex,
    ) -> Result<Vec<u8>, StoreError> {
        let path = self.snapshot_path(user, epoch_seq, day);
        fs::read(&path).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => StoreError::MissingSnapshot {
                user: user.to_string(),
                day,
            },
            _ => StoreError::Io(e),
        })
    }

    /// Every stored snapshot path, sorted.
    pub fn snapshot_files(&self) -> Result<Vec<PathBuf>, StoreError> {
        let mut out = Vec::new();
        for (user, state) in &self.users {
            for epoch in &state.record.epochs {
                for day in &epoch.snapshot_days {
                    out.push(self.snapshot_path(user, epoch.epoch_seq, *day));
                }
            }
        }
        out.sort();
        Ok(out)
    }
}

/// Reads the ingestion log at `path`.
pub fn read_log(path: &Path) -> Result<Vec<LogEntry>, StoreError> {
    let f = File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line)
            .map_err(|e| StoreError::Corrupt(format!("log line {}: {e}", i + 1)))?;
        out.push(entry);
    }
    Ok(out)
}

/// Applies `entries` to `store`. `on_snapshot` runs after each replayed
/// daily cut, so callers can republish the day.
pub fn replay_log(
    store: &mut FilterStore,
    entries: &[LogEntry],
    mut on_snapshot: impl FnMut(&mut FilterStore, DayIndex) -> Result<(), StoreError>,
) -> Result<(), StoreError> {
    for entry in entries {
        match entry {
            LogEntry::Register {
                user,
                day,
                params,
                policy,
                variant,
                user_pub,
            } => {
                let key = user_pub
                    .as_deref()
                    .map(VerificationKey::from_hex)
                    .transpose()?;
                store.register_user(&parse_user(user)?, *params, *policy, *variant, key, *day)?;
            }
            LogEntry::Ingest {
                user,
                day,
                digest,
                variant,
            } => {
                let digest = EvidenceDigest::from_hex(digest, *variant)
                    .ok_or_else(|| StoreError::Corrupt(format!("bad digest {digest:?}")))?;
                store.ingest_digest(&parse_user(user)?, digest, *day)?;
            }
            LogEntry::Snapshot { day } => {
                store.snapshot_all(*day)?;
                on_snapshot(store, *day)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloom::params_for;
    use crate::evidence::{user_sign, UserKeyPair};

    fn user(s: &str) -> UserId {
        UserId::new(s).unwrap()
    }

    fn store() -> (tempfile::TempDir, FilterStore) {
        let dir = tempfile::tempdir().unwrap();
        let s = FilterStore::open(dir.path().join("state")).unwrap();
        (dir, s)
    }

    fn plain(s: &mut FilterStore, u: &UserId, policy: RotationPolicy, n: u64) {
        s.register_user(u, params_for(n, 0.01).unwrap(), policy, DigestVariant::Plain, None, 0)
            .unwrap();
    }

    #[test]
    fn duplicate_and_unknown_users() {
        let (_d, mut s) = store();
        let u = user("a@x");
        plain(&mut s, &u, RotationPolicy::Capacity, 10);
        assert!(matches!(
            s.register_user(&u, params_for(10, 0.01).unwrap(), RotationPolicy::Capacity, DigestVariant::Plain, None, 0),
            Err(StoreError::DuplicateUser(_))
        ));
        assert!(matches!(
            s.ingest(&user("nobody"), &b"f"[..], 0, None),
            Err(StoreError::UnknownUser(_))
        ));
        assert!(matches!(s.get_epochs(&user("nobody"), None), Err(StoreError::UnknownUser(_))));
    }

    #[test]
    fn capacity_rotation_trace() {
        let (_d, mut s) = store();
        let u = user("cap@x");
        s.register_user(&u, BloomParams::new(2, 64, 3).unwrap(), RotationPolicy::Capacity, DigestVariant::Plain, None, 0)
            .unwrap();
        let r: Vec<_> = [&b"one"[..], b"two", b"three"]
            .iter()
            .map(|f| s.ingest(&u, *f, 0, None).unwrap())
            .collect();
        assert_eq!(r.iter().map(|r| r.epoch_seq).collect::<Vec<_>>(), vec![0, 0, 1]);
        assert!(r[2].rotated);
        let epochs = s.get_epochs(&u, None).unwrap();
        assert_eq!(epochs.len(), 2);
        assert_eq!(epochs[0].end_day, Some(0));
        assert_eq!(s.current_filter(&u).unwrap().inserted_count(), 1);
    }

    #[test]
    fn periodic_rotation_trace() {
        let (_d, mut s) = store();
        let u = user("per@x");
        plain(&mut s, &u, RotationPolicy::periodic(5).unwrap(), 100);
        let seqs: Vec<u64> = [0, 4, 5]
            .iter()
            .map(|&day| s.ingest(&u, &format!("f{day}").into_bytes()[..], day, None).unwrap().epoch_seq)
            .collect();
        assert_eq!(seqs, vec![0, 0, 1]);
    }

    #[test]
    fn periodic_from_rate_uses_ceiling() {
        assert_eq!(
            RotationPolicy::periodic_from_rate(1000, 300.0, 30).unwrap(),
            RotationPolicy::Periodic { period_days: 120 }
        );
        assert!(RotationPolicy::periodic(0).is_err());
        assert!(RotationPolicy::periodic_from_rate(10, 0.0, 30).is_err());
    }

    #[test]
    fn reingest_keeps_bits() {
        let (_d, mut s) = store();
        let u = user("dup@x");
        plain(&mut s, &u, RotationPolicy::Capacity, 10);
        s.ingest(&u, &b"same"[..], 0, None).unwrap();
        let bits = s.current_filter(&u).unwrap().bits().to_vec();
        s.ingest(&u, &b"same"[..], 0, None).unwrap();
        assert_eq!(s.current_filter(&u).unwrap().bits(), &bits[..]);
        assert_eq!(s.current_filter(&u).unwrap().inserted_count(), 2);
    }

    #[test]
    fn snapshots_are_append_only_and_guarded() {
        let (_d, mut s) = store();
        let u = user("snap@x");
        plain(&mut s, &u, RotationPolicy::Capacity, 10);
        s.ingest(&u, &b"a"[..], 0, None).unwrap();
        let snaps = s.snapshot_all(0).unwrap();
        assert_eq!(snaps.len(), 1);
        assert!(matches!(s.snapshot_all(0), Err(StoreError::DoubleSnapshot { .. })));
        assert!(matches!(
            s.ingest(&u, &b"late"[..], 0, None),
            Err(StoreError::ClockRewound { .. })
        ));
        // A day with no ingests still gets a snapshot.
        let day1 = s.snapshot_all(1).unwrap();
        assert_eq!(day1[0].bytes, snaps[0].bytes);
        assert_eq!(s.snapshot(&u, 0, 0).unwrap(), snaps[0].bytes);
        assert!(matches!(s.snapshot(&u, 0, 7), Err(StoreError::MissingSnapshot { .. })));
    }

    #[test]
    fn store_reopens_with_same_state() {
        let (dir, mut s) = store();
        let u = user("re@x");
        plain(&mut s, &u, RotationPolicy::Capacity, 2);
        for f in [&b"1"[..], b"2", b"3"] {
            s.ingest(&u, f, 0, None).unwrap();
        }
        s.snapshot_all(0).unwrap();
        let before = s.user_record(&u).unwrap().clone();
        let filter = s.current_filter(&u).unwrap().clone();
        drop(s);
        let s = FilterStore::open(dir.path().join("state")).unwrap();
        assert_eq!(s.user_record(&u).unwrap(), &before);
        assert_eq!(s.current_filter(&u).unwrap(), &filter);
    }

    #[test]
    fn signed_variant_checks_signature() {
        let (_d, mut s) = store();
        let u = user("signer@x");
        let key = UserKeyPair::from_seed([8; 32]);
        let other = UserKeyPair::from_seed([9; 32]);
        s.register_user(&u, params_for(10, 0.01).unwrap(), RotationPolicy::Capacity, DigestVariant::Signed, Some(key.verification_key()), 0)
            .unwrap();
        assert!(matches!(s.ingest(&u, &b"f"[..], 0, None), Err(StoreError::SignatureRequired(_))));
        let bad = user_sign(&b"f"[..], &other).unwrap();
        assert!(matches!(
            s.ingest(&u, &b"f"[..], 0, Some(&bad)),
            Err(StoreError::InvalidUserSignature(_))
        ));
        let good = user_sign(&b"f"[..], &key).unwrap();
        let r = s.ingest(&u, &b"f"[..], 0, Some(&good)).unwrap();
        assert_eq!(r.digest, digest_signed(&good, &u));
        let plain_digest = digest_plain(&b"f"[..], &u).unwrap();
        assert!(matches!(
            s.ingest_digest(&u, plain_digest, 0),
            Err(StoreError::VariantMismatch { .. })
        ));
        assert!(matches!(
            s.register_user(&user("nokey@x"), params_for(10, 0.01).unwrap(), RotationPolicy::Capacity, DigestVariant::Signed, None, 0),
            Err(StoreError::MissingUserKey)
        ));
    }

    #[test]
    fn awkward_user_ids_stay_inside_the_store() {
        let (_d, mut s) = store();
        for id in ["..", "a/b", "x y", "."] {
            let u = user(id);
            plain(&mut s, &u, RotationPolicy::Capacity, 4);
            assert!(s.user_dir(&u).starts_with(s.root().join("users")));
            assert_ne!(s.user_dir(&u).file_name().unwrap(), "..");
        }
        assert_eq!(s.users().count(), 4);
    }

    #[test]
    fn replay_rebuilds_snapshots() {
        let (dir, mut s) = store();
        let u = user("log@x");
        plain(&mut s, &u, RotationPolicy::Capacity, 2);
        for day in 0..4u64 {
            s.ingest(&u, &day.to_be_bytes()[..], day, None).unwrap();
            s.snapshot_all(day).unwrap();
        }
        let entries = read_log(&s.log_path()).unwrap();
        let mut fresh = FilterStore::open(dir.path().join("fresh")).unwrap();
        let mut cuts = Vec::new();
        replay_log(&mut fresh, &entries, |_, d| {
            cuts.push(d);
            Ok(())
        })
        .unwrap();
        assert_eq!(cuts, vec![0, 1, 2, 3]);
        let a = s.snapshot_files().unwrap();
        let b = fresh.snapshot_files().unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
        }
        assert_eq!(fs::read(s.log_path()).unwrap(), fs::read(fresh.log_path()).unwrap());
    }
}
