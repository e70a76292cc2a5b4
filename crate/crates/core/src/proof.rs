//! Daily signed commitments to filter snapshots and the public feed.
//!
//! A feed record is one canonical JSON object per line:
//!
//! ```text
//! {"day":3,"epoch":0,"filter_hash":"…","hash_alg":"sha256","sig":"…","sig_alg":"ed25519","t":"…","user":"alice@example.org"}
//! ```
//!
//! The signature covers the same object without `sig` and `t`, so a record
//! is bound to its user, day and epoch and cannot be replayed elsewhere.

use std::collections::BTreeSet;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::evidence::{
    sha256, sign_commitment, verify_commitment, CspKeyPair, Signature, UserId, VerificationKey,
    DIGEST_LEN, HASH_ALG, SIG_ALG,
};
use crate::store::{DayIndex, FilterStore, StoreError};

pub const FEED_FILE: &str = "feed.jsonl";
pub const FEED_PUB_FILE: &str = "feed.pub";

#[derive(Debug, Error)]
pub enum ProofError {
    #[error("no snapshot of {user} for day {day}")]
    MissingSnapshot { user: String, day: DayIndex },
    #[error("no feed record for {user} on day {day}")]
    MissingRecord { user: String, day: DayIndex },
    #[error("feed line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("feed i/o: {0}")]
    Io(#[from] io::Error),
}

/// One published commitment: `<H(snapshot), signature, t>` plus the fields
/// the signature binds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DailyProof {
    pub user: String,
    pub day: DayIndex,
    pub epoch: u64,
    pub hash_alg: String,
    pub sig_alg: String,
    pub filter_hash: [u8; DIGEST_LEN],
    pub sig: Signature,
    /// Display-only wall-clock time; not signed.
    pub t: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireRecord {
    user: String,
    day: DayIndex,
    epoch: u64,
    hash_alg: String,
    sig_alg: String,
    filter_hash: String,
    sig: String,
    t: String,
}

#[derive(Serialize)]
struct Preimage<'a> {
    user: &'a str,
    day: DayIndex,
    epoch: u64,
    hash_alg: &'a str,
    sig_alg: &'a str,
    filter_hash: String,
}

impl DailyProof {
    /// Builds and signs a record for a snapshot.
    pub fn sign(
        user: &UserId,
        day: DayIndex,
        epoch: u64,
        snapshot: &[u8],
        key: &CspKeyPair,
        t: impl Into<String>,
    ) -> Self {
        let mut record = Self {
            user: user.to_string(),
            day,
            epoch,
            hash_alg: HASH_ALG.to_string(),
            sig_alg: SIG_ALG.to_string(),
            filter_hash: sha256(snapshot),
            sig: Signature::from_bytes([0; 64]),
            t: t.into(),
        };
        record.sig = sign_commitment(&record.preimage(), key);
        record
    }

    /// Canonical bytes the CSP signs.
    pub fn preimage(&self) -> Vec<u8> {
        let p = Preimage {
            user: &self.user,
            day: self.day,
            epoch: self.epoch,
            hash_alg: &self.hash_alg,
            sig_alg: &self.sig_alg,
            filter_hash: hex::encode(self.filter_hash),
        };
        canonical::to_string(&p)
            .expect("preimage serializes")
            .into_bytes()
    }

    pub fn to_line(&self) -> String {
        let w = WireRecord {
            user: self.user.clone(),
            day: self.day,
            epoch: self.epoch,
            hash_alg: self.hash_alg.clone(),
            sig_alg: self.sig_alg.clone(),
            filter_hash: hex::encode(self.filter_hash),
            sig: self.sig.to_hex(),
            t: self.t.clone(),
        };
        canonical::to_string(&w).expect("record serializes")
    }

    /// Canonical line with `t` blanked, for determinism comparisons.
    pub fn to_line_without_time(&self) -> String {
        Self {
            t: String::new(),
            ..self.clone()
        }
        .to_line()
    }

    pub fn from_line(line: &str) -> Result<Self, String> {
        let w: WireRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let filter_hash: [u8; DIGEST_LEN] = hex::decode(&w.filter_hash)
            .map_err(|e| format!("filter_hash: {e}"))?
            .try_into()
            .map_err(|_| "filter_hash must be 32 bytes".to_string())?;
        let sig = Signature::from_hex(&w.sig).map_err(|e| format!("sig: {e}"))?;
        if w.filter_hash != w.filter_hash.to_lowercase() || w.sig != w.sig.to_lowercase() {
            return Err("hex fields must be lowercase".into());
        }
        Ok(Self {
            user: w.user,
            day: w.day,
            epoch: w.epoch,
            hash_alg: w.hash_alg,
            sig_alg: w.sig_alg,
            filter_hash,
            sig,
            t: w.t,
        })
    }
}

/// True iff the CSP signature verifies over the record's canonical preimage
/// and the record names algorithms this build understands.
pub fn verify_feed_record(record: &DailyProof, csp_pub: &VerificationKey) -> bool {
    check_feed_record(record, csp_pub).is_ok()
}

/// Like [`verify_feed_record`] but says why a record is rejected.
pub fn check_feed_record(record: &DailyProof, csp_pub: &VerificationKey) -> Result<(), String> {
    if record.hash_alg != HASH_ALG {
        return Err(format!("unsupported hash_alg {:?}", record.hash_alg));
    }
    if record.sig_alg != SIG_ALG {
        return Err(format!("unsupported sig_alg {:?}", record.sig_alg));
    }
    if !verify_commitment(&record.preimage(), &record.sig, csp_pub) {
        return Err("signature does not verify under the CSP key".into());
    }
    Ok(())
}

/// Parses and verifies one raw feed line.
pub fn check_feed_line(line: &str, csp_pub: &VerificationKey) -> Result<DailyProof, String> {
    let record = DailyProof::from_line(line)?;
    check_feed_record(&record, csp_pub)?;
    Ok(record)
}

/// Append-only feed file.
#[derive(Debug, Clone)]
pub struct ProofFeed {
    path: PathBuf,
}

impl ProofFeed {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    /// Feed in the standard location inside a state directory.
    pub fn in_dir(dir: &Path) -> Self {
        Self::new(dir.join(FEED_FILE))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Detached public key published next to the feed.
    pub fn public_key_path(&self) -> PathBuf {
        self.path.with_file_name(FEED_PUB_FILE)
    }

    pub fn publish_public_key(&self, key: &VerificationKey) -> io::Result<()> {
        fs::write(self.public_key_path(), key.to_pem())
    }

    pub fn records(&self) -> Result<Vec<DailyProof>, ProofError> {
        let text = match fs::read_to_string(&self.path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        parse_feed(&text)
    }

    pub fn append(&self, records: &[DailyProof]) -> Result<(), ProofError> {
        if records.is_empty() {
            return Ok(());
        }
        let mut buf = String::new();
        for r in records {
            buf.push_str(&r.to_line());
            buf.push('\n');
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?;
        f.write_all(buf.as_bytes())?;
        f.sync_all()?;
        Ok(())
    }
}

pub fn parse_feed(text: &str) -> Result<Vec<DailyProof>, ProofError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            DailyProof::from_line(l).map_err(|reason| ProofError::Malformed {
                line: i + 1,
                reason,
            })
        })
        .collect()
}

/// The record of `(user, day)` for the newest epoch, i.e. the daily cut.
pub fn find_record<'a>(feed: &'a [DailyProof], user: &str, day: DayIndex) -> Option<&'a DailyProof> {
    feed.iter()
        .filter(|r| r.user == user && r.day == day)
        .max_by_key(|r| r.epoch)
}

/// Signs and appends the records of every user for `day`: one for the open
/// epoch, plus one per epoch that closed that day with a final snapshot.
/// Records already in the feed are skipped, so a repeated call appends
/// nothing.
pub fn publish_day(
    store: &FilterStore,
    feed: &ProofFeed,
    key: &CspKeyPair,
    day: DayIndex,
    t: &str,
) -> Result<usize, ProofError> {
    let published: BTreeSet<(String, DayIndex, u64)> = feed
        .records()?
        .into_iter()
        .map(|r| (r.user, r.day, r.epoch))
        .collect();
    let mut fresh = Vec::new();
    for user in store.users() {
        let record = store.user_record(user)?;
        if !record.open_epoch().snapshot_days.contains(&day) {
            return Err(ProofError::MissingSnapshot {
                user: user.to_string(),
                day,
            });
        }
        // Epochs closed on `day` may carry a final snapshot of that day too.
        for epoch in record.epochs.iter().filter(|e| e.snapshot_days.contains(&day)) {
            if published.contains(&(user.to_string(), day, epoch.epoch_seq)) {
                continue;
            }
            let bytes = store.snapshot(user, epoch.epoch_seq, day)?;
            fresh.push(DailyProof::sign(user, day, epoch.epoch_seq, &bytes, key, t));
        }
    }
    feed.append(&fresh)?;
    Ok(fresh.len())
}

/// The daily cut: snapshot every user, then publish.
pub fn end_of_day(
    store: &mut FilterStore,
    feed: &ProofFeed,
    key: &CspKeyPair,
    day: DayIndex,
    t: &str,
) -> Result<usize, ProofError> {
    store.snapshot_all(day)?;
    publish_day(store, feed, key, day, t)
}

/// Result of revealing a snapshot against a published record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditReveal {
    pub snapshot: Vec<u8>,
    pub record: DailyProof,
    pub hash_matches: bool,
}

/// Reveals the stored snapshot for `(user, day)` and checks it against the
/// record in `feed` (typically a copy held by the court, not the CSP's own).
pub fn audit_reveal(
    store: &FilterStore,
    feed: &[DailyProof],
    user: &UserId,
    day: DayIndex,
) -> Result<AuditReveal, ProofError> {
    let record = find_record(feed, user.as_str(), day)
        .ok_or_else(|| ProofError::MissingRecord {
            user: user.to_string(),
            day,
        })?
        .clone();
    let snapshot = store
        .snapshot(user, record.epoch, day)
        .map_err(|e| match e {
            StoreError::MissingSnapshot { user, day } => ProofError::MissingSnapshot { user, day },
            other => other.into(),
        })?;
    let hash_matches = sha256(&snapshot) == record.filter_hash;
    Ok(AuditReveal {
        snapshot,
        record,
        hash_matches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloom::params_for;
    use crate::evidence::DigestVariant;
    use crate::store::RotationPolicy;

    fn key() -> CspKeyPair {
        CspKeyPair::from_seed([42; 32])
    }

    fn setup(users: &[&str]) -> (tempfile::TempDir, FilterStore, ProofFeed) {
        let dir = tempfile::tempdir().unwrap();
        let mut store = FilterStore::open(dir.path()).unwrap();
        for u in users {
            store
                .register_user(
                    &UserId::new(*u).unwrap(),
                    params_for(16, 0.01).unwrap(),
                    RotationPolicy::Capacity,
                    DigestVariant::Plain,
                    None,
                    0,
                )
                .unwrap();
        }
        let feed = ProofFeed::in_dir(dir.path());
        (dir, store, feed)
    }

    #[test]
    fn publish_is_idempotent_per_day() {
        let (_d, mut store, feed) = setup(&["a@x", "b@x", "c@x"]);
        assert_eq!(end_of_day(&mut store, &feed, &key(), 0, "t0").unwrap(), 3);
        assert_eq!(publish_day(&store, &feed, &key(), 0, "t0").unwrap(), 0);
        let records = feed.records().unwrap();
        assert_eq!(records.len(), 3);
        let pubk = key().verification_key();
        assert!(records.iter().all(|r| verify_feed_record(r, &pubk)));
    }

    #[test]
    fn publish_requires_snapshot() {
        let (_d, store, feed) = setup(&["a@x"]);
        assert!(matches!(
            publish_day(&store, &feed, &key(), 0, "t"),
            Err(ProofError::MissingSnapshot { .. })
        ));
    }

    #[test]
    fn tampered_records_fail() {
        let (_d, mut store, feed) = setup(&["a@x"]);
        end_of_day(&mut store, &feed, &key(), 0, "t").unwrap();
        let r = feed.records().unwrap().remove(0);
        let pubk = key().verification_key();
        assert!(verify_feed_record(&r, &pubk));

        let mut bad = r.clone();
        bad.filter_hash[0] ^= 1;
        assert!(!verify_feed_record(&bad, &pubk));
        let mut bad = r.clone();
        bad.day = 1;
        assert!(!verify_feed_record(&bad, &pubk));
        let mut bad = r.clone();
        bad.user = "b@x".into();
        assert!(!verify_feed_record(&bad, &pubk));
        let other = CspKeyPair::from_seed([43; 32]).verification_key();
        assert!(!verify_feed_record(&r, &other));
        let mut unsigned_t = r.clone();
        unsigned_t.t = "whenever".into();
        assert!(verify_feed_record(&unsigned_t, &pubk));
        let mut alg = r;
        alg.hash_alg = "sha1".into();
        assert!(check_feed_record(&alg, &pubk).unwrap_err().contains("hash_alg"));
    }

    #[test]
    fn line_format_is_canonical() {
        let u = UserId::new("a@x").unwrap();
        let r = DailyProof::sign(&u, 2, 0, b"snapshot", &key(), "2026-01-01T00:00:00Z");
        let line = r.to_line();
        let keys: Vec<&str> = ["\"day\"", "\"epoch\"", "\"filter_hash\"", "\"hash_alg\"", "\"sig\"", "\"sig_alg\"", "\"t\"", "\"user\""]
            .to_vec();
        let mut last = 0;
        for k in keys {
            let at = line.find(k).unwrap();
            assert!(at >= last, "{k} out of order in {line}");
            last = at;
        }
        assert_eq!(DailyProof::from_line(&line).unwrap(), r);
        assert!(DailyProof::from_line(&line.replace("\"t\"", "\"x\"")).is_err());
        assert!(check_feed_line("{not json", &key().verification_key()).is_err());
    }

    #[test]
    fn audit_detects_substituted_snapshot() {
        let (_d, mut store, feed) = setup(&["a@x"]);
        let u = UserId::new("a@x").unwrap();
        store.ingest(&u, &b"doc"[..], 0, None).unwrap();
        end_of_day(&mut store, &feed, &key(), 0, "t").unwrap();
        let court = feed.records().unwrap();
        let honest = audit_reveal(&store, &court, &u, 0).unwrap();
        assert!(honest.hash_matches);

        let path = store.snapshot_path(&u, 0, 0);
        let mut bytes = fs::read(&path).unwrap();
        *bytes.last_mut().unwrap() ^= 0x01;
        fs::write(&path, bytes).unwrap();
        assert!(!audit_reveal(&store, &court, &u, 0).unwrap().hash_matches);
        assert!(matches!(
            audit_reveal(&store, &court, &u, 5),
            Err(ProofError::MissingRecord { .. })
        ));
    }

    #[test]
    fn feed_carries_no_snapshot_material() {
        let (_d, mut store, feed) = setup(&["a@x"]);
        let u = UserId::new("a@x").unwrap();
        let receipt = store.ingest(&u, &b"secret contents"[..], 0, None).unwrap();
        end_of_day(&mut store, &feed, &key(), 0, "t").unwrap();
        let text = fs::read_to_string(feed.path()).unwrap();
        let snap = store.snapshot(&u, 0, 0).unwrap();
        assert!(!text.contains(&hex::encode(&snap[crate::bloom::SNAPSHOT_HEADER_LEN..])));
        assert!(!text.contains(&receipt.digest.to_hex()));
        assert!(!text.contains("secret contents"));
        assert!(!text.contains("PRIVATE"));
    }
}
