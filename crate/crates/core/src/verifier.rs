//! Checking evidence against published daily commitments.
//!
//! A positive verdict needs the whole chain to hold: the feed record's CSP
//! signature, the revealed snapshot hashing to the record's `filter_hash`,
//! and all `k` bit positions of the evidence digest being set.
//!
//! Inside one epoch a filter only gains bits, so membership over that
//! epoch's snapshot days is monotone and can be binary-searched. Rotation
//! clears bits, so epochs are walked linearly, oldest first.

use std::collections::BTreeMap;
use std::io::Read;
use std::ops::RangeInclusive;

use serde::Serialize;
use thiserror::Error;

use crate::bloom::{BloomError, BloomFilter};
use crate::evidence::{
    digest_plain, digest_signed, sha256, verify_user_signature, DigestVariant, EvidenceDigest,
    KeyError, Signature, UserId, VerificationKey,
};
use crate::proof::{check_feed_record, DailyProof};
use crate::store::{DayIndex, FilterStore, StoreError};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("no published record for {user} on day {day}")]
    MissingRecord { user: String, day: DayIndex },
    #[error("conflicting feed records for {user} on day {day}")]
    ConflictingRecords { user: String, day: DayIndex },
    #[error("record for {user} on day {day} is published but its snapshot is withheld")]
    SnapshotWithheld { user: String, day: DayIndex },
    #[error("snapshot of {user} for day {day} does not match the published hash")]
    AttestationMismatch { user: String, day: DayIndex },
    #[error("feed record for {user} on day {day} fails verification: {reason}")]
    RecordSignatureInvalid {
        user: String,
        day: DayIndex,
        reason: String,
    },
    #[error("user signature does not verify under the registered key of {0}")]
    InvalidUserSignature(String),
    #[error("user {0} uses the signed variant; the evidence signature is required")]
    SignatureRequired(String),
    #[error("digest variant {got} does not match the user's variant {expected}")]
    VariantMismatch {
        expected: DigestVariant,
        got: DigestVariant,
    },
    #[error("empty day range {start}..={end}")]
    EmptyRange { start: DayIndex, end: DayIndex },
    #[error("attested snapshot is malformed: {0}")]
    MalformedSnapshot(#[from] BloomError),
    #[error(transparent)]
    Store(StoreError),
    #[error(transparent)]
    Key(#[from] KeyError),
    #[error("evidence i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl From<StoreError> for VerifyError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Io(io) => VerifyError::Io(io),
            other => VerifyError::Store(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    pub verdict: Verdict,
    pub user: String,
    pub day: DayIndex,
    pub epoch_seq: u64,
    pub record: DailyProof,
    pub feed_signature_valid: bool,
}

impl MatchResult {
    pub fn is_positive(&self) -> bool {
        self.verdict == Verdict::Positive
    }
}

/// Days probed in one epoch during a search.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EpochProbe {
    pub epoch: u64,
    pub probed_days: Vec<DayIndex>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimelineResult {
    pub earliest_day: Option<DayIndex>,
    pub epoch_seq: Option<u64>,
    pub trace: Vec<EpochProbe>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RangeResult {
    pub present: bool,
    pub witness_day: Option<DayIndex>,
    pub trace: Vec<EpochProbe>,
}

/// Read-only view over a store, a copy of the feed and the CSP key.
pub struct Verifier<'a> {
    store: &'a FilterStore,
    feed: &'a [DailyProof],
    csp_pub: &'a VerificationKey,
}

impl<'a> Verifier<'a> {
    pub fn new(store: &'a FilterStore, feed: &'a [DailyProof], csp_pub: &'a VerificationKey) -> Self {
        Self {
            store,
            feed,
            csp_pub,
        }
    }

    /// Digest of `evidence` in the user's variant. In the signed variant
    /// the signature must verify under the user's registered key.
    pub fn digest(
        &self,
        evidence: impl Read,
        user: &UserId,
        signature: Option<&Signature>,
    ) -> Result<EvidenceDigest, VerifyError> {
        let record = self.store.user_record(user)?;
        match record.variant {
            DigestVariant::Plain => Ok(digest_plain(evidence, user)?),
            DigestVariant::Signed => {
                let sig = signature.ok_or_else(|| VerifyError::SignatureRequired(user.to_string()))?;
                let key = record
                    .user_key()?
                    .ok_or(VerifyError::Store(StoreError::MissingUserKey))?;
                if !verify_user_signature(evidence, sig, &key)? {
                    return Err(VerifyError::InvalidUserSignature(user.to_string()));
                }
                Ok(digest_signed(sig, user))
            }
        }
    }

    /// Epochs with a record for `(user, day)`, ascending. More than one
    /// means an epoch closed that day with a final snapshot.
    fn epochs_on(&self, user: &UserId, day: DayIndex) -> Vec<u64> {
        let mut epochs: Vec<u64> = self
            .feed
            .iter()
            .filter(|r| r.user == user.as_str() && r.day == day)
            .map(|r| r.epoch)
            .collect();
        epochs.sort_unstable();
        epochs.dedup();
        epochs
    }

    fn record(&self, user: &UserId, day: DayIndex, epoch: u64) -> Result<&'a DailyProof, VerifyError> {
        let mut hits = self
            .feed
            .iter()
            .filter(|r| r.user == user.as_str() && r.day == day && r.epoch == epoch);
        let first = hits.next().ok_or_else(|| VerifyError::MissingRecord {
            user: user.to_string(),
            day,
        })?;
        if hits.any(|r| r.filter_hash != first.filter_hash || r.sig != first.sig) {
            return Err(VerifyError::ConflictingRecords {
                user: user.to_string(),
                day,
            });
        }
        Ok(first)
    }

    /// Loads the snapshot a verified record commits to and checks the hash.
    fn attested_filter(
        &self,
        user: &UserId,
        record: &DailyProof,
    ) -> Result<BloomFilter, VerifyError> {
        let bytes = self
            .store
            .snapshot(user, record.epoch, record.day)
            .map_err(|e| match e {
                StoreError::MissingSnapshot { user, day } => {
                    VerifyError::SnapshotWithheld { user, day }
                }
                other => other.into(),
            })?;
        if sha256(&bytes) != record.filter_hash {
            return Err(VerifyError::AttestationMismatch {
                user: user.to_string(),
                day: record.day,
            });
        }
        Ok(BloomFilter::deserialize(&bytes)?)
    }

    fn check_variant(&self, user: &UserId, digest: &EvidenceDigest) -> Result<(), VerifyError> {
        let expected = self.store.user_record(user)?.variant;
        if digest.variant() != expected {
            return Err(VerifyError::VariantMismatch {
                expected,
                got: digest.variant(),
            });
        }
        Ok(())
    }

    /// Membership of `digest` in the committed snapshot of `(user, day)`.
    /// When an epoch closed that day, both of that day's snapshots count.
    ///
    /// A record whose signature fails yields a negative result with
    /// `feed_signature_valid = false`; the snapshot is not consulted.
    pub fn check_digest(
        &self,
        digest: &EvidenceDigest,
        user: &UserId,
        day: DayIndex,
    ) -> Result<MatchResult, VerifyError> {
        self.check_variant(user, digest)?;
        let epochs = self.epochs_on(user, day);
        if epochs.is_empty() {
            return Err(VerifyError::MissingRecord {
                user: user.to_string(),
                day,
            });
        }
        let mut results = Vec::with_capacity(epochs.len());
        for epoch in epochs {
            results.push(self.check_epoch(digest, user, day, epoch)?);
        }
        let all_valid = results.iter().all(|r| r.feed_signature_valid);
        let mut chosen = match results.iter().position(MatchResult::is_positive) {
            Some(i) => results.swap_remove(i),
            None => results.pop().expect("at least one epoch"),
        };
        chosen.feed_signature_valid &= all_valid;
        Ok(chosen)
    }

    fn check_epoch(
        &self,
        digest: &EvidenceDigest,
        user: &UserId,
        day: DayIndex,
        epoch: u64,
    ) -> Result<MatchResult, VerifyError> {
        let record = self.record(user, day, epoch)?;
        let base = MatchResult {
            verdict: Verdict::Negative,
            user: user.to_string(),
            day,
            epoch_seq: record.epoch,
            record: record.clone(),
            feed_signature_valid: false,
        };
        if check_feed_record(record, self.csp_pub).is_err() {
            return Ok(base);
        }
        let filter = self.attested_filter(user, record)?;
        let verdict = if filter.contains(digest) {
            Verdict::Positive
        } else {
            Verdict::Negative
        };
        Ok(MatchResult {
            verdict,
            feed_signature_valid: true,
            ..base
        })
    }

    pub fn check_membership(
        &self,
        evidence: impl Read,
        user: &UserId,
        day: DayIndex,
        signature: Option<&Signature>,
    ) -> Result<MatchResult, VerifyError> {
        let digest = self.digest(evidence, user, signature)?;
        self.check_digest(&digest, user, day)
    }

    /// Like [`check_digest`](Self::check_digest) but an unverifiable record
    /// is an error; used by the searches, which have no result to flag.
    fn probe(&self, digest: &EvidenceDigest, user: &UserId, day: DayIndex, epoch: u64) -> Result<bool, VerifyError> {
        let record = self.record(user, day, epoch)?;
        if let Err(reason) = check_feed_record(record, self.csp_pub) {
            return Err(VerifyError::RecordSignatureInvalid {
                user: user.to_string(),
                day,
                reason,
            });
        }
        Ok(self.attested_filter(user, record)?.contains(digest))
    }

    /// Published days of `user`, grouped by epoch, both ascending.
    pub fn published_days(&self, user: &UserId) -> BTreeMap<u64, Vec<DayIndex>> {
        let mut by_epoch: BTreeMap<u64, Vec<DayIndex>> = BTreeMap::new();
        for r in self.feed.iter().filter(|r| r.user == user.as_str()) {
            by_epoch.entry(r.epoch).or_default().push(r.day);
        }
        for days in by_epoch.values_mut() {
            days.sort_unstable();
            days.dedup();
        }
        by_epoch
    }

    /// First index in `days` whose probe is positive, assuming monotone
    /// membership across `days`.
    fn first_positive(
        &self,
        digest: &EvidenceDigest,
        user: &UserId,
        epoch: u64,
        days: &[DayIndex],
        probed: &mut Vec<DayIndex>,
    ) -> Result<Option<usize>, VerifyError> {
        let (mut lo, mut hi) = (0, days.len());
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            probed.push(days[mid]);
            if self.probe(digest, user, days[mid], epoch)? {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        Ok((lo < days.len()).then_some(lo))
    }

    /// Earliest published day whose commitment contains `digest`.
    pub fn find_generation_time(
        &self,
        digest: &EvidenceDigest,
        user: &UserId,
    ) -> Result<TimelineResult, VerifyError> {
        self.check_variant(user, digest)?;
        let mut trace = Vec::new();
        for (epoch, days) in self.published_days(user) {
            let mut probed = Vec::new();
            let hit = self.first_positive(digest, user, epoch, &days, &mut probed)?;
            trace.push(EpochProbe {
                epoch,
                probed_days: probed,
            });
            if let Some(i) = hit {
                return Ok(TimelineResult {
                    earliest_day: Some(days[i]),
                    epoch_seq: Some(epoch),
                    trace,
                });
            }
        }
        Ok(TimelineResult {
            earliest_day: None,
            epoch_seq: None,
            trace,
        })
    }

    /// Whether any published day in `range` contains `digest`; the witness
    /// is the earliest such day.
    pub fn present_in_range(
        &self,
        digest: &EvidenceDigest,
        user: &UserId,
        range: RangeInclusive<DayIndex>,
    ) -> Result<RangeResult, VerifyError> {
        if range.start() > range.end() {
            return Err(VerifyError::EmptyRange {
                start: *range.start(),
                end: *range.end(),
            });
        }
        self.check_variant(user, digest)?;
        let mut trace = Vec::new();
        for (epoch, days) in self.published_days(user) {
            let in_range: Vec<DayIndex> = days.into_iter().filter(|d| range.contains(d)).collect();
            let Some(&last) = in_range.last() else {
                continue;
            };
            let mut probed = vec![last];
            let present = self.probe(digest, user, last, epoch)?;
            if present {
                let head = &in_range[..in_range.len() - 1];
                let witness = match self.first_positive(digest, user, epoch, head, &mut probed)? {
                    Some(i) => head[i],
                    None => last,
                };
                trace.push(EpochProbe {
                    epoch,
                    probed_days: probed,
                });
                return Ok(RangeResult {
                    present: true,
                    witness_day: Some(witness),
                    trace,
                });
            }
            trace.push(EpochProbe {
                epoch,
                probed_days: probed,
            });
        }
        Ok(RangeResult {
            present: false,
            witness_day: None,
            trace,
        })
    }
}

/// Court-facing report records in canonical form.
pub mod report {
    use super::*;
    use crate::canonical;

    #[derive(Serialize)]
    struct MatchReport<'a> {
        kind: &'static str,
        verdict: Verdict,
        user: &'a str,
        day: DayIndex,
        epoch: u64,
        feed_signature_valid: bool,
        filter_hash: String,
        record_sig: String,
    }

    pub fn match_report(m: &MatchResult) -> String {
        canonical::to_string(&MatchReport {
            kind: "membership",
            verdict: m.verdict,
            user: &m.user,
            day: m.day,
            epoch: m.epoch_seq,
            feed_signature_valid: m.feed_signature_valid,
            filter_hash: hex::encode(m.record.filter_hash),
            record_sig: m.record.sig.to_hex(),
        })
        .expect("report serializes")
    }

    #[derive(Serialize)]
    struct TimelineReport<'a> {
        kind: &'static str,
        user: &'a str,
        earliest_day: Option<DayIndex>,
        epoch: Option<u64>,
        trace: &'a [EpochProbe],
    }

    pub fn timeline_report(user: &UserId, t: &TimelineResult) -> String {
        canonical::to_string(&TimelineReport {
            kind: "timeline",
            user: user.as_str(),
            earliest_day: t.earliest_day,
            epoch: t.epoch_seq,
            trace: &t.trace,
        })
        .expect("report serializes")
    }

    #[derive(Serialize)]
    struct RangeReport<'a> {
        kind: &'static str,
        user: &'a str,
        from: DayIndex,
        to: DayIndex,
        present: bool,
        witness_day: Option<DayIndex>,
        trace: &'a [EpochProbe],
    }

    pub fn range_report(user: &UserId, range: &RangeInclusive<DayIndex>, r: &RangeResult) -> String {
        canonical::to_string(&RangeReport {
            kind: "range",
            user: user.as_str(),
            from: *range.start(),
            to: *range.end(),
            present: r.present,
            witness_day: r.witness_day,
            trace: &r.trace,
        })
        .expect("report serializes")
    }
}
