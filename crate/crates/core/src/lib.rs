//! Proofs of past data possession.
//!
//! A storage provider keeps one Bloom filter per user and inserts a digest
//! of every file the user stores. Each day it hashes every user's filter,
//! signs the hash and appends the result to a public feed. Later anyone
//! holding a copy of that feed can check whether a given file was in the
//! user's storage on a given day, even after the file itself is gone.
//!
//! - [`bloom`]: the filter, its sizing and its snapshot format.
//! - [`evidence`]: evidence digests, user and provider keys.
//! - [`store`]: per-user filters, rotation and daily snapshots on disk.
//! - [`proof`]: signed daily records, the feed and the audit reveal.
//! - [`verifier`]: membership checks and timeline searches.
//! - [`watch`]: the polling directory watcher.

pub mod bloom;
pub mod canonical;
pub mod evidence;
pub mod proof;
pub mod store;
pub mod verifier;
pub mod watch;

pub use bloom::{false_positive_rate, params_for, BloomFilter, BloomParams};
pub use evidence::{
    digest_plain, digest_signed, user_sign, CspKeyPair, DigestVariant, EvidenceDigest, Signature,
    UserId, UserKeyPair, VerificationKey,
};
pub use proof::{audit_reveal, end_of_day, publish_day, verify_feed_record, DailyProof, ProofFeed};
pub use store::{DayIndex, FilterStore, RotationPolicy};
pub use verifier::{MatchResult, Verdict, Verifier};
