//! Byte-exact golden files. Regenerate with `PPDP_BLESS=1 cargo test --test golden`
//! only after a deliberate format change.

use std::fs;
use std::path::PathBuf;

use ppdp_core::bloom::{params_for, BloomFilter};
use ppdp_core::evidence::{
    digest_plain, digest_signed, user_sign, CspKeyPair, DigestVariant, UserId, UserKeyPair,
};
use ppdp_core::proof::{end_of_day, ProofFeed};
use ppdp_core::store::{FilterStore, RotationPolicy};

const GOLDEN_FILE: &[u8] = b"golden evidence\n";
const TEST_CSP_SEED: [u8; 32] = [0x11; 32];
const TEST_USER_SEED: [u8; 32] = [0x22; 32];

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn check_golden(name: &str, actual: &[u8]) {
    let path = fixture(name);
    if std::env::var_os("PPDP_BLESS").is_some() {
        fs::write(&path, actual).unwrap();
    }
    let expected = fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, &expected[..], "golden mismatch for {name}");
}

fn golden_user() -> UserId {
    UserId::new("golden@example.org").unwrap()
}

#[test]
fn test_keys_match_their_seeds() {
    // TEST-ONLY key material; never use these keys outside the test suite.
    let csp = CspKeyPair::load(&fixture("TEST_ONLY_csp.key")).unwrap();
    assert_eq!(
        csp.verification_key(),
        CspKeyPair::from_seed(TEST_CSP_SEED).verification_key()
    );
    let user = UserKeyPair::load(&fixture("TEST_ONLY_user.key")).unwrap();
    assert_eq!(
        user.verification_key(),
        UserKeyPair::from_seed(TEST_USER_SEED).verification_key()
    );
    check_golden("TEST_ONLY_csp.pub", csp.verification_key().to_pem().as_bytes());
    check_golden("TEST_ONLY_user.pub", user.verification_key().to_pem().as_bytes());
}

#[test]
fn snapshot_with_three_insertions() {
    let mut f = BloomFilter::new(params_for(1000, 0.01).unwrap());
    for item in [&b"alpha"[..], b"beta", b"gamma"] {
        f.insert(&digest_plain(item, &golden_user()).unwrap());
    }
    let bytes = f.serialize();
    assert_eq!(&bytes[..8], b"PPDPBF01");
    assert_eq!(bytes.len(), 36 + 1263);
    check_golden("three_inserts.bf", &bytes);
}

#[test]
fn user_signature_and_signed_digest() {
    let key = UserKeyPair::load(&fixture("TEST_ONLY_user.key")).unwrap();
    let sig = user_sign(GOLDEN_FILE, &key).unwrap();
    check_golden("golden_evidence.sig", sig.to_hex().as_bytes());
    let d = digest_signed(&sig, &golden_user());
    assert_eq!(d.variant(), DigestVariant::Signed);
    check_golden("golden_evidence.signed_digest", d.to_hex().as_bytes());
}

#[test]
fn feed_record_for_one_ingested_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = FilterStore::open(dir.path()).unwrap();
    let user = golden_user();
    store
        .register_user(
            &user,
            params_for(1000, 0.01).unwrap(),
            RotationPolicy::Capacity,
            DigestVariant::Plain,
            None,
            0,
        )
        .unwrap();
    store.ingest(&user, GOLDEN_FILE, 0, None).unwrap();
    let feed = ProofFeed::in_dir(dir.path());
    let csp = CspKeyPair::load(&fixture("TEST_ONLY_csp.key")).unwrap();
    end_of_day(&mut store, &feed, &csp, 0, "1970-01-01T00:00:00Z").unwrap();
    check_golden("golden_feed.jsonl", &fs::read(feed.path()).unwrap());
    check_golden("golden_snapshot_day0.bf", &store.snapshot(&user, 0, 0).unwrap());
}
