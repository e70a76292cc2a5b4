//! Browser bindings for `www/index.html`: a parameter explorer, an
//! insert/query visualizer and a publish/tamper/audit round trip.
//!
//! Everything returns JSON strings so the page needs no extra glue.

use ppdp_core::bloom::{bit_positions, false_positive_rate, params_for, BloomFilter, BloomParams};
use ppdp_core::evidence::{digest_plain, sha256, CspKeyPair, EvidenceDigest, UserId};
use ppdp_core::proof::{check_feed_line, DailyProof};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const CURVE_POINTS: u64 = 40;
const DEMO_KEY_LABEL: &[u8] = b"ppdp browser demo key";

#[derive(Serialize)]
struct ParamsView {
    n_expected: u64,
    fp_target: f64,
    m_bits: u64,
    k_hashes: u16,
    bytes: f64,
    design_fp_rate: f64,
    /// `(inserted, fp rate)` up to twice the design capacity.
    curve: Vec<(u64, f64)>,
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("view serializes")
}

/// Filter geometry for `n` expected items at target rate `p`.
#[wasm_bindgen]
pub fn explore_params(n_expected: u32, fp_rate: f64) -> Result<String, String> {
    let params = params_for(u64::from(n_expected), fp_rate).map_err(|e| e.to_string())?;
    let n = params.n_expected;
    let step = (2 * n).div_ceil(CURVE_POINTS).max(1);
    let curve = (0..=2 * n)
        .step_by(step as usize)
        .map(|i| (i, false_positive_rate(i, params.m_bits, params.k_hashes)))
        .collect();
    Ok(json(&ParamsView {
        n_expected: n,
        fp_target: fp_rate,
        m_bits: params.m_bits,
        k_hashes: params.k_hashes,
        bytes: params.payload_bytes(),
        design_fp_rate: params.design_fp_rate(),
        curve,
    }))
}

#[derive(Serialize)]
struct ProbeView {
    digest: String,
    positions: Vec<u64>,
    /// Which of `positions` are set.
    set: Vec<bool>,
    present: bool,
    inserted: u64,
    fill_ratio: f64,
    current_fp_rate: f64,
}

#[derive(Serialize)]
struct AuditView {
    signature_valid: bool,
    signature_error: Option<String>,
    hash_matches: bool,
    revealed_hash: String,
}

/// One user's filter, with a fixed demo provider key.
#[wasm_bindgen]
pub struct Demo {
    user: UserId,
    filter: BloomFilter,
    key: CspKeyPair,
    published: Option<Vec<u8>>,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(n_expected: u32, fp_rate: f64, user: &str) -> Result<Demo, String> {
        let params = params_for(u64::from(n_expected), fp_rate).map_err(|e| e.to_string())?;
        Self::with_params(params, user)
    }

    fn with_params(params: BloomParams, user: &str) -> Result<Demo, String> {
        Ok(Self {
            user: UserId::new(user).map_err(|e| e.to_string())?,
            filter: BloomFilter::new(params),
            key: CspKeyPair::from_seed(sha256(DEMO_KEY_LABEL)),
            published: None,
        })
    }

    fn digest(&self, content: &str) -> EvidenceDigest {
        digest_plain(content.as_bytes(), &self.user).expect("in-memory read")
    }

    fn probe(&self, d: &EvidenceDigest) -> ProbeView {
        let positions = bit_positions(d, self.filter.params());
        let set: Vec<bool> = positions.iter().map(|&i| self.filter.get_bit(i)).collect();
        let p = self.filter.params();
        ProbeView {
            digest: d.to_hex(),
            present: self.filter.contains(d),
            positions,
            set,
            inserted: self.filter.inserted_count(),
            fill_ratio: self.filter.fill_ratio(),
            current_fp_rate: false_positive_rate(self.filter.inserted_count(), p.m_bits, p.k_hashes),
        }
    }

    pub fn insert(&mut self, content: &str) -> String {
        let d = self.digest(content);
        self.filter.insert(&d);
        json(&self.probe(&d))
    }

    pub fn query(&self, content: &str) -> String {
        json(&self.probe(&self.digest(content)))
    }

    /// As `f64` so the page gets a plain number rather than a BigInt.
    pub fn m_bits(&self) -> f64 {
        self.filter.params().m_bits as f64
    }

    /// The raw bit array, LSB-first within each byte.
    pub fn bits(&self) -> Vec<u8> {
        self.filter.bits().to_vec()
    }

    pub fn provider_key(&self) -> String {
        self.key.verification_key().to_hex()
    }

    /// Cuts a snapshot and returns the signed feed line for it.
    pub fn publish(&mut self, day: u32, t: &str) -> String {
        let snapshot = self.filter.serialize();
        let record = DailyProof::sign(&self.user, u64::from(day), 0, &snapshot, &self.key, t);
        self.published = Some(snapshot);
        record.to_line()
    }

    /// Checks `line` against the demo key and the last published snapshot,
    /// optionally with one snapshot bit flipped first.
    pub fn audit(&self, line: &str, flip_bit: Option<u32>) -> Result<String, String> {
        let mut snapshot = self.published.clone().ok_or("nothing published yet")?;
        if let Some(bit) = flip_bit {
            let bit = bit as usize % (snapshot.len() * 8);
            snapshot[bit / 8] ^= 1 << (bit % 8);
        }
        let revealed = sha256(&snapshot);
        let (signature_valid, signature_error, hash_matches) =
            match check_feed_line(line, &self.key.verification_key()) {
                Ok(r) => (true, None, r.filter_hash == revealed),
                Err(e) => {
                    let hash = DailyProof::from_line(line).is_ok_and(|r| r.filter_hash == revealed);
                    (false, Some(e), hash)
                }
            };
        Ok(json(&AuditView {
            signature_valid,
            signature_error,
            hash_matches,
            revealed_hash: hex::encode(revealed),
        }))
    }
}
