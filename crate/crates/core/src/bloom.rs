//! Set-only Bloom filter used as the per-user possession state.
//!
//! Positions come from one 256-bit digest split into two 128-bit halves
//! `h1`, `h2` (big-endian), combined by double hashing:
//! `g_i = (h1 + i * h2) mod m` for `i` in `0..k`.
//!
//! Sizing follows the half-fill rule for an integer number of hashes:
//! `k = ceil(log2(1/p))` and `m = ceil(k * n / ln 2)`. For `n = 1000`,
//! `p = 0.01` this gives `k = 7`, `m = 10099` bits.

use std::fmt;

use thiserror::Error;

use crate::evidence::EvidenceDigest;

/// Magic prefix of the snapshot format.
pub const SNAPSHOT_MAGIC: &[u8; 8] = b"PPDPBF01";
/// Current snapshot format version.
pub const SNAPSHOT_VERSION: u16 = 1;
/// Length of the fixed snapshot header in bytes.
pub const SNAPSHOT_HEADER_LEN: usize = 8 + 2 + 8 + 2 + 8 + 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BloomError {
    #[error("invalid bloom parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed snapshot: {0}")]
    MalformedSnapshot(String),
}

/// Filter geometry: the element count it is sized for, its bit length and
/// hash count.
///
/// The false-positive target used for sizing is not stored; it is only an
/// input to [`params_for`]. [`BloomParams::design_fp_rate`] reports the rate
/// the geometry actually achieves at `n_expected`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct BloomParams {
    pub n_expected: u64,
    pub m_bits: u64,
    pub k_hashes: u16,
}

impl BloomParams {
    pub fn new(n_expected: u64, m_bits: u64, k_hashes: u16) -> Result<Self, BloomError> {
        if n_expected == 0 {
            return Err(BloomError::InvalidParameter("n_expected must be >= 1".into()));
        }
        if m_bits == 0 {
            return Err(BloomError::InvalidParameter("m_bits must be >= 1".into()));
        }
        if k_hashes == 0 {
            return Err(BloomError::InvalidParameter("k_hashes must be >= 1".into()));
        }
        Ok(Self {
            n_expected,
            m_bits,
            k_hashes,
        })
    }

    /// Bytes needed for the bit array.
    pub fn bit_array_len(&self) -> usize {
        self.m_bits.div_ceil(8) as usize
    }

    /// Size of the bit array in (possibly fractional) bytes, `m / 8`.
    pub fn payload_bytes(&self) -> f64 {
        self.m_bits as f64 / 8.0
    }

    pub fn design_fp_rate(&self) -> f64 {
        false_positive_rate(self.n_expected, self.m_bits, self.k_hashes)
    }
}

/// Derives `(m, k)` for `n_expected` elements at false-positive target `p_target`.
pub fn params_for(n_expected: u64, p_target: f64) -> Result<BloomParams, BloomError> {
    if n_expected == 0 {
        return Err(BloomError::InvalidParameter("n_expected must be >= 1".into()));
    }
    if !(p_target > 0.0 && p_target < 1.0) {
        return Err(BloomError::InvalidParameter(format!(
            "p_target must lie in (0, 1), got {p_target}"
        )));
    }
    let k = (1.0 / p_target).log2().ceil();
    if k > f64::from(u16::MAX) {
        return Err(BloomError::InvalidParameter(format!(
            "p_target {p_target} needs more than {} hashes",
            u16::MAX
        )));
    }
    let k = (k as u16).max(1);
    let m = (f64::from(k) * n_expected as f64 / std::f64::consts::LN_2).ceil();
    if !m.is_finite() || m > u64::MAX as f64 {
        return Err(BloomError::InvalidParameter("bit array too large".into()));
    }
    BloomParams::new(n_expected, m as u64, k)
}

/// `(1 - e^(-k n / m))^k`.
pub fn false_positive_rate(n_inserted: u64, m_bits: u64, k_hashes: u16) -> f64 {
    if n_inserted == 0 {
        return 0.0;
    }
    let k = f64::from(k_hashes);
    let exponent = -k * n_inserted as f64 / m_bits as f64;
    // 1 - e^x computed as -expm1(x) keeps precision for sparse filters.
    (-exponent.exp_m1()).powf(k)
}

/// The `k` bit indices of `digest` in a filter of geometry `params`.
pub fn bit_positions(digest: &EvidenceDigest, params: &BloomParams) -> Vec<u64> {
    let bytes = digest.as_bytes();
    let mut hi = [0u8; 16];
    let mut lo = [0u8; 16];
    hi.copy_from_slice(&bytes[..16]);
    lo.copy_from_slice(&bytes[16..]);
    let m = u128::from(params.m_bits);
    let h1 = u128::from_be_bytes(hi) % m;
    let h2 = u128::from_be_bytes(lo) % m;
    // h1, h2 < 2^64 and i < 2^16, so the sum cannot overflow u128.
    (0..u128::from(params.k_hashes))
        .map(|i| ((h1 + i * h2) % m) as u64)
        .collect()
}

#[derive(Clone, PartialEq, Eq)]
pub struct BloomFilter {
    params: BloomParams,
    bits: Vec<u8>,
    inserted_count: u64,
}

impl fmt::Debug for BloomFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BloomFilter")
            .field("params", &self.params)
            .field("inserted_count", &self.inserted_count)
            .field("popcount", &self.popcount())
            .finish()
    }
}

impl BloomFilter {
    pub fn new(params: BloomParams) -> Self {
        Self {
            params,
            bits: vec![0; params.bit_array_len()],
            inserted_count: 0,
        }
    }

    pub fn params(&self) -> &BloomParams {
        &self.params
    }

    pub fn inserted_count(&self) -> u64 {
        self.inserted_count
    }

    /// Raw bit array, bit `i` at byte `i / 8`, LSB-first.
    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get_bit(&self, index: u64) -> bool {
        self.bits[(index / 8) as usize] & (1 << (index % 8)) != 0
    }

    fn set_bit(&mut self, index: u64) {
        self.bits[(index / 8) as usize] |= 1 << (index % 8);
    }

    pub fn popcount(&self) -> u64 {
        self.bits.iter().map(|b| u64::from(b.count_ones())).sum()
    }

    /// Fraction of bits set.
    pub fn fill_ratio(&self) -> f64 {
        self.popcount() as f64 / self.params.m_bits as f64
    }

    pub fn insert(&mut self, digest: &EvidenceDigest) {
        for pos in bit_positions(digest, &self.params) {
            self.set_bit(pos);
        }
        self.inserted_count += 1;
    }

    pub fn contains(&self, digest: &EvidenceDigest) -> bool {
        bit_positions(digest, &self.params)
            .into_iter()
            .all(|pos| self.get_bit(pos))
    }

    /// True when every bit set in `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BloomFilter) -> bool {
        self.params == other.params
            && self
                .bits
                .iter()
                .zip(&other.bits)
                .all(|(a, b)| a & !b == 0)
    }

    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(SNAPSHOT_HEADER_LEN + self.bits.len());
        out.extend_from_slice(SNAPSHOT_MAGIC);
        out.extend_from_slice(&SNAPSHOT_VERSION.to_be_bytes());
        out.extend_from_slice(&self.params.m_bits.to_be_bytes());
        out.extend_from_slice(&self.params.k_hashes.to_be_bytes());
        out.extend_from_slice(&self.params.n_expected.to_be_bytes());
        out.extend_from_slice(&self.inserted_count.to_be_bytes());
        out.extend_from_slice(&self.bits);
        out
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self, BloomError> {
        let malformed = |msg: String| BloomError::MalformedSnapshot(msg);
        if bytes.len() < SNAPSHOT_HEADER_LEN {
            return Err(malformed(format!(
                "{} bytes is shorter than the {SNAPSHOT_HEADER_LEN}-byte header",
                bytes.len()
            )));
        }
        if &bytes[..8] != SNAPSHOT_MAGIC {
            return Err(malformed("bad magic".into()));
        }
        let mut cursor = 8;
        let mut take = |len: usize| {
            let slice = &bytes[cursor..cursor + len];
            cursor += len;
            slice
        };
        let version = u16::from_be_bytes(take(2).try_into().unwrap());
        let m_bits = u64::from_be_bytes(take(8).try_into().unwrap());
        let k_hashes = u16::from_be_bytes(take(2).try_into().unwrap());
        let n_expected = u64::from_be_bytes(take(8).try_into().unwrap());
        let inserted_count = u64::from_be_bytes(take(8).try_into().unwrap());
        if version != SNAPSHOT_VERSION {
            return Err(malformed(format!("unsupported version {version}")));
        }
        let params = BloomParams::new(n_expected, m_bits, k_hashes)
            .map_err(|e| malformed(e.to_string()))?;
        let body = &bytes[SNAPSHOT_HEADER_LEN..];
        let expected = m_bits.div_ceil(8);
        if body.len() as u64 != expected {
            return Err(malformed(format!(
                "bit array is {} bytes, m_bits={m_bits} requires {expected}",
                body.len()
            )));
        }
        let tail_bits = m_bits % 8;
        if tail_bits != 0 {
            let last = body[body.len() - 1];
            if last >> tail_bits != 0 {
                return Err(malformed("padding bits beyond m_bits are set".into()));
            }
        }
        Ok(Self {
            params,
            bits: body.to_vec(),
            inserted_count,
        })
    }
}
