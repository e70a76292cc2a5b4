//! Desk-scale timing of ingestion and matching, plus storage arithmetic.
//!
//! Uploads are modelled as a local read and write of the file, so overhead
//! percentages compare hashing against disk and page-cache traffic, not
//! against a network transfer.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ppdp_core::bloom::{params_for, BloomParams, SNAPSHOT_HEADER_LEN};
use ppdp_core::canonical;
use ppdp_core::evidence::{user_sign, CspKeyPair, DigestVariant, Signature, UserId, UserKeyPair};
use ppdp_core::proof::{end_of_day, ProofFeed};
use ppdp_core::store::{FilterStore, RotationPolicy};
use ppdp_core::verifier::Verifier;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::Serialize;
use thiserror::Error;

pub const KIB: u64 = 1024;
/// Decimal megabyte used for the savings projection.
pub const MB: f64 = 1_000_000.0;
pub const DEFAULT_MIN_KIB: u64 = 693;
pub const DEFAULT_MAX_KIB: u64 = 13843;

const NOTE: &str = "baseline is a local file copy; percentages are not comparable to networked upload measurements";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid bench configuration: {0}")]
    Config(String),
    #[error("bench I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("bench store: {0}")]
    Store(#[from] ppdp_core::store::StoreError),
    #[error("bench proof: {0}")]
    Proof(#[from] ppdp_core::proof::ProofError),
    #[error("bench verifier: {0}")]
    Verify(#[from] ppdp_core::verifier::VerifyError),
    #[error("bench parameters: {0}")]
    Bloom(#[from] ppdp_core::bloom::BloomError),
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchConfig {
    pub files: usize,
    pub min_kib: u64,
    pub max_kib: u64,
    pub repetitions: usize,
    pub variant: DigestVariant,
    pub seed: u64,
    /// Number of equal-count size buckets in the summary table.
    pub buckets: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            files: 1000,
            min_kib: DEFAULT_MIN_KIB,
            max_kib: DEFAULT_MAX_KIB,
            repetitions: 3,
            variant: DigestVariant::Plain,
            seed: 0,
            buckets: 10,
        }
    }
}

impl BenchConfig {
    fn validate(&self) -> Result<(), BenchError> {
        if self.min_kib > self.max_kib {
            return Err(BenchError::Config("min size exceeds max size".into()));
        }
        if self.repetitions == 0 || self.buckets == 0 {
            return Err(BenchError::Config("repetitions and buckets must be >= 1".into()));
        }
        Ok(())
    }
}

/// File sizes in bytes: lognormal, bounded by rejection to
/// `[min_kib, max_kib]`, with the bounds at ±3σ around the geometric mean.
pub fn corpus_sizes(config: &BenchConfig) -> Result<Vec<u64>, BenchError> {
    config.validate()?;
    let lo = config.min_kib * KIB;
    let hi = config.max_kib * KIB;
    if lo == hi {
        return Ok(vec![lo; config.files]);
    }
    let (ln_lo, ln_hi) = ((lo.max(1) as f64).ln(), (hi as f64).ln());
    let mu = (ln_lo + ln_hi) / 2.0;
    let sigma = ((ln_hi - ln_lo) / 6.0).max(f64::MIN_POSITIVE);
    let dist = LogNormal::new(mu, sigma).map_err(|e| BenchError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::with_capacity(config.files);
    while out.len() < config.files {
        let x = dist.sample(&mut rng).round();
        if x >= lo as f64 && x <= hi as f64 {
            out.push(x as u64);
        }
    }
    Ok(out)
}

/// Generated files on disk, in generation order.
pub struct Corpus {
    pub dir: PathBuf,
    pub files: Vec<(PathBuf, u64)>,
}

pub fn generate_corpus(config: &BenchConfig, dir: &Path) -> Result<Corpus, BenchError> {
    let sizes = corpus_sizes(config)?;
    fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_f11e);
    let mut files = Vec::with_capacity(sizes.len());
    for (i, size) in sizes.into_iter().enumerate() {
        let mut data = vec![0u8; size as usize];
        rng.fill_bytes(&mut data);
        let path = dir.join(format!("file-{i:05}.bin"));
        fs::write(&path, &data)?;
        files.push((path, size));
    }
    Ok(Corpus {
        dir: dir.to_path_buf(),
        files,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Machine {
    pub os: String,
    pub arch: String,
    pub cpus: usize,
}

impl Machine {
    pub fn current() -> Self {
        Self {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestSample {
    pub size_bytes: u64,
    pub baseline_s: f64,
    pub with_proof_s: f64,
    /// Mean over repetitions of (with_proof - baseline) / baseline.
    pub overhead: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestRow {
    pub bucket: usize,
    pub files: usize,
    pub mean_size_kib: f64,
    pub baseline_ms: f64,
    pub with_proof_ms: f64,
    pub overhead_pct: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestReport {
    pub config: BenchConfig,
    pub machine: Machine,
    pub samples: Vec<IngestSample>,
    pub rows: Vec<IngestRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    TruePositive,
    TrueNegative,
}

#[derive(Debug, Clone, Serialize)]
pub struct MatchSample {
    pub size_bytes: u64,
    pub mean_s: f64,
    pub positive: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MatchRow {
    pub bucket: usize,
    pub files: usize,
    pub mean_size_kib: f64,
    pub mean_match_ms: f64,
    pub positives: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct MatchReport {
    pub config: BenchConfig,
    pub machine: Machine,
    pub mode: MatchMode,
    pub samples: Vec<MatchSample>,
    pub rows: Vec<MatchRow>,
    /// Rank correlation between file size and mean match time.
    pub spearman: f64,
}

fn fresh_user(
    store: &mut FilterStore,
    variant: DigestVariant,
    n_expected: u64,
    seed: u64,
) -> Result<(UserId, Option<UserKeyPair>), BenchError> {
    let user = UserId::new("bench@example.org").expect("valid id");
    let key = (variant == DigestVariant::Signed).then(|| {
        let mut s = [0u8; 32];
        ChaCha8Rng::seed_from_u64(seed).fill_bytes(&mut s);
        UserKeyPair::from_seed(s)
    });
    store.register_user(
        &user,
        params_for(n_expected.max(1), 0.01)?,
        RotationPolicy::Capacity,
        variant,
        key.as_ref().map(|k| k.verification_key()),
        0,
    )?;
    Ok((user, key))
}

fn upload(src: &Path, dst: &Path) -> std::io::Result<()> {
    let data = fs::read(src)?;
    fs::write(dst, data)
}

/// Equal-count buckets over samples sorted by size.
fn bucket_ranges(n: usize, buckets: usize) -> Vec<std::ops::Range<usize>> {
    let b = buckets.min(n.max(1));
    (0..b)
        .map(|i| (i * n / b)..((i + 1) * n / b))
        .filter(|r| !r.is_empty())
        .collect()
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = xs.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

pub fn bench_ingest(config: &BenchConfig) -> Result<IngestReport, BenchError> {
    config.validate()?;
    let tmp = tempfile::tempdir()?;
    let corpus = generate_corpus(config, &tmp.path().join("corpus"))?;
    let uploads = tmp.path().join("uploads");
    fs::create_dir_all(&uploads)?;
    let mut store = FilterStore::open(tmp.path().join("state"))?;
    let total = (corpus.files.len() * config.repetitions) as u64;
    let (user, key) = fresh_user(&mut store, config.variant, total, config.seed)?;

    let mut samples = Vec::with_capacity(corpus.files.len());
    for (i, (src, size)) in corpus.files.iter().enumerate() {
        let dst = uploads.join(format!("{i:05}"));
        let (mut base, mut with, mut overhead) = (0.0, 0.0, 0.0);
        for _ in 0..config.repetitions {
            let t0 = Instant::now();
            upload(src, &dst)?;
            let b = t0.elapsed().as_secs_f64().max(1e-9);

            let t0 = Instant::now();
            upload(src, &dst)?;
            let sig = match &key {
                Some(k) => Some(user_sign(fs::File::open(&dst)?, k)?),
                None => None,
            };
            store.ingest(&user, fs::File::open(&dst)?, 0, sig.as_ref())?;
            let w = t0.elapsed().as_secs_f64();

            base += b;
            with += w;
            overhead += (w - b) / b;
        }
        let r = config.repetitions as f64;
        samples.push(IngestSample {
            size_bytes: *size,
            baseline_s: base / r,
            with_proof_s: with / r,
            overhead: overhead / r,
        });
    }
    samples.sort_by_key(|s| s.size_bytes);
    let rows = bucket_ranges(samples.len(), config.buckets)
        .into_iter()
        .enumerate()
        .map(|(bucket, r)| {
            let s = &samples[r];
            IngestRow {
                bucket,
                files: s.len(),
                mean_size_kib: mean(s.iter().map(|x| x.size_bytes as f64)) / KIB as f64,
                baseline_ms: mean(s.iter().map(|x| x.baseline_s)) * 1e3,
                with_proof_ms: mean(s.iter().map(|x| x.with_proof_s)) * 1e3,
                overhead_pct: mean(s.iter().map(|x| x.overhead)) * 100.0,
            }
        })
        .collect();
    Ok(IngestReport {
        config: config.clone(),
        machine: Machine::current(),
        samples,
        rows,
    })
}

pub fn bench_match(config: &BenchConfig, mode: MatchMode) -> Result<MatchReport, BenchError> {
    config.validate()?;
    let tmp = tempfile::tempdir()?;
    let corpus = generate_corpus(config, &tmp.path().join("corpus"))?;
    let state = tmp.path().join("state");
    let mut store = FilterStore::open(&state)?;
    let feed = ProofFeed::in_dir(&state);
    let mut seed = [0u8; 32];
    ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1)).fill_bytes(&mut seed);
    let csp = CspKeyPair::from_seed(seed);
    let (user, key) = fresh_user(&mut store, config.variant, corpus.files.len() as u64, config.seed)?;

    let mut sigs: Vec<Option<Signature>> = Vec::with_capacity(corpus.files.len());
    for (path, _) in &corpus.files {
        let sig = match &key {
            Some(k) => Some(user_sign(fs::File::open(path)?, k)?),
            None => None,
        };
        if mode == MatchMode::TruePositive {
            store.ingest(&user, fs::File::open(path)?, 0, sig.as_ref())?;
        }
        sigs.push(sig);
    }
    end_of_day(&mut store, &feed, &csp, 0, "bench")?;
    let records = feed.records()?;
    let pubk = csp.verification_key();
    let verifier = Verifier::new(&store, &records, &pubk);

    let mut samples = Vec::with_capacity(corpus.files.len());
    for ((path, size), sig) in corpus.files.iter().zip(&sigs) {
        let mut total = 0.0;
        let mut positive = true;
        for _ in 0..config.repetitions {
            let t0 = Instant::now();
            let m = verifier.check_membership(fs::File::open(path)?, &user, 0, sig.as_ref())?;
            total += t0.elapsed().as_secs_f64();
            positive &= m.is_positive();
        }
        samples.push(MatchSample {
            size_bytes: *size,
            mean_s: total / config.repetitions as f64,
            positive,
        });
    }
    samples.sort_by_key(|s| s.size_bytes);
    let spearman = spearman(
        &samples.iter().map(|s| s.size_bytes as f64).collect::<Vec<_>>(),
        &samples.iter().map(|s| s.mean_s).collect::<Vec<_>>(),
    );
    let rows = bucket_ranges(samples.len(), config.buckets)
        .into_iter()
        .enumerate()
        .map(|(bucket, r)| {
            let s = &samples[r];
            MatchRow {
                bucket,
                files: s.len(),
                mean_size_kib: mean(s.iter().map(|x| x.size_bytes as f64)) / KIB as f64,
                mean_match_ms: mean(s.iter().map(|x| x.mean_s)) * 1e3,
                positives: s.iter().filter(|x| x.positive).count(),
            }
        })
        .collect();
    Ok(MatchReport {
        config: config.clone(),
        machine: Machine::current(),
        mode,
        samples,
        rows,
        spearman,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct StorageReport {
    pub users: u64,
    pub m_bits: u64,
    pub k_hashes: u16,
    /// `m_bits / 8`, unrounded.
    pub filter_bytes_per_user_day: f64,
    pub filter_bytes_per_day: f64,
    /// Header plus padded bit array, as written to disk.
    pub snapshot_file_bytes: u64,
    pub header_bytes: u64,
    pub deleted_bytes_per_user_day: f64,
    pub savings_bytes_per_user_day: f64,
    pub savings_mb_per_user_day: f64,
    pub savings_mb_per_day: f64,
}

/// Storage a deployment needs per day, and what it saves over retaining
/// `deleted_bytes_per_user_day` of deleted data per user.
pub fn storage_report(users: u64, params: &BloomParams, deleted_bytes_per_user_day: f64) -> StorageReport {
    let per_user = params.m_bits as f64 / 8.0;
    let savings = deleted_bytes_per_user_day - per_user;
    StorageReport {
        users,
        m_bits: params.m_bits,
        k_hashes: params.k_hashes,
        filter_bytes_per_user_day: per_user,
        filter_bytes_per_day: per_user * users as f64,
        snapshot_file_bytes: (SNAPSHOT_HEADER_LEN + params.bit_array_len()) as u64,
        header_bytes: SNAPSHOT_HEADER_LEN as u64,
        deleted_bytes_per_user_day,
        savings_bytes_per_user_day: savings,
        savings_mb_per_user_day: savings / MB,
        savings_mb_per_day: savings * users as f64 / MB,
    }
}

/// Fractional ranks (ties get the mean of their positions), 1-based.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; NaN when either side is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let (rx, ry) = (ranks(xs), ranks(ys));
    let (mx, my) = (mean(rx.iter().copied()), mean(ry.iter().copied()));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

#[derive(Serialize)]
struct Header<'a, C: Serialize> {
    table: &'a str,
    note: &'a str,
    config: &'a C,
    machine: &'a Machine,
    #[serde(skip_serializing_if = "Option::is_none")]
    spearman: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<MatchMode>,
}

fn records<R: Serialize>(header: &impl Serialize, rows: &[R]) -> String {
    let mut out = canonical::to_string(header).expect("header serializes");
    out.push('\n');
    for r in rows {
        out.push_str(&canonical::to_string(r).expect("row serializes"));
        out.push('\n');
    }
    out
}

impl IngestReport {
    /// Canonical JSON lines: a header record, then one record per bucket.
    pub fn to_records(&self) -> String {
        let h = Header {
            table: "ingest",
            note: NOTE,
            config: &self.config,
            machine: &self.machine,
            spearman: None,
            mode: None,
        };
        records(&h, &self.rows)
    }

    pub fn to_gnuplot(&self) -> String {
        let mut out = format!(
            "# ingest overhead, seed {} variant {}\n# {NOTE}\n# size_kib baseline_ms with_proof_ms overhead_pct\n",
            self.config.seed,
            self.config.variant.as_str()
        );
        for s in &self.samples {
            let _ = writeln!(
                out,
                "{:.3} {:.6} {:.6} {:.6}",
                s.size_bytes as f64 / KIB as f64,
                s.baseline_s * 1e3,
                s.with_proof_s * 1e3,
                s.overhead * 100.0
            );
        }
        out
    }
}

impl MatchReport {
    pub fn to_records(&self) -> String {
        let h = Header {
            table: "match",
            note: "timings are machine dependent; compare trends only",
            config: &self.config,
            machine: &self.machine,
            spearman: Some(self.spearman),
            mode: Some(self.mode),
        };
        records(&h, &self.rows)
    }

    pub fn to_gnuplot(&self) -> String {
        let mut out = format!(
            "# match time, mode {:?} seed {} variant {}\n# size_kib match_ms positive\n",
            self.mode,
            self.config.seed,
            self.config.variant.as_str()
        );
        for s in &self.samples {
            let _ = writeln!(
                out,
                "{:.3} {:.6} {}",
                s.size_bytes as f64 / KIB as f64,
                s.mean_s * 1e3,
                u8::from(s.positive)
            );
        }
        out
    }
}

impl StorageReport {
    pub fn to_records(&self) -> String {
        canonical::to_string(self).expect("report serializes") + "\n"
    }
}
