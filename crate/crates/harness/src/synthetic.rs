//! Random ingestion histories for property and oracle checks.

use std::path::Path;

use ppdp_core::bloom::{params_for, BloomParams};
use ppdp_core::evidence::{
    digest_plain, digest_signed, user_sign, CspKeyPair, DigestVariant, EvidenceDigest, Signature,
    UserId, UserKeyPair,
};
use ppdp_core::proof::{end_of_day, publish_day, DailyProof, ProofError, ProofFeed};
use ppdp_core::store::{
    read_log, replay_log, FilterStore, IngestReceipt, RotationPolicy, StoreError,
};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Which rotation rule a history uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RotationOption {
    /// Option A: rotate when the filter reaches its design capacity.
    Capacity,
    /// Option B: rotate every fixed number of days.
    Periodic,
}

#[derive(Debug, Clone)]
pub struct UserHistory {
    pub user: UserId,
    /// Present for signed-variant users.
    pub key_seed: Option<[u8; 32]>,
    pub params: BloomParams,
    pub policy: RotationPolicy,
    /// Indices into [`SyntheticHistory::items`] ingested on each day.
    pub days: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct SyntheticHistory {
    pub seed: u64,
    pub option: RotationOption,
    pub variant: DigestVariant,
    pub items: Vec<Vec<u8>>,
    pub users: Vec<UserHistory>,
    pub csp_seed: [u8; 32],
}

impl SyntheticHistory {
    pub fn day_count(&self) -> u64 {
        self.users.iter().map(|u| u.days.len()).max().unwrap_or(0) as u64
    }

    pub fn key(&self, user: usize) -> Option<UserKeyPair> {
        self.users[user].key_seed.map(UserKeyPair::from_seed)
    }

    /// The user's signature over `item`, in the signed variant.
    pub fn signature(&self, user: usize, item: usize) -> Option<Signature> {
        self.key(user)
            .map(|k| user_sign(&self.items[item][..], &k).expect("in-memory read"))
    }

    pub fn digest(&self, user: usize, item: usize) -> EvidenceDigest {
        let id = &self.users[user].user;
        match self.signature(user, item) {
            Some(sig) => digest_signed(&sig, id),
            None => digest_plain(&self.items[item][..], id).expect("in-memory read"),
        }
    }
}

/// A history with one or two users, small filters so that rotations are
/// frequent, and a pool of items some of which are never ingested.
pub fn random_history(seed: u64, option: RotationOption, variant: DigestVariant) -> SyntheticHistory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let item_count = rng.gen_range(4..24);
    let items = (0..item_count)
        .map(|_| {
            let mut v = vec![0u8; rng.gen_range(0..48)];
            rng.fill_bytes(&mut v);
            v
        })
        .collect();
    let day_count = rng.gen_range(1..16);
    let user_count = rng.gen_range(1..=2);
    let users = (0..user_count)
        .map(|u| {
            let n = rng.gen_range(2..10);
            let p = [0.2, 0.05, 0.01][rng.gen_range(0..3)];
            let policy = match option {
                RotationOption::Capacity => RotationPolicy::Capacity,
                RotationOption::Periodic => RotationPolicy::Periodic {
                    period_days: rng.gen_range(1..6),
                },
            };
            let days = (0..day_count)
                .map(|_| {
                    let count = if rng.gen_bool(0.3) { 0 } else { rng.gen_range(1..4) };
                    (0..count).map(|_| rng.gen_range(0..item_count)).collect()
                })
                .collect();
            let key_seed = (variant == DigestVariant::Signed).then(|| {
                let mut k = [0u8; 32];
                rng.fill_bytes(&mut k);
                k
            });
            UserHistory {
                user: UserId::new(format!("user{u}@example.org")).expect("valid id"),
                key_seed,
                params: params_for(n, p).expect("valid params"),
                policy,
                days,
            }
        })
        .collect();
    let mut csp_seed = [0u8; 32];
    rng.fill_bytes(&mut csp_seed);
    SyntheticHistory {
        seed,
        option,
        variant,
        items,
        users,
        csp_seed,
    }
}

pub struct Built {
    pub store: FilterStore,
    pub feed: Vec<DailyProof>,
    /// `(user index, item index, receipt)` for every ingestion.
    pub receipts: Vec<(usize, usize, IngestReceipt)>,
}

/// Runs `history` against a store rooted at `dir`, cutting and publishing
/// every day.
pub fn build(history: &SyntheticHistory, dir: &Path) -> Result<Built, ProofError> {
    let mut store = FilterStore::open(dir)?;
    let feed = ProofFeed::in_dir(dir);
    let csp = CspKeyPair::from_seed(history.csp_seed);
    for (i, u) in history.users.iter().enumerate() {
        let key = history.key(i).map(|k| k.verification_key());
        store.register_user(&u.user, u.params, u.policy, history.variant, key, 0)?;
    }
    let mut receipts = Vec::new();
    for day in 0..history.day_count() {
        for (i, u) in history.users.iter().enumerate() {
            for &item in &u.days[day as usize] {
                let sig = history.signature(i, item);
                let r = store.ingest(&u.user, &history.items[item][..], day, sig.as_ref())?;
                receipts.push((i, item, r));
            }
        }
        end_of_day(&mut store, &feed, &csp, day, &format!("t{day}"))?;
    }
    let feed = feed.records()?;
    Ok(Built {
        store,
        feed,
        receipts,
    })
}

/// Rebuilds a store in `dir` from the ingestion log of `source`,
/// republishing each replayed day with the same provider key.
pub fn replay(history: &SyntheticHistory, source: &FilterStore, dir: &Path) -> Result<(FilterStore, Vec<DailyProof>), ProofError> {
    let entries = read_log(&source.log_path())?;
    let mut store = FilterStore::open(dir)?;
    let feed = ProofFeed::in_dir(dir);
    let csp = CspKeyPair::from_seed(history.csp_seed);
    replay_log(&mut store, &entries, |s, day| {
        publish_day(s, &feed, &csp, day, "replayed")
            .map(|_| ())
            .map_err(|e| StoreError::Corrupt(e.to_string()))
    })?;
    let records = feed.records()?;
    Ok((store, records))
}
