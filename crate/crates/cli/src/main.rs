//! `ppdp`: operator front end.
//!
//! Exit status: 0 on success, 1 on a negative verdict (or a failed audit
//! or scenario), 2 on any error.

mod state;

use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ppdp_core::bloom::params_for;
use ppdp_core::canonical;
use ppdp_core::evidence::{keygen, user_sign, CspKeyPair, DigestVariant, KeyRole, Signature, UserId, UserKeyPair, VerificationKey};
use ppdp_core::proof::{audit_reveal, parse_feed, publish_day, verify_feed_record, DailyProof, ProofFeed, FEED_FILE};
use ppdp_core::store::{FilterStore, IngestReceipt, RotationPolicy};
use ppdp_core::verifier::{report, Verifier};
use ppdp_core::watch::{watch_loop, watch_once, SeenSet, WatchConfig};
use ppdp_harness::bench::{self, BenchConfig, MatchMode, MB};
use ppdp_harness::scenario::{self, SCENARIO_NAMES};
use serde_json::{json, Value};

use state::{Access, Defaults, StateDir};

// A closed stdout (e.g. piped into `head`) is not an error worth reporting.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

macro_rules! say_raw {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = write!(std::io::stdout().lock(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(name = "ppdp", version, about = "Proofs of past data possession")]
struct Cli {
    /// State directory holding filters, snapshots, the feed and keys.
    #[arg(long, env = "PPDP_STATE_DIR", default_value = "ppdp-state", global = true)]
    state_dir: PathBuf,
    /// Human-readable output instead of canonical JSON records.
    #[arg(long, global = true)]
    human: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Rotation {
    Capacity,
    Periodic,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Plain,
    Signed,
}

impl From<Variant> for DigestVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Plain => DigestVariant::Plain,
            Variant::Signed => DigestVariant::Signed,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Role {
    Csp,
    User,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    TruePositive,
    TrueNegative,
}

#[derive(Args, Clone)]
struct FilterArgs {
    /// Expected number of files per filter.
    #[arg(long)]
    n_expected: Option<u64>,
    /// Target false-positive rate.
    #[arg(long)]
    fp_rate: Option<f64>,
    #[arg(long, value_enum)]
    rotation: Option<Rotation>,
    /// Epoch length for periodic rotation.
    #[arg(long)]
    period_days: Option<u64>,
    /// Derive the period from a file rate instead: ceil(n / rate) periods.
    #[arg(long, conflicts_with = "period_days")]
    files_per_period: Option<f64>,
    #[arg(long, default_value_t = 30)]
    days_per_period: u64,
}

impl FilterArgs {
    fn resolve(&self, base: Option<&Defaults>) -> Result<Defaults> {
        let n_expected = self
            .n_expected
            .or(base.map(|d| d.n_expected))
            .unwrap_or(1000);
        let fp_rate = self.fp_rate.or(base.map(|d| d.fp_rate)).unwrap_or(0.01);
        params_for(n_expected, fp_rate)?;
        let policy = match self.rotation {
            None if self.period_days.is_none() && self.files_per_period.is_none() => {
                base.map_or(RotationPolicy::Capacity, |d| d.policy)
            }
            Some(Rotation::Capacity) => RotationPolicy::Capacity,
            _ => match (self.period_days, self.files_per_period) {
                (Some(days), _) => RotationPolicy::periodic(days)?,
                (None, Some(rate)) => RotationPolicy::periodic_from_rate(n_expected, rate, self.days_per_period)?,
                (None, None) => bail!("periodic rotation needs --period-days or --files-per-period"),
            },
        };
        Ok(Defaults {
            n_expected,
            fp_rate,
            policy,
        })
    }
}

#[derive(Args)]
struct EvidenceArgs {
    /// Hex signature file for signed-variant users [default: <FILE>.sig].
    #[arg(long)]
    sig: Option<PathBuf>,
    /// Feed to trust, e.g. a court-held copy [default: the state feed].
    #[arg(long)]
    feed: Option<PathBuf>,
    /// Provider public key [default: the state's feed.pub].
    #[arg(long)]
    csp_pub: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 1000)]
    files: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "plain")]
    variant: Variant,
    #[arg(long, default_value_t = 3)]
    repetitions: usize,
    #[arg(long, default_value_t = 10)]
    buckets: usize,
    #[arg(long, default_value_t = bench::DEFAULT_MIN_KIB)]
    min_kib: u64,
    #[arg(long, default_value_t = bench::DEFAULT_MAX_KIB)]
    max_kib: u64,
    /// Also write the table records here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write a gnuplot-compatible column file here.
    #[arg(long)]
    gnuplot: Option<PathBuf>,
}

impl BenchArgs {
    fn config(&self) -> BenchConfig {
        BenchConfig {
            files: self.files,
            min_kib: self.min_kib,
            max_kib: self.max_kib,
            repetitions: self.repetitions,
            variant: self.variant.into(),
            seed: self.seed,
            buckets: self.buckets,
        }
    }
}

#[derive(Subcommand)]
enum BenchKind {
    /// Upload time with and without proof generation.
    Ingest(BenchArgs),
    /// Membership check time against a published day.
    Match {
        #[command(flatten)]
        args: BenchArgs,
        #[arg(long, value_enum, default_value = "true-positive")]
        mode: Mode,
    },
    /// Daily storage needed and saved.
    Storage {
        #[arg(long, default_value_t = 1)]
        users: u64,
        #[arg(long, default_value_t = 1000)]
        n_expected: u64,
        #[arg(long, default_value_t = 0.01)]
        fp_rate: f64,
        /// Average deleted data per user per day, in MB (10^6 bytes).
        #[arg(long, default_value_t = 5.0)]
        deleted_mb: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum Command {
    /// Create a state directory.
    Init {
        #[command(flatten)]
        filter: FilterArgs,
    },
    /// Generate a key pair. `csp` keys go into the state directory.
    Keygen {
        #[arg(value_enum)]
        role: Role,
        /// Path prefix for user keys: writes PREFIX.key and PREFIX.pub.
        #[arg(long, required_if_eq("role", "user"))]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Register a user on the current day.
    Register {
        user: String,
        #[arg(long, value_enum, default_value = "plain")]
        variant: Variant,
        /// User public key (PEM), required for the signed variant.
        #[arg(long)]
        user_pub: Option<PathBuf>,
        #[command(flatten)]
        filter: FilterArgs,
    },
    /// Sign a file with a user key; writes a hex signature file.
    Sign {
        #[arg(long)]
        key: PathBuf,
        file: PathBuf,
        /// [default: <FILE>.sig]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ingest a file for a user on the current day.
    Ingest {
        user: String,
        file: PathBuf,
        #[arg(long)]
        sig: Option<PathBuf>,
    },
    /// Snapshot and publish the current day, then advance the clock.
    Tick {
        /// Display time for the records [default: now, UTC].
        #[arg(long)]
        t: Option<String>,
    },
    /// Check whether a file was in a user's storage on a day.
    Verify {
        user: String,
        file: PathBuf,
        /// [default: the latest published day]
        #[arg(long)]
        day: Option<u64>,
        #[command(flatten)]
        evidence: EvidenceArgs,
    },
    /// Find the earliest published day containing a file.
    Timeline {
        user: String,
        file: PathBuf,
        #[command(flatten)]
        evidence: EvidenceArgs,
    },
    /// Check whether a file was present on any day of a range.
    Range {
        user: String,
        file: PathBuf,
        #[arg(long)]
        from: u64,
        #[arg(long)]
        to: u64,
        #[command(flatten)]
        evidence: EvidenceArgs,
    },
    /// Reveal a stored snapshot and check it against a feed record.
    Audit {
        user: String,
        #[arg(long)]
        day: u64,
        #[arg(long)]
        feed: Option<PathBuf>,
        #[arg(long)]
        csp_pub: Option<PathBuf>,
        /// Write the revealed snapshot bytes here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run adversarial scenarios.
    Scenario {
        #[arg(required_unless_present_any = ["all", "list"])]
        name: Option<String>,
        #[arg(long, conflicts_with = "name")]
        all: bool,
        #[arg(long)]
        list: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Benchmarks.
    Bench {
        #[command(subcommand)]
        kind: BenchKind,
    },
    /// Poll per-user drop directories under ROOT and ingest new files.
    Watch {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, default_value_t = 1000)]
        interval_ms: u64,
        /// Scan once and exit.
        #[arg(long)]
        once: bool,
    },
}

enum Status {
    Ok,
    Negative,
}

struct Out {
    human: bool,
}

impl Out {
    fn emit(&self, record: &Value, human: impl FnOnce() -> String) {
        if self.human {
            say!("{}", human());
        } else {
            say!("{}", canonical::to_string(record).expect("json value serializes"));
        }
    }

    fn raw(&self, canonical_line: &str, human: impl FnOnce() -> String) {
        if self.human {
            say!("{}", human());
        } else {
            say!("{canonical_line}");
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Negative) => ExitCode::from(1),
        Err(e) => {
            eprintln!("ppdp: error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn user_id(s: &str) -> Result<UserId> {
    UserId::new(s).map_err(|e| anyhow!("{e}"))
}

fn receipt_json(r: &IngestReceipt) -> Value {
    json!({
        "kind": "ingest",
        "user": r.user,
        "day": r.day,
        "epoch": r.epoch_seq,
        "digest": r.digest.to_hex(),
        "variant": r.digest.variant().as_str(),
        "rotated": r.rotated,
    })
}

fn read_sig(path: &Path) -> Result<Signature> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Signature::from_hex(text.trim()).with_context(|| format!("parsing {}", path.display()))
}

fn sidecar(file: &Path) -> PathBuf {
    let mut name = file.as_os_str().to_owned();
    name.push(".sig");
    PathBuf::from(name)
}

/// The evidence signature for a signed-variant user: `--sig`, else the
/// `<file>.sig` sidecar if it exists.
fn evidence_sig(store: &FilterStore, user: &UserId, file: &Path, sig: Option<&Path>) -> Result<Option<Signature>> {
    if store.user_record(user)?.variant == DigestVariant::Plain {
        if sig.is_some() {
            bail!("{user} uses the plain variant; --sig does not apply");
        }
        return Ok(None);
    }
    match sig {
        Some(p) => Ok(Some(read_sig(p)?)),
        None => {
            let p = sidecar(file);
            if p.exists() {
                Ok(Some(read_sig(&p)?))
            } else {
                Ok(None)
            }
        }
    }
}

fn load_feed(dir: &Path, path: Option<&Path>) -> Result<Vec<DailyProof>> {
    let path = path.map_or_else(|| dir.join(FEED_FILE), Path::to_path_buf);
    if !path.exists() && path == dir.join(FEED_FILE) {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(&path).with_context(|| format!("reading feed {}", path.display()))?;
    Ok(parse_feed(&text)?)
}

fn load_csp_pub(dir: &Path, path: Option<&Path>) -> Result<VerificationKey> {
    let path = path.map_or_else(|| ProofFeed::in_dir(dir).public_key_path(), Path::to_path_buf);
    VerificationKey::load(&path).with_context(|| format!("loading provider key {}", path.display()))
}

fn open_evidence(file: &Path) -> Result<File> {
    File::open(file).with_context(|| format!("opening {}", file.display()))
}

fn run(cli: Cli) -> Result<Status> {
    let out = Out { human: cli.human };
    let sd = cli.state_dir.as_path();
    match cli.command {
        Command::Init { filter } => {
            let defaults = filter.resolve(None)?;
            let (dir, state) = StateDir::init(sd, defaults)?;
            FilterStore::open(&dir.path)?;
            let params = params_for(state.defaults.n_expected, state.defaults.fp_rate)?;
            out.emit(
                &json!({
                    "kind": "init",
                    "state_dir": dir.path.display().to_string(),
                    "day": state.day,
                    "n_expected": state.defaults.n_expected,
                    "fp_rate": state.defaults.fp_rate,
                    "m_bits": params.m_bits,
                    "k_hashes": params.k_hashes,
                    "policy": serde_json::to_value(state.defaults.policy)?,
                }),
                || {
                    format!(
                        "initialized {} (m={} bits, k={}, day 0)",
                        dir.path.display(),
                        params.m_bits,
                        params.k_hashes
                    )
                },
            );
        }
        Command::Keygen { role, out: prefix, force } => {
            let (role, secret, public) = match role {
                Role::Csp => {
                    let (dir, _) = StateDir::open(sd, Access::Write)?;
                    (KeyRole::Csp, dir.csp_key_path(), ProofFeed::in_dir(&dir.path).public_key_path())
                }
                Role::User => {
                    let prefix = prefix.expect("required by clap");
                    let with = |ext: &str| {
                        let mut s = prefix.as_os_str().to_owned();
                        s.push(ext);
                        PathBuf::from(s)
                    };
                    (KeyRole::User, with(".key"), with(".pub"))
                }
            };
            let key = keygen(role, &secret, &public, force)?;
            out.emit(
                &json!({
                    "kind": "keygen",
                    "role": match role { KeyRole::Csp => "csp", KeyRole::User => "user" },
                    "public_key": key.to_hex(),
                    "secret_path": secret.display().to_string(),
                    "public_path": public.display().to_string(),
                }),
                || format!("wrote {} and {}", secret.display(), public.display()),
            );
        }
        Command::Register {
            user,
            variant,
            user_pub,
            filter,
        } => {
            let (dir, state) = StateDir::open(sd, Access::Write)?;
            let d = filter.resolve(Some(&state.defaults))?;
            let params = params_for(d.n_expected, d.fp_rate)?;
            let key = user_pub.as_deref().map(VerificationKey::load).transpose()?;
            let user = user_id(&user)?;
            let mut store = FilterStore::open(&dir.path)?;
            store.register_user(&user, params, d.policy, variant.into(), key, state.day)?;
            out.emit(
                &json!({
                    "kind": "register",
                    "user": user.as_str(),
                    "day": state.day,
                    "variant": DigestVariant::from(variant).as_str(),
                    "n_expected": params.n_expected,
                    "m_bits": params.m_bits,
                    "k_hashes": params.k_hashes,
                    "policy": serde_json::to_value(d.policy)?,
                }),
                || format!("registered {user} on day {} (m={}, k={})", state.day, params.m_bits, params.k_hashes),
            );
        }
        Command::Sign { key, file, out: dest } => {
            let key = UserKeyPair::load(&key)?;
            let sig = user_sign(open_evidence(&file)?, &key)?;
            let dest = dest.unwrap_or_else(|| sidecar(&file));
            fs::write(&dest, sig.to_hex() + "\n").with_context(|| format!("writing {}", dest.display()))?;
            out.emit(
                &json!({"kind": "signature", "file": file.display().to_string(), "sig": sig.to_hex(), "path": dest.display().to_string()}),
                || format!("signature written to {}", dest.display()),
            );
        }
        Command::Ingest { user, file, sig } => {
            let (dir, state) = StateDir::open(sd, Access::Write)?;
            let user = user_id(&user)?;
            let mut store = FilterStore::open(&dir.path)?;
            let sig = evidence_sig(&store, &user, &file, sig.as_deref())?;
            let receipt = store.ingest(&user, open_evidence(&file)?, state.day, sig.as_ref())?;
            out.emit(&receipt_json(&receipt), || {
                format!(
                    "ingested {} for {user} on day {} (epoch {}{})",
                    file.display(),
                    receipt.day,
                    receipt.epoch_seq,
                    if receipt.rotated { ", rotated" } else { "" }
                )
            });
        }
        Command::Tick { t } => {
            let (dir, mut state) = StateDir::open(sd, Access::Write)?;
            let key_path = dir.csp_key_path();
            if !key_path.exists() {
                bail!("no provider key; run `ppdp keygen csp` first");
            }
            let key = CspKeyPair::load(&key_path)?;
            let mut store = FilterStore::open(&dir.path)?;
            let feed = ProofFeed::in_dir(&dir.path);
            let day = state.day;
            let t = t.unwrap_or_else(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true));
            // A tick interrupted after the cut only needs to publish.
            let already_cut = {
                let mut users = store.users().peekable();
                users.peek().is_some()
                    && store
                        .users()
                        .all(|u| store.user_record(u).is_ok_and(|r| r.last_snapshot_day == Some(day)))
            };
            if !already_cut {
                store.snapshot_all(day)?;
            }
            let published = publish_day(&store, &feed, &key, day, &t)?;
            state.day += 1;
            dir.save(&state)?;
            out.emit(
                &json!({"kind": "tick", "day": day, "published": published, "next_day": state.day, "t": t}),
                || format!("published day {day} ({published} records); now day {}", state.day),
            );
        }
        Command::Verify {
            user,
            file,
            day,
            evidence,
        } => {
            let (dir, _) = StateDir::open(sd, Access::Read)?;
            let store = FilterStore::open(&dir.path)?;
            let user = user_id(&user)?;
            let feed = load_feed(&dir.path, evidence.feed.as_deref())?;
            let csp = load_csp_pub(&dir.path, evidence.csp_pub.as_deref())?;
            let sig = evidence_sig(&store, &user, &file, evidence.sig.as_deref())?;
            let day = match day {
                Some(d) => d,
                None => feed
                    .iter()
                    .filter(|r| r.user == user.as_str())
                    .map(|r| r.day)
                    .max()
                    .ok_or_else(|| anyhow!("no published record for {user} yet"))?,
            };
            let v = Verifier::new(&store, &feed, &csp);
            let m = v.check_membership(open_evidence(&file)?, &user, day, sig.as_ref())?;
            out.raw(&report::match_report(&m), || {
                format!(
                    "{}: {} {} in {user}'s storage on day {day} (epoch {}{})",
                    if m.is_positive() { "POSITIVE" } else { "NEGATIVE" },
                    file.display(),
                    if m.is_positive() { "was" } else { "was not found" },
                    m.epoch_seq,
                    if m.feed_signature_valid { "" } else { ", feed record signature INVALID" }
                )
            });
            if !m.is_positive() {
                return Ok(Status::Negative);
            }
        }
        Command::Timeline { user, file, evidence } => {
            let (dir, _) = StateDir::open(sd, Access::Read)?;
            let store = FilterStore::open(&dir.path)?;
            let user = user_id(&user)?;
            let feed = load_feed(&dir.path, evidence.feed.as_deref())?;
            let csp = load_csp_pub(&dir.path, evidence.csp_pub.as_deref())?;
            let sig = evidence_sig(&store, &user, &file, evidence.sig.as_deref())?;
            let v = Verifier::new(&store, &feed, &csp);
            let digest = v.digest(open_evidence(&file)?, &user, sig.as_ref())?;
            let t = v.find_generation_time(&digest, &user)?;
            out.raw(&report::timeline_report(&user, &t), || match t.earliest_day {
                Some(d) => format!("{} first appears in {user}'s proofs on day {d}", file.display()),
                None => format!("{} appears in none of {user}'s proofs", file.display()),
            });
        }
        Command::Range {
            user,
            file,
            from,
            to,
            evidence,
        } => {
            let (dir, _) = StateDir::open(sd, Access::Read)?;
            let store = FilterStore::open(&dir.path)?;
            let user = user_id(&user)?;
            let feed = load_feed(&dir.path, evidence.feed.as_deref())?;
            let csp = load_csp_pub(&dir.path, evidence.csp_pub.as_deref())?;
            let sig = evidence_sig(&store, &user, &file, evidence.sig.as_deref())?;
            let v = Verifier::new(&store, &feed, &csp);
            let digest = v.digest(open_evidence(&file)?, &user, sig.as_ref())?;
            let range = from..=to;
            let r = v.present_in_range(&digest, &user, range.clone())?;
            out.raw(&report::range_report(&user, &range, &r), || match r.witness_day {
                Some(d) => format!("PRESENT: {} in {user}'s storage during days {from}..={to} (day {d})", file.display()),
                None => format!("ABSENT: {} not in {user}'s proofs for days {from}..={to}", file.display()),
            });
            if !r.present {
                return Ok(Status::Negative);
            }
        }
        Command::Audit {
            user,
            day,
            feed,
            csp_pub,
            out: dest,
        } => {
            let (dir, _) = StateDir::open(sd, Access::Read)?;
            let store = FilterStore::open(&dir.path)?;
            let user = user_id(&user)?;
            let records = load_feed(&dir.path, feed.as_deref())?;
            let csp = load_csp_pub(&dir.path, csp_pub.as_deref())?;
            let reveal = audit_reveal(&store, &records, &user, day)?;
            let sig_ok = verify_feed_record(&reveal.record, &csp);
            if let Some(dest) = &dest {
                fs::write(dest, &reveal.snapshot).with_context(|| format!("writing {}", dest.display()))?;
            }
            out.emit(
                &json!({
                    "kind": "audit",
                    "user": user.as_str(),
                    "day": day,
                    "epoch": reveal.record.epoch,
                    "filter_hash": hex::encode(reveal.record.filter_hash),
                    "snapshot_sha256": hex::encode(ppdp_core::evidence::sha256(&reveal.snapshot)),
                    "snapshot_bytes": reveal.snapshot.len(),
                    "hash_matches": reveal.hash_matches,
                    "record_signature_valid": sig_ok,
                }),
                || {
                    format!(
                        "audit {user} day {day}: snapshot {} the published hash; record signature {}",
                        if reveal.hash_matches { "matches" } else { "DOES NOT match" },
                        if sig_ok { "valid" } else { "INVALID" }
                    )
                },
            );
            if !(reveal.hash_matches && sig_ok) {
                return Ok(Status::Negative);
            }
        }
        Command::Scenario { name, all, list, seed } => {
            if list {
                for n in SCENARIO_NAMES {
                    let s = scenario::scenario(n).expect("listed");
                    out.emit(&json!({"kind": "scenario_name", "name": n, "summary": s.summary}), || {
                        format!("{n:<24} {}", s.summary)
                    });
                }
                return Ok(Status::Ok);
            }
            let outcomes = if all {
                scenario::run_all(seed)?.outcomes
            } else {
                vec![scenario::run_scenario(name.as_deref().expect("required by clap"), seed)?]
            };
            let summary = scenario::Summary { seed, outcomes };
            if out.human {
                say_raw!("{}", summary.table());
                for o in &summary.outcomes {
                    for a in o.assertions.iter().filter(|a| !a.passed) {
                        say!("FAILED {}: {} ({})", o.name, a.check, a.detail);
                    }
                }
            } else {
                for o in &summary.outcomes {
                    let mut v = serde_json::to_value(o)?;
                    v["kind"] = json!("scenario");
                    v["passed"] = json!(o.passed());
                    say!("{}", canonical::to_string(&v)?);
                }
            }
            if summary.failures() > 0 {
                return Ok(Status::Negative);
            }
        }
        Command::Bench { kind } => run_bench(kind, &out)?,
        Command::Watch { root, interval_ms, once } => {
            let stop = Arc::new(AtomicBool::new(false));
            if !once {
                let s = Arc::clone(&stop);
                ctrlc::set_handler(move || s.store(true, Ordering::SeqCst))?;
            }
            let poll = || -> Result<()> {
                // The lock is taken per poll so `tick` can run in between.
                let (dir, state) = StateDir::open(sd, Access::Write)?;
                let mut store = FilterStore::open(&dir.path)?;
                let mut seen = SeenSet::in_state_dir(&dir.path)?;
                let config = WatchConfig::for_store(&root, &store);
                for d in config.user_dirs.values() {
                    fs::create_dir_all(d)?;
                }
                let outcome = watch_once(&config, &mut store, &mut seen, state.day)?;
                for r in &outcome.receipts {
                    out.emit(&receipt_json(r), || format!("ingested {} for {} on day {}", r.digest.to_hex(), r.user, r.day));
                }
                for (path, reason) in &outcome.skipped {
                    eprintln!("ppdp: skipped {}: {reason}", path.display());
                }
                Ok(())
            };
            if once {
                poll()?;
            } else {
                watch_loop(Duration::from_millis(interval_ms), &stop, poll)?;
            }
        }
    }
    Ok(Status::Ok)
}

fn write_outputs(records: &str, gnuplot: Option<(&Path, String)>, dest: Option<&Path>) -> Result<()> {
    if let Some(p) = dest {
        fs::write(p, records).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some((p, text)) = gnuplot {
        fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn run_bench(kind: BenchKind, out: &Out) -> Result<()> {
    match kind {
        BenchKind::Ingest(args) => {
            let r = bench::bench_ingest(&args.config())?;
            let records = r.to_records();
            write_outputs(&records, args.gnuplot.as_deref().map(|p| (p, r.to_gnuplot())), args.out.as_deref())?;
            if out.human {
                say!("{:>8} {:>12} {:>12} {:>14} {:>12}", "bucket", "size KiB", "base ms", "with proof ms", "overhead %");
                for row in &r.rows {
                    say!(
                        "{:>8} {:>12.1} {:>12.3} {:>14.3} {:>12.2}",
                        row.bucket, row.mean_size_kib, row.baseline_ms, row.with_proof_ms, row.overhead_pct
                    );
                }
            } else {
                say_raw!("{records}");
            }
        }
        BenchKind::Match { args, mode } => {
            let mode = match mode {
                Mode::TruePositive => MatchMode::TruePositive,
                Mode::TrueNegative => MatchMode::TrueNegative,
            };
            let r = bench::bench_match(&args.config(), mode)?;
            let records = r.to_records();
            write_outputs(&records, args.gnuplot.as_deref().map(|p| (p, r.to_gnuplot())), args.out.as_deref())?;
            if out.human {
                say!("spearman(size, time) = {:.3}", r.spearman);
                say!("{:>8} {:>12} {:>12} {:>10}", "bucket", "size KiB", "match ms", "positive");
                for row in &r.rows {
                    say!(
                        "{:>8} {:>12.1} {:>12.3} {:>10}",
                        row.bucket, row.mean_size_kib, row.mean_match_ms, row.positives
                    );
                }
            } else {
                say_raw!("{records}");
            }
        }
        BenchKind::Storage {
            users,
            n_expected,
            fp_rate,
            deleted_mb,
            out: dest,
        } => {
            let params = params_for(n_expected, fp_rate)?;
            let r = bench::storage_report(users, &params, deleted_mb * MB);
            let records = r.to_records();
            write_outputs(&records, None, dest.as_deref())?;
            if out.human {
                say!(
                    "{} user(s): {} bytes/user/day of filter ({} bytes/day total); saves {:.6} MB/user/day ({:.6} MB/day)",
                    r.users,
                    r.filter_bytes_per_user_day,
                    r.filter_bytes_per_day,
                    r.savings_mb_per_user_day,
                    r.savings_mb_per_day
                );
            } else {
                say_raw!("{records}");
            }
        }
    }
    Ok(())
}
