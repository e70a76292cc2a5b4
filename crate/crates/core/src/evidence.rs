//! Evidence digests and the key material that signs commitments.
//!
//! A plain digest is `SHA-256(len(user) as u64 BE || user || file)`. The
//! signed variant replaces the file bytes with the user's Ed25519 signature
//! over `SHA-256(file)`, so only the key holder can place an item in the
//! filter.

use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::{self, Read, Write};
use std::path::Path;

use ed25519_dalek::pkcs8::spki::der::pem::LineEnding;
use ed25519_dalek::pkcs8::{DecodePrivateKey, DecodePublicKey, EncodePrivateKey, EncodePublicKey};
use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Streaming read size for evidence hashing.
pub const CHUNK_SIZE: usize = 1 << 20;
pub const HASH_ALG: &str = "sha256";
pub const SIG_ALG: &str = "ed25519";
pub const DIGEST_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;

#[derive(Debug, Error)]
pub enum KeyError {
    #[error("malformed key: {0}")]
    Malformed(String),
    #[error("refusing to overwrite existing key file {0}")]
    AlreadyExists(String),
    #[error("key i/o: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum UserIdError {
    #[error("user id must not be empty")]
    Empty,
    #[error("user id must not contain NUL")]
    ContainsNul,
}

/// Identity bound into every digest, e.g. an email address.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UserId(String);

impl UserId {
    pub fn new(id: impl Into<String>) -> Result<Self, UserIdError> {
        let id = id.into();
        if id.is_empty() {
            return Err(UserIdError::Empty);
        }
        if id.contains('\0') {
            return Err(UserIdError::ContainsNul);
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn prefix(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.0.len());
        out.extend_from_slice(&(self.0.len() as u64).to_be_bytes());
        out.extend_from_slice(self.0.as_bytes());
        out
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for UserId {
    type Err = UserIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DigestVariant {
    Plain,
    Signed,
}

impl DigestVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            DigestVariant::Plain => "plain",
            DigestVariant::Signed => "signed",
        }
    }
}

impl fmt::Display for DigestVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DigestVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plain" => Ok(DigestVariant::Plain),
            "signed" => Ok(DigestVariant::Signed),
            other => Err(format!("unknown variant {other:?} (expected plain|signed)")),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct EvidenceDigest {
    bytes: [u8; DIGEST_LEN],
    variant: DigestVariant,
}

impl EvidenceDigest {
    pub fn new(bytes: [u8; DIGEST_LEN], variant: DigestVariant) -> Self {
        Self { bytes, variant }
    }

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.bytes
    }

    pub fn variant(&self) -> DigestVariant {
        self.variant
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.bytes)
    }

    pub fn from_hex(s: &str, variant: DigestVariant) -> Option<Self> {
        let bytes: [u8; DIGEST_LEN] = hex::decode(s).ok()?.try_into().ok()?;
        Some(Self::new(bytes, variant))
    }
}

impl fmt::Debug for EvidenceDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EvidenceDigest({}:{})", self.variant, self.to_hex())
    }
}

fn hash_stream(hasher: &mut Sha256, mut reader: impl Read) -> io::Result<()> {
    let mut buf = vec![0u8; CHUNK_SIZE];
    loop {
        let n = match reader.read(&mut buf) {
            Ok(0) => return Ok(()),
            Ok(n) => n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        };
        hasher.update(&buf[..n]);
    }
}

/// SHA-256 of a byte stream, read in [`CHUNK_SIZE`] chunks.
pub fn sha256_stream(reader: impl Read) -> io::Result<[u8; DIGEST_LEN]> {
    let mut hasher = Sha256::new();
    hash_stream(&mut hasher, reader)?;
    Ok(hasher.finalize().into())
}

pub fn sha256(data: &[u8]) -> [u8; DIGEST_LEN] {
    Sha256::digest(data).into()
}

/// Digest of a file bound to `user`.
pub fn digest_plain(file: impl Read, user: &UserId) -> io::Result<EvidenceDigest> {
    let mut hasher = Sha256::new();
    hasher.update(user.prefix());
    hash_stream(&mut hasher, file)?;
    Ok(EvidenceDigest::new(hasher.finalize().into(), DigestVariant::Plain))
}

/// Digest of a user signature bound to `user`.
pub fn digest_signed(sig: &Signature, user: &UserId) -> EvidenceDigest {
    let mut hasher = Sha256::new();
    hasher.update(user.prefix());
    hasher.update(sig.as_bytes());
    EvidenceDigest::new(hasher.finalize().into(), DigestVariant::Signed)
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature([u8; SIGNATURE_LEN]);

impl Signature {
    pub fn from_bytes(bytes: [u8; SIGNATURE_LEN]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; SIGNATURE_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, KeyError> {
        let raw = hex::decode(s.trim()).map_err(|e| KeyError::Malformed(e.to_string()))?;
        let bytes: [u8; SIGNATURE_LEN] = raw.try_into().map_err(|v: Vec<u8>| {
            KeyError::Malformed(format!("signature is {} bytes, expected {SIGNATURE_LEN}", v.len()))
        })?;
        Ok(Self(bytes))
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({})", self.to_hex())
    }
}

/// Public half of a signing key.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct VerificationKey(VerifyingKey);

impl VerificationKey {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, KeyError> {
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| KeyError::Malformed(format!("public key is {} bytes", bytes.len())))?;
        VerifyingKey::from_bytes(&arr)
            .map(Self)
            .map_err(|e| KeyError::Malformed(e.to_string()))
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        self.0.to_bytes()
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }

    pub fn from_hex(s: &str) -> Result<Self, KeyError> {
        let raw = hex::decode(s.trim()).map_err(|e| KeyError::Malformed(e.to_string()))?;
        Self::from_bytes(&raw)
    }

    pub fn to_pem(&self) -> String {
        self.0
            .to_public_key_pem(LineEnding::LF)
            .expect("ed25519 public keys always encode")
    }

    pub fn from_pem(pem: &str) -> Result<Self, KeyError> {
        VerifyingKey::from_public_key_pem(pem)
            .map(Self)
            .map_err(|e| KeyError::Malformed(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, KeyError> {
        Self::from_pem(&fs::read_to_string(path)?)
    }

    fn verify(&self, msg: &[u8], sig: &Signature) -> bool {
        let sig = ed25519_dalek::Signature::from_bytes(sig.as_bytes());
        self.0.verify_strict(msg, &sig).is_ok()
    }
}

impl fmt::Debug for VerificationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VerificationKey({})", self.to_hex())
    }
}

macro_rules! key_pair {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        pub struct $name {
            key: SigningKey,
        }

        impl $name {
            pub fn generate() -> Self {
                Self { key: SigningKey::generate(&mut rand::rngs::OsRng) }
            }

            /// Deterministic key from 32 seed bytes (tests, fixtures, demos).
            pub fn from_seed(seed: [u8; 32]) -> Self {
                Self { key: SigningKey::from_bytes(&seed) }
            }

            pub fn verification_key(&self) -> VerificationKey {
                VerificationKey(self.key.verifying_key())
            }

            pub fn secret_pem(&self) -> String {
                self.key
                    .to_pkcs8_pem(LineEnding::LF)
                    .expect("ed25519 secret keys always encode")
                    .to_string()
            }

            pub fn from_secret_pem(pem: &str) -> Result<Self, KeyError> {
                SigningKey::from_pkcs8_pem(pem)
                    .map(|key| Self { key })
                    .map_err(|e| KeyError::Malformed(e.to_string()))
            }

            pub fn load(path: &Path) -> Result<Self, KeyError> {
                Self::from_secret_pem(&fs::read_to_string(path)?)
            }

            fn sign_raw(&self, msg: &[u8]) -> Signature {
                Signature(self.key.sign(msg).to_bytes())
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.debug_struct(stringify!($name))
                    .field("public", &self.verification_key())
                    .finish_non_exhaustive()
            }
        }
    };
}

key_pair!(
    /// The provider's commitment-signing key.
    CspKeyPair
);
key_pair!(
    /// A user's evidence-signing key for the signed variant.
    UserKeyPair
);

/// User signature over `SHA-256(file)`.
pub fn user_sign(file: impl Read, key: &UserKeyPair) -> io::Result<Signature> {
    let h = sha256_stream(file)?;
    Ok(key.sign_raw(&h))
}

pub fn verify_user_signature(
    file: impl Read,
    sig: &Signature,
    user_pub: &VerificationKey,
) -> io::Result<bool> {
    let h = sha256_stream(file)?;
    Ok(user_pub.verify(&h, sig))
}

pub fn sign_commitment(data: &[u8], key: &CspKeyPair) -> Signature {
    key.sign_raw(data)
}

pub fn verify_commitment(data: &[u8], sig: &Signature, public: &VerificationKey) -> bool {
    public.verify(data, sig)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyRole {
    Csp,
    User,
}

impl std::str::FromStr for KeyRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csp" => Ok(KeyRole::Csp),
            "user" => Ok(KeyRole::User),
            other => Err(format!("unknown key role {other:?} (expected csp|user)")),
        }
    }
}

fn write_key_file(path: &Path, contents: &str, mode: u32, overwrite: bool) -> Result<(), KeyError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut opts = OpenOptions::new();
    opts.write(true);
    if overwrite {
        opts.create(true).truncate(true);
    } else {
        opts.create_new(true);
    }
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        opts.mode(mode);
    }
    #[cfg(not(unix))]
    let _ = mode;
    let mut file = opts.open(path).map_err(|e| {
        if e.kind() == io::ErrorKind::AlreadyExists {
            KeyError::AlreadyExists(path.display().to_string())
        } else {
            KeyError::Io(e)
        }
    })?;
    file.write_all(contents.as_bytes())?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        fs::set_permissions(path, fs::Permissions::from_mode(mode))?;
    }
    Ok(())
}

/// Generates a fresh key pair and writes the secret half (PKCS#8 PEM, mode
/// 0600) and the public half (SPKI PEM) to separate files.
pub fn keygen(
    role: KeyRole,
    secret_path: &Path,
    public_path: &Path,
    overwrite: bool,
) -> Result<VerificationKey, KeyError> {
    if !overwrite {
        for p in [secret_path, public_path] {
            if p.exists() {
                return Err(KeyError::AlreadyExists(p.display().to_string()));
            }
        }
    }
    let (secret, public) = match role {
        KeyRole::Csp => {
            let k = CspKeyPair::generate();
            (k.secret_pem(), k.verification_key())
        }
        KeyRole::User => {
            let k = UserKeyPair::generate();
            (k.secret_pem(), k.verification_key())
        }
    };
    write_key_file(secret_path, &secret, 0o600, overwrite)?;
    write_key_file(public_path, &public.to_pem(), 0o644, overwrite)?;
    Ok(public)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn user(s: &str) -> UserId {
        UserId::new(s).unwrap()
    }

    #[test]
    fn user_id_validation() {
        assert_eq!(UserId::new(""), Err(UserIdError::Empty));
        assert_eq!(UserId::new("a\0b"), Err(UserIdError::ContainsNul));
        assert!(UserId::new("alice@example.org").is_ok());
    }

    #[test]
    fn empty_file_digest_golden() {
        // sha256(00 00 00 00 00 00 00 05 || "a@b.c"), computed with hashlib.
        let d = digest_plain(io::empty(), &user("a@b.c")).unwrap();
        assert_eq!(
            d.to_hex(),
            "c7954b2b6172ec43d71d4de6a9533a0726af40290a7c47ae3303bcf038611f57"
        );
        assert_eq!(d.variant(), DigestVariant::Plain);
    }

    #[test]
    fn user_binding_is_length_delimited() {
        let a = digest_plain(&b"cfile"[..], &user("ab")).unwrap();
        let b = digest_plain(&b"bcfile"[..], &user("a")).unwrap();
        assert_ne!(a, b);
        let c = digest_plain(&b"x"[..], &user("u1")).unwrap();
        let d = digest_plain(&b"x"[..], &user("u2")).unwrap();
        assert_ne!(c, d);
        assert_eq!(c, digest_plain(&b"x"[..], &user("u1")).unwrap());
    }

    #[test]
    fn streaming_matches_one_shot_across_chunks() {
        let data: Vec<u8> = (0..(CHUNK_SIZE * 2 + 17)).map(|i| (i % 251) as u8).collect();
        let streamed = digest_plain(&data[..], &user("u")).unwrap();
        let mut pre = user("u").prefix();
        pre.extend_from_slice(&data);
        assert_eq!(streamed.as_bytes(), &sha256(&pre));
    }

    #[test]
    fn user_signature_round_trip() {
        let alice = UserKeyPair::from_seed([1; 32]);
        let bob = UserKeyPair::from_seed([2; 32]);
        let sig = user_sign(&b"evidence"[..], &alice).unwrap();
        assert_eq!(sig, user_sign(&b"evidence"[..], &alice).unwrap());
        assert!(verify_user_signature(&b"evidence"[..], &sig, &alice.verification_key()).unwrap());
        assert!(!verify_user_signature(&b"evidence"[..], &sig, &bob.verification_key()).unwrap());
        assert!(!verify_user_signature(&b"evidencf"[..], &sig, &alice.verification_key()).unwrap());
    }

    #[test]
    fn signed_and_plain_digests_never_match() {
        let key = UserKeyPair::from_seed([3; 32]);
        let u = user("u@x");
        let sig = user_sign(&b"f"[..], &key).unwrap();
        let s = digest_signed(&sig, &u);
        let p = digest_plain(&b"f"[..], &u).unwrap();
        assert_eq!(s.variant(), DigestVariant::Signed);
        assert_ne!(s, p);
        assert_eq!(s, digest_signed(&sig, &u));
    }

    #[test]
    fn commitment_round_trip_and_tamper() {
        let a = CspKeyPair::from_seed([4; 32]);
        let b = CspKeyPair::from_seed([5; 32]);
        let sig = sign_commitment(b"data", &a);
        assert!(verify_commitment(b"data", &sig, &a.verification_key()));
        assert!(!verify_commitment(b"datb", &sig, &a.verification_key()));
        assert!(!verify_commitment(b"data", &sig, &b.verification_key()));
        let mut raw = *sig.as_bytes();
        raw[10] ^= 1;
        assert!(!verify_commitment(b"data", &Signature::from_bytes(raw), &a.verification_key()));
    }

    #[test]
    fn pem_round_trip() {
        let k = CspKeyPair::from_seed([6; 32]);
        let back = CspKeyPair::from_secret_pem(&k.secret_pem()).unwrap();
        assert_eq!(back.verification_key(), k.verification_key());
        let pubk = VerificationKey::from_pem(&k.verification_key().to_pem()).unwrap();
        assert_eq!(pubk, k.verification_key());
        assert!(VerificationKey::from_pem("garbage").is_err());
        assert!(VerificationKey::from_bytes(&[1, 2, 3]).is_err());
    }

    #[test]
    fn debug_output_hides_secret() {
        let k = UserKeyPair::from_seed([7; 32]);
        let dbg = format!("{k:?}");
        assert!(!dbg.contains(&hex::encode([7u8; 32])));
        assert!(!dbg.contains("PRIVATE"));
    }

    #[test]
    fn keygen_refuses_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let sk = dir.path().join("csp.key");
        let pk = dir.path().join("csp.pub");
        let public = keygen(KeyRole::Csp, &sk, &pk, false).unwrap();
        assert_eq!(VerificationKey::load(&pk).unwrap(), public);
        assert_eq!(CspKeyPair::load(&sk).unwrap().verification_key(), public);
        assert!(matches!(
            keygen(KeyRole::Csp, &sk, &pk, false),
            Err(KeyError::AlreadyExists(_))
        ));
        let replaced = keygen(KeyRole::Csp, &sk, &pk, true).unwrap();
        assert_ne!(replaced, public);
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            let mode = fs::metadata(&sk).unwrap().permissions().mode() & 0o777;
            assert_eq!(mode, 0o600);
        }
    }
}
