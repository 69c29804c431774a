//! Symmetric primitives used by the proxy.
//!
//! Two encryption schemes are exposed over AES-128-CBC with PKCS#7 padding:
//!
//! * RND: a fresh random IV per call, prefixed to the ciphertext. Equal
//!   plaintexts map to different ciphertexts.
//! * DET: a fixed all-zero IV under a separate key. Equal plaintexts map to
//!   equal ciphertexts, which is what lets the store look rows up by an
//!   encrypted partition key. This leaks equality and is weaker than a
//!   synthetic-IV construction.
//!
//! All keys are derived from a single 32-byte master secret with
//! HMAC-SHA256 under fixed labels.

use std::fmt;

use aes::cipher::block_padding::Pkcs7;
use aes::cipher::{BlockDecryptMut, BlockEncryptMut, KeyIvInit};
use hmac::{Hmac, Mac};
use rand::RngCore;
use sha2::Sha256;
use thiserror::Error;

type Aes128CbcEnc = cbc::Encryptor<aes::Aes128>;
type Aes128CbcDec = cbc::Decryptor<aes::Aes128>;
type HmacSha256 = Hmac<Sha256>;

/// AES block size in bytes.
pub const BLOCK_LEN: usize = 16;
/// Symmetric key length for the block cipher (AES-128).
pub const CIPHER_KEY_LEN: usize = 16;
/// Master secret length.
pub const MASTER_KEY_LEN: usize = 32;
/// HMAC-SHA256 output length.
pub const TAG_LEN: usize = 32;

const LABEL_DET: &[u8] = b"det";
const LABEL_RND: &[u8] = b"rnd";
const LABEL_MAC: &[u8] = b"mac";
const LABEL_META: &[u8] = b"meta";

/// Environment variable holding the hex-encoded master key.
pub const MASTER_KEY_ENV: &str = "SECNOSQL_MASTER_KEY";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("key derivation: master key must be {expected} bytes, got {actual}")]
    KeyLength { expected: usize, actual: usize },
    #[error("key derivation: master key is not valid hex: {0}")]
    KeyEncoding(String),
    #[error("decryption: ciphertext length {0} is not a valid {1:?} length")]
    CiphertextLength(usize, Scheme),
    #[error("decryption: expected {expected:?} ciphertext, got {actual:?}")]
    SchemeMismatch { expected: Scheme, actual: Scheme },
    #[error("decryption: invalid padding")]
    Padding,
    #[error("anonymization: empty name")]
    EmptyName,
}

/// The 32-byte root secret. Its `Debug` output is redacted.
#[derive(Clone, PartialEq, Eq)]
pub struct MasterKey([u8; MASTER_KEY_LEN]);

impl MasterKey {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; MASTER_KEY_LEN] = bytes.try_into().map_err(|_| CryptoError::KeyLength {
            expected: MASTER_KEY_LEN,
            actual: bytes.len(),
        })?;
        Ok(MasterKey(arr))
    }

    /// Parses 64 hex characters.
    pub fn from_hex(text: &str) -> Result<Self, CryptoError> {
        let bytes =
            hex::decode(text.trim()).map_err(|e| CryptoError::KeyEncoding(e.to_string()))?;
        Self::from_bytes(&bytes)
    }

    /// Reads the key from [`MASTER_KEY_ENV`], if set.
    pub fn from_env() -> Option<Result<Self, CryptoError>> {
        std::env::var(MASTER_KEY_ENV).ok().map(|v| Self::from_hex(&v))
    }

    pub fn random() -> Self {
        let mut bytes = [0u8; MASTER_KEY_LEN];
        rand::thread_rng().fill_bytes(&mut bytes);
        MasterKey(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; MASTER_KEY_LEN] {
        &self.0
    }
}

impl fmt::Debug for MasterKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("MasterKey(..)")
    }
}

/// Per-purpose keys derived from a [`MasterKey`].
#[derive(Clone, PartialEq, Eq)]
pub struct KeySet {
    pub det_key: [u8; CIPHER_KEY_LEN],
    pub rnd_key: [u8; CIPHER_KEY_LEN],
    pub mac_key: [u8; TAG_LEN],
    pub meta_key: [u8; TAG_LEN],
}

impl fmt::Debug for KeySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("KeySet(..)")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Rnd,
    Det,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Ciphertext {
    pub scheme: Scheme,
    pub bytes: Vec<u8>,
}

impl Ciphertext {
    pub fn new(scheme: Scheme, bytes: Vec<u8>) -> Result<Self, CryptoError> {
        check_length(scheme, bytes.len())?;
        Ok(Ciphertext { scheme, bytes })
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct HmacTag(pub [u8; TAG_LEN]);

impl HmacTag {
    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        bytes.try_into().ok().map(HmacTag)
    }

    pub fn as_bytes(&self) -> &[u8; TAG_LEN] {
        &self.0
    }

    /// Comparison whose running time does not depend on where the tags differ.
    pub fn ct_eq(&self, other: &HmacTag) -> bool {
        self.0
            .iter()
            .zip(other.0.iter())
            .fold(0u8, |acc, (a, b)| acc | (a ^ b))
            == 0
    }
}

impl fmt::Debug for HmacTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HmacTag({})", hex::encode(self.0))
    }
}

/// Whether a pseudonym names a table or a column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NameKind {
    Table,
    Column,
}

impl NameKind {
    fn prefix(self) -> char {
        match self {
            NameKind::Table => 't',
            NameKind::Column => 'c',
        }
    }

    fn domain_byte(self) -> u8 {
        match self {
            NameKind::Table => 0x01,
            NameKind::Column => 0x02,
        }
    }
}

fn hmac_sha256(key: &[u8], parts: &[&[u8]]) -> [u8; TAG_LEN] {
    let mut mac = HmacSha256::new_from_slice(key).expect("HMAC accepts keys of any length");
    for part in parts {
        mac.update(part);
    }
    mac.finalize().into_bytes().into()
}

pub fn derive_keys(master: &MasterKey) -> KeySet {
    let secret = master.as_bytes();
    let det = hmac_sha256(secret, &[LABEL_DET]);
    let rnd = hmac_sha256(secret, &[LABEL_RND]);
    let mut det_key = [0u8; CIPHER_KEY_LEN];
    let mut rnd_key = [0u8; CIPHER_KEY_LEN];
    det_key.copy_from_slice(&det[..CIPHER_KEY_LEN]);
    rnd_key.copy_from_slice(&rnd[..CIPHER_KEY_LEN]);
    KeySet {
        det_key,
        rnd_key,
        mac_key: hmac_sha256(secret, &[LABEL_MAC]),
        meta_key: hmac_sha256(secret, &[LABEL_META]),
    }
}

/// Derives keys from raw bytes, validating the master length.
pub fn derive_keys_from_bytes(master: &[u8]) -> Result<KeySet, CryptoError> {
    Ok(derive_keys(&MasterKey::from_bytes(master)?))
}

/// Ciphertext body length for a plaintext of `len` bytes (padding included, IV excluded).
pub fn padded_len(len: usize) -> usize {
    BLOCK_LEN * (len / BLOCK_LEN + 1)
}

fn check_length(scheme: Scheme, len: usize) -> Result<(), CryptoError> {
    let body = match scheme {
        Scheme::Rnd => len.checked_sub(BLOCK_LEN),
        Scheme::Det => Some(len),
    };
    match body {
        Some(b) if b >= BLOCK_LEN && b % BLOCK_LEN == 0 => Ok(()),
        _ => Err(CryptoError::CiphertextLength(len, scheme)),
    }
}

fn cbc_encrypt(key: &[u8; CIPHER_KEY_LEN], iv: &[u8; BLOCK_LEN], plaintext: &[u8]) -> Vec<u8> {
    Aes128CbcEnc::new(key.into(), iv.into()).encrypt_padded_vec_mut::<Pkcs7>(plaintext)
}

fn cbc_decrypt(
    key: &[u8; CIPHER_KEY_LEN],
    iv: &[u8; BLOCK_LEN],
    body: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    Aes128CbcDec::new(key.into(), iv.into())
        .decrypt_padded_vec_mut::<Pkcs7>(body)
        .map_err(|_| CryptoError::Padding)
}

/// RND encryption. `iv = None` draws a fresh IV from the thread RNG; an
/// explicit IV exists for reproducible tests.
pub fn rnd_encrypt(keys: &KeySet, plaintext: &[u8], iv: Option<[u8; BLOCK_LEN]>) -> Ciphertext {
    let iv = iv.unwrap_or_else(|| {
        let mut iv = [0u8; BLOCK_LEN];
        rand::thread_rng().fill_bytes(&mut iv);
        iv
    });
    let body = cbc_encrypt(&keys.rnd_key, &iv, plaintext);
    let mut bytes = Vec::with_capacity(BLOCK_LEN + body.len());
    bytes.extend_from_slice(&iv);
    bytes.extend_from_slice(&body);
    Ciphertext {
        scheme: Scheme::Rnd,
        bytes,
    }
}

pub fn rnd_decrypt(keys: &KeySet, ct: &Ciphertext) -> Result<Vec<u8>, CryptoError> {
    expect_scheme(ct, Scheme::Rnd)?;
    rnd_decrypt_bytes(keys, &ct.bytes)
}

/// RND decryption of raw stored bytes (IV prefix included).
pub fn rnd_decrypt_bytes(keys: &KeySet, bytes: &[u8]) -> Result<Vec<u8>, CryptoError> {
    check_length(Scheme::Rnd, bytes.len())?;
    let (iv, body) = bytes.split_at(BLOCK_LEN);
    let iv: [u8; BLOCK_LEN] = iv.try_into().expect("split at block length");
    cbc_decrypt(&keys.rnd_key, &iv, body)
}

pub fn det_encrypt(keys: &KeySet, plaintext: &[u8]) -> Ciphertext {
    Ciphertext {
        scheme: Scheme::Det,
        bytes: cbc_encrypt(&keys.det_key, &[0u8; BLOCK_LEN], plaintext),
    }
}

pub fn det_decrypt(keys: &KeySet, ct: &Ciphertext) -> Result<Vec<u8>, CryptoError> {
    expect_scheme(ct, Scheme::Det)?;
    check_length(Scheme::Det, ct.bytes.len())?;
    cbc_decrypt(&keys.det_key, &[0u8; BLOCK_LEN], &ct.bytes)
}

fn expect_scheme(ct: &Ciphertext, expected: Scheme) -> Result<(), CryptoError> {
    if ct.scheme != expected {
        return Err(CryptoError::SchemeMismatch {
            expected,
            actual: ct.scheme,
        });
    }
    Ok(())
}

/// HMAC-SHA256 of a canonical row serialization under the MAC key.
pub fn record_hmac(keys: &KeySet, canonical: &[u8]) -> HmacTag {
    HmacTag(hmac_sha256(&keys.mac_key, &[canonical]))
}

/// Deterministic identifier-safe pseudonym: `t` or `c` followed by 32 hex digits.
pub fn anonymize_name(keys: &KeySet, kind: NameKind, name: &str) -> Result<String, CryptoError> {
    if name.is_empty() {
        return Err(CryptoError::EmptyName);
    }
    let digest = hmac_sha256(&keys.meta_key, &[&[kind.domain_byte()], name.as_bytes()]);
    let mut out = String::with_capacity(33);
    out.push(kind.prefix());
    out.push_str(&hex::encode(&digest[..16]));
    Ok(out)
}
