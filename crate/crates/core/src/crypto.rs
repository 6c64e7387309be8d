//! Salsa20 encryption contexts, symmetric and user keys, key portfolios.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::rngs::OsRng;
use rand::RngCore;
use rsa::pkcs8::{DecodePrivateKey, DecodePublicKey, EncodePrivateKey, EncodePublicKey, LineEnding};
use rsa::{Oaep, RsaPrivateKey, RsaPublicKey};
use salsa20::cipher::{KeyIvInit, StreamCipher};
use salsa20::Salsa20;
use sha2::{Digest, Sha256};

use crate::coding::{ByteReader, ByteWriter};
use crate::error::{Error, Result};

pub const KEY_LEN: usize = 32;
pub const RSA_BITS: usize = 2048;

const PORTFOLIO_MAGIC: &[u8; 4] = b"ERPF";
const PORTFOLIO_VERSION: u16 = 1;

/// 256-bit Salsa20 key.
#[derive(Clone, PartialEq, Eq)]
pub struct SymmetricKey([u8; KEY_LEN]);

impl SymmetricKey {
    pub fn generate() -> Self {
        let mut k = [0u8; KEY_LEN];
        OsRng.fill_bytes(&mut k);
        SymmetricKey(k)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let k: [u8; KEY_LEN] = bytes
            .try_into()
            .map_err(|_| Error::Crypto(format!("key must be {KEY_LEN} bytes, got {}", bytes.len())))?;
        Ok(SymmetricKey(k))
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(text: &str) -> Result<Self> {
        let text = text.trim();
        if text.len() != KEY_LEN * 2 || !text.is_ascii() {
            return Err(Error::Crypto("key file must hold 64 hex digits".into()));
        }
        let bytes = (0..KEY_LEN)
            .map(|i| u8::from_str_radix(&text[2 * i..2 * i + 2], 16))
            .collect::<std::result::Result<Vec<u8>, _>>()
            .map_err(|_| Error::Crypto("key file is not hexadecimal".into()))?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_hex() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_hex(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

impl fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SymmetricKey(..)")
    }
}

pub fn generate_key() -> SymmetricKey {
    SymmetricKey::generate()
}

/// Salsa20/20 keyed by `(key, nonce)`; the 64-bit nonce is laid out little-endian.
pub struct EncryptionContext {
    cipher: Salsa20,
    nonce: u64,
    offset: u64,
}

impl EncryptionContext {
    pub fn new(key: &SymmetricKey, nonce: u64) -> Self {
        EncryptionContext {
            cipher: Salsa20::new(key.as_bytes().into(), &nonce.to_le_bytes().into()),
            nonce,
            offset: 0,
        }
    }

    pub fn nonce(&self) -> u64 {
        self.nonce
    }

    /// Bytes of keystream consumed so far.
    pub fn offset(&self) -> u64 {
        self.offset
    }

    /// Encrypts or decrypts in place, continuing the stream.
    pub fn apply(&mut self, buf: &mut [u8]) -> Result<()> {
        self.cipher
            .try_apply_keystream(buf)
            .map_err(|_| Error::Crypto("keystream exhausted".into()))?;
        self.offset += buf.len() as u64;
        Ok(())
    }
}

pub fn create_encryption_context(key: &SymmetricKey, nonce: u64) -> EncryptionContext {
    EncryptionContext::new(key, nonce)
}

pub fn salsa20_keystream(key: &[u8], nonce: u64, length: usize) -> Result<Vec<u8>> {
    let key = SymmetricKey::from_bytes(key)?;
    let mut out = vec![0u8; length];
    EncryptionContext::new(&key, nonce).apply(&mut out)?;
    Ok(out)
}

/// One-shot encryption of a whole segment.
pub fn xor_segment(key: &SymmetricKey, nonce: u64, data: &[u8]) -> Vec<u8> {
    let mut out = data.to_vec();
    EncryptionContext::new(key, nonce)
        .apply(&mut out)
        .expect("segments are far below the keystream limit");
    out
}

/// Records every `(key, nonce)` pair used while writing one file.
#[derive(Debug, Default)]
pub struct NonceLedger {
    used: HashSet<(String, u64)>,
}

impl NonceLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn claim(&mut self, key_id: &str, nonce: u64) -> Result<()> {
        if !self.used.insert((key_id.to_string(), nonce)) {
            return Err(Error::NonceReuse {
                key: key_id.to_string(),
                nonce,
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.used.len()
    }

    pub fn is_empty(&self) -> bool {
        self.used.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserPublicKey(RsaPublicKey);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserPrivateKey(RsaPrivateKey);

pub fn generate_user_keypair() -> Result<(UserPublicKey, UserPrivateKey)> {
    generate_user_keypair_with_bits(RSA_BITS)
}

pub fn generate_user_keypair_with_bits(bits: usize) -> Result<(UserPublicKey, UserPrivateKey)> {
    let private = RsaPrivateKey::new(&mut OsRng, bits).map_err(|e| Error::Crypto(e.to_string()))?;
    Ok((UserPublicKey(private.to_public_key()), UserPrivateKey(private)))
}

impl UserPublicKey {
    pub fn to_pem(&self) -> Result<String> {
        self.0
            .to_public_key_pem(LineEnding::LF)
            .map_err(|e| Error::Crypto(e.to_string()))
    }

    pub fn from_pem(pem: &str) -> Result<Self> {
        RsaPublicKey::from_public_key_pem(pem)
            .map(UserPublicKey)
            .map_err(|e| Error::Crypto(format!("bad public key: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_pem()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_pem(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn encrypt(&self, data: &[u8]) -> Result<Vec<u8>> {
        self.0
            .encrypt(&mut OsRng, Oaep::new::<Sha256>(), data)
            .map_err(|e| Error::Crypto(e.to_string()))
    }

    /// Ciphertext length of one RSA block.
    pub fn block_len(&self) -> usize {
        rsa::traits::PublicKeyParts::size(&self.0)
    }
}

impl UserPrivateKey {
    pub fn public_key(&self) -> UserPublicKey {
        UserPublicKey(self.0.to_public_key())
    }

    pub fn to_pem(&self) -> Result<String> {
        self.0
            .to_pkcs8_pem(LineEnding::LF)
            .map(|s| s.to_string())
            .map_err(|e| Error::Crypto(e.to_string()))
    }

    pub fn from_pem(pem: &str) -> Result<Self> {
        RsaPrivateKey::from_pkcs8_pem(pem)
            .map(UserPrivateKey)
            .map_err(|e| Error::Crypto(format!("bad private key: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_pem()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_pem(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn decrypt(&self, data: &[u8]) -> Result<Vec<u8>> {
        self.0
            .decrypt(Oaep::new::<Sha256>(), data)
            .map_err(|_| Error::Crypto("cannot unwrap with this private key".into()))
    }
}

/// Keys a user holds: the system key plus one key per granted individual.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyPortfolio {
    user_id: String,
    system_key: SymmetricKey,
    individual_keys: BTreeMap<String, SymmetricKey>,
}

impl KeyPortfolio {
    pub fn new(user_id: impl Into<String>, system_key: SymmetricKey) -> Self {
        KeyPortfolio {
            user_id: user_id.into(),
            system_key,
            individual_keys: BTreeMap::new(),
        }
    }

    pub fn with_key(mut self, individual: impl Into<String>, key: SymmetricKey) -> Self {
        self.insert(individual, key);
        self
    }

    pub fn insert(&mut self, individual: impl Into<String>, key: SymmetricKey) {
        self.individual_keys.insert(individual.into(), key);
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn system_key(&self) -> &SymmetricKey {
        &self.system_key
    }

    pub fn key_for(&self, individual: &str) -> Option<&SymmetricKey> {
        self.individual_keys.get(individual)
    }

    pub fn individuals(&self) -> impl Iterator<Item = &str> {
        self.individual_keys.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.individual_keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.individual_keys.is_empty()
    }

    fn body(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.str(&self.user_id).bytes(self.system_key.as_bytes());
        w.u32(self.individual_keys.len() as u32);
        for (id, key) in &self.individual_keys {
            w.str(id).bytes(key.as_bytes());
        }
        w.into_inner()
    }

    fn from_body(body: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(body);
        let user_id = r.str()?;
        let system_key = SymmetricKey::from_bytes(r.take(KEY_LEN)?)?;
        let count = r.u32()?;
        let mut p = KeyPortfolio::new(user_id, system_key);
        for _ in 0..count {
            let id = r.str()?;
            p.insert(id, SymmetricKey::from_bytes(r.take(KEY_LEN)?)?);
        }
        r.expect_end("portfolio")?;
        Ok(p)
    }
}

/// Fixed bytes a sealed portfolio adds on top of its body.
pub fn sealed_overhead(public: &UserPublicKey) -> usize {
    4 + 2 + 2 + public.block_len() + 32
}

/// Hybrid sealing: a fresh wrapping key under RSA-OAEP, the body under Salsa20.
pub fn seal_portfolio(portfolio: &KeyPortfolio, public: &UserPublicKey) -> Result<Vec<u8>> {
    let wrap = SymmetricKey::generate();
    let wrapped = public.encrypt(wrap.as_bytes())?;
    let mut body = portfolio.body();
    let check: [u8; 32] = Sha256::digest(&body).into();
    body.extend_from_slice(&check);
    let mut w = ByteWriter::with_capacity(body.len() + wrapped.len() + 8);
    w.bytes(PORTFOLIO_MAGIC).u16(PORTFOLIO_VERSION);
    w.u16(wrapped.len() as u16).bytes(&wrapped);
    w.bytes(&xor_segment(&wrap, 0, &body));
    Ok(w.into_inner())
}

pub fn open_portfolio(blob: &[u8], private: &UserPrivateKey) -> Result<KeyPortfolio> {
    let mut r = ByteReader::new(blob);
    if r.take(4)? != PORTFOLIO_MAGIC {
        return Err(Error::corrupt("not a key portfolio"));
    }
    let version = r.u16()?;
    if version != PORTFOLIO_VERSION {
        return Err(Error::Version {
            found: version,
            expected: PORTFOLIO_VERSION,
        });
    }
    let wlen = r.u16()? as usize;
    let wrap = SymmetricKey::from_bytes(&private.decrypt(r.take(wlen)?)?)?;
    let rest = r.take(r.remaining())?;
    if rest.len() < 32 {
        return Err(Error::corrupt("portfolio body truncated"));
    }
    let plain = xor_segment(&wrap, 0, rest);
    let (body, check) = plain.split_at(plain.len() - 32);
    if Sha256::digest(body).as_slice() != check {
        return Err(Error::Checksum("portfolio"));
    }
    KeyPortfolio::from_body(body)
}
