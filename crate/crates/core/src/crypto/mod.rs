//! Key agreement, session-key derivation and block encryption of power
//! records.
//!
//! Curve: NIST P-256. KDF: HKDF-SHA256 with an empty salt and the fixed
//! label [`SESSION_KEY_INFO`], truncated to 128 bits. Cipher: AES-128 in ECB
//! mode with PKCS#7 padding.
//!
//! ECB is used because the pairing protocol specifies it. It leaks equal
//! plaintext blocks and is not a recommendation for new designs.

pub mod interlock;

use aes::cipher::{BlockDecrypt, BlockEncrypt, KeyInit};
use aes::Aes128;
use hkdf::Hkdf;
use p256::elliptic_curve::sec1::ToEncodedPoint;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::error::{Error, Result};
use crate::record::PowerRecord;

pub use interlock::{
    interlock_exchange, join_halves, split_into_halves, CipherHalf, InterlockBehavior,
    InterlockEndpoint, InterlockLog, FRAME_LEN,
};

pub const BLOCK_LEN: usize = 16;
pub const SESSION_KEY_INFO: &[u8] = b"proxpair/v1 power-record session key";

/// A P-256 private scalar.
#[derive(Clone)]
pub struct PrivateScalar(p256::SecretKey);

impl std::fmt::Debug for PrivateScalar {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("PrivateScalar(..)")
    }
}

impl PrivateScalar {
    /// From a 32-byte big-endian scalar in `[1, n)`.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        p256::SecretKey::from_slice(bytes)
            .map(Self)
            .map_err(|_| Error::KeyAgreement("scalar is zero or not below the group order".into()))
    }
}

/// An uncompressed SEC1 point (65 bytes, `0x04 || X || Y`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicPoint(#[serde(with = "hex_bytes")] pub Vec<u8>);

impl PublicPoint {
    pub fn x(&self) -> &[u8] {
        &self.0[1..33]
    }

    pub fn y(&self) -> &[u8] {
        &self.0[33..65]
    }
}

#[derive(Debug, Clone)]
pub struct KeyPair {
    pub private_scalar: PrivateScalar,
    pub public_point: PublicPoint,
}

impl KeyPair {
    pub fn from_private(private_scalar: PrivateScalar) -> Self {
        let point = private_scalar.0.public_key().to_encoded_point(false);
        Self {
            public_point: PublicPoint(point.as_bytes().to_vec()),
            private_scalar,
        }
    }
}

/// Draws 32-byte candidates from `rng` until one is a valid scalar.
pub fn generate_keypair<R: Rng + ?Sized>(rng: &mut R) -> KeyPair {
    loop {
        let mut bytes = [0u8; 32];
        rng.fill(&mut bytes);
        if let Ok(sk) = PrivateScalar::from_bytes(&bytes) {
            return KeyPair::from_private(sk);
        }
    }
}

/// Raw ECDH output: the x-coordinate of `own_private · peer_public`.
#[derive(Clone, PartialEq, Eq)]
pub struct SharedSecret(Vec<u8>);

impl std::fmt::Debug for SharedSecret {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SharedSecret(..)")
    }
}

impl SharedSecret {
    pub fn from_bytes(bytes: impl Into<Vec<u8>>) -> Self {
        Self(bytes.into())
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

pub fn derive_shared_secret(own_private: &PrivateScalar, peer_public: &PublicPoint) -> Result<SharedSecret> {
    let peer = p256::PublicKey::from_sec1_bytes(&peer_public.0)
        .map_err(|_| Error::KeyAgreement("peer public key is not a valid P-256 point".into()))?;
    let shared = p256::ecdh::diffie_hellman(own_private.0.to_nonzero_scalar(), peer.as_affine());
    Ok(SharedSecret(shared.raw_secret_bytes().to_vec()))
}

/// 128 bits of session-key material.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct SessionKey(pub [u8; 16]);

impl std::fmt::Debug for SessionKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SessionKey(..)")
    }
}

pub fn derive_session_key(shared: &SharedSecret) -> Result<SessionKey> {
    if shared.0.is_empty() {
        return Err(Error::KeyAgreement("empty shared secret".into()));
    }
    let hk = Hkdf::<Sha256>::new(None, &shared.0);
    let mut okm = [0u8; 16];
    hk.expand(SESSION_KEY_INFO, &mut okm)
        .expect("16 bytes is a valid HKDF-SHA256 output length");
    Ok(SessionKey(okm))
}

/// A sequence of 128-bit cipher blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ciphertext(Vec<u8>);

impl Ciphertext {
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self> {
        if bytes.is_empty() || !bytes.len().is_multiple_of(BLOCK_LEN) {
            return Err(Error::Framing(format!(
                "ciphertext length {} is not a positive multiple of {BLOCK_LEN}",
                bytes.len()
            )));
        }
        Ok(Self(bytes))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn block_count(&self) -> usize {
        self.0.len() / BLOCK_LEN
    }
}

fn cipher(key: &SessionKey) -> Aes128 {
    Aes128::new(&key.0.into())
}

pub fn encrypt_block(key: &SessionKey, block: &[u8; 16]) -> [u8; 16] {
    let mut b = aes::Block::from(*block);
    cipher(key).encrypt_block(&mut b);
    b.into()
}

pub fn decrypt_block(key: &SessionKey, block: &[u8; 16]) -> [u8; 16] {
    let mut b = aes::Block::from(*block);
    cipher(key).decrypt_block(&mut b);
    b.into()
}

fn pkcs7_pad(data: &[u8]) -> Vec<u8> {
    let pad = BLOCK_LEN - data.len() % BLOCK_LEN;
    let mut out = data.to_vec();
    out.resize(data.len() + pad, pad as u8);
    out
}

fn pkcs7_unpad(mut data: Vec<u8>) -> Result<Vec<u8>> {
    let pad = *data.last().ok_or_else(|| Error::RecordFormat("empty plaintext".into()))? as usize;
    if pad == 0 || pad > BLOCK_LEN || pad > data.len() || data[data.len() - pad..].iter().any(|&b| b as usize != pad) {
        return Err(Error::RecordFormat("invalid padding".into()));
    }
    data.truncate(data.len() - pad);
    Ok(data)
}

/// AES-128-ECB over the PKCS#7-padded plaintext.
pub fn seal(key: &SessionKey, plaintext: &[u8]) -> Ciphertext {
    let c = cipher(key);
    let mut data = pkcs7_pad(plaintext);
    for chunk in data.chunks_exact_mut(BLOCK_LEN) {
        let mut b = aes::Block::from(<[u8; BLOCK_LEN]>::try_from(&*chunk).expect("block sized chunk"));
        c.encrypt_block(&mut b);
        chunk.copy_from_slice(&b);
    }
    Ciphertext(data)
}

pub fn open(key: &SessionKey, ciphertext: &Ciphertext) -> Result<Vec<u8>> {
    let c = cipher(key);
    let mut data = ciphertext.0.clone();
    for chunk in data.chunks_exact_mut(BLOCK_LEN) {
        let mut b = aes::Block::from(<[u8; BLOCK_LEN]>::try_from(&*chunk).expect("block sized chunk"));
        c.decrypt_block(&mut b);
        chunk.copy_from_slice(&b);
    }
    pkcs7_unpad(data)
}

pub fn seal_power_record(key: &SessionKey, record: &PowerRecord) -> Result<Ciphertext> {
    Ok(seal(key, &record.encode()?))
}

pub fn open_power_record(key: &SessionKey, ciphertext: &Ciphertext) -> Result<PowerRecord> {
    PowerRecord::decode(&open(key, ciphertext)?)
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    #[test]
    fn keypair_deterministic_under_seed() {
        let a = generate_keypair(&mut stream_rng(5, Stream::Keys));
        let b = generate_keypair(&mut stream_rng(5, Stream::Keys));
        let c = generate_keypair(&mut stream_rng(6, Stream::Keys));
        assert_eq!(a.public_point, b.public_point);
        assert_ne!(a.public_point, c.public_point);
        assert_eq!(a.public_point.0.len(), 65);
    }

    #[test]
    fn aes128_known_answer() {
        let key = SessionKey(core::array::from_fn(|i| i as u8));
        let pt: [u8; 16] = core::array::from_fn(|i| (i as u8) * 0x11);
        let ct = encrypt_block(&key, &pt);
        assert_eq!(hex::encode(ct), "69c4e0d86a7b0430d8cdb78070b4c55a");
        assert_eq!(decrypt_block(&key, &ct), pt);
    }

    #[test]
    fn shared_secret_commutes() {
        let mut rng = stream_rng(11, Stream::Keys);
        let a = generate_keypair(&mut rng);
        let b = generate_keypair(&mut rng);
        let ab = derive_shared_secret(&a.private_scalar, &b.public_point).unwrap();
        let ba = derive_shared_secret(&b.private_scalar, &a.public_point).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn off_curve_point_rejected() {
        let mut rng = stream_rng(12, Stream::Keys);
        let a = generate_keypair(&mut rng);
        let mut bad = generate_keypair(&mut rng).public_point;
        bad.0[64] ^= 1;
        assert!(matches!(
            derive_shared_secret(&a.private_scalar, &bad),
            Err(Error::KeyAgreement(_))
        ));
        let garbage = PublicPoint(vec![4u8; 10]);
        assert!(derive_shared_secret(&a.private_scalar, &garbage).is_err());
    }

    #[test]
    fn session_key_properties() {
        let s1 = SharedSecret::from_bytes(vec![1u8; 32]);
        let s2 = SharedSecret::from_bytes(vec![2u8; 32]);
        let k1 = derive_session_key(&s1).unwrap();
        assert_eq!(k1, derive_session_key(&s1).unwrap());
        assert_ne!(k1, derive_session_key(&s2).unwrap());
        assert_eq!(k1.0.len() * 8, 128);
        assert!(derive_session_key(&SharedSecret::from_bytes(vec![])).is_err());
    }

    #[test]
    fn seal_block_count_and_round_trip() {
        let key = SessionKey([7u8; 16]);
        for len in [0usize, 1, 15, 16, 17, 2007] {
            let pt: Vec<u8> = (0..len).map(|i| (i * 31 % 251) as u8).collect();
            let ct = seal(&key, &pt);
            assert_eq!(ct.block_count(), len / 16 + 1);
            assert_eq!(open(&key, &ct).unwrap(), pt);
        }
    }

    #[test]
    fn bit_flip_changes_only_that_block() {
        let key = SessionKey([9u8; 16]);
        let pt: Vec<u8> = (0..64u8).collect();
        let ct = seal(&key, &pt);
        let mut bytes = ct.as_bytes().to_vec();
        bytes[20] ^= 0x10;
        let mut blocks_changed = Vec::new();
        for (i, (orig, flipped)) in ct
            .as_bytes()
            .chunks_exact(16)
            .zip(bytes.chunks_exact(16))
            .enumerate()
        {
            let a = decrypt_block(&key, orig.try_into().unwrap());
            let b = decrypt_block(&key, flipped.try_into().unwrap());
            if a != b {
                blocks_changed.push(i);
            }
        }
        assert_eq!(blocks_changed, vec![1]);
    }

    #[test]
    fn misaligned_ciphertext_rejected() {
        assert!(Ciphertext::from_bytes(vec![0; 17]).is_err());
        assert!(Ciphertext::from_bytes(vec![]).is_err());
    }

    #[test]
    fn bad_padding_rejected() {
        let key = SessionKey([1u8; 16]);
        let ct = Ciphertext::from_bytes(encrypt_block(&key, &[0u8; 16]).to_vec()).unwrap();
        assert!(matches!(open(&key, &ct), Err(Error::RecordFormat(_))));
    }
}
