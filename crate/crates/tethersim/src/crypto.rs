//! Symbolic authenticated encryption and certificates.
//!
//! No real ciphers: sealed bytes are plaintext XORed with a keystream derived
//! from the key identity, key material, and a per-envelope nonce, and the
//! auth tag is a truncated keyed digest. That makes "who can open what" a
//! machine-checkable predicate: opening succeeds exactly when the caller
//! holds the matching key, and any tampering fails the tag.

use rand::RngCore;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::model::NodeId;

/// Session key: a registry-unique id plus 16 bytes of opaque material.
/// Equality is over both fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymmetricKey {
    pub key_id: u64,
    pub material: [u8; 16],
}

/// Registered asymmetric pair. The pairing itself lives in the
/// [`KeyRegistry`]; possession of `private_id` is what lets a principal open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyPair {
    pub public_id: u64,
    pub private_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SealType {
    Sym,
    Asym,
}

/// Opaque sealed payload tagged with the key identity that sealed it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub seal_type: SealType,
    pub key_ref: u64,
    pub sealed: Vec<u8>,
    pub auth_tag: [u8; 8],
}

impl Envelope {
    /// Wire size used by the link model.
    pub fn wire_len(&self) -> usize {
        self.sealed.len() + 8 + 8 + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Issuer {
    TrustRoot,
}

/// Binding of a node to its public key id, signed by the simulation trust
/// root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub subject: NodeId,
    pub subject_public_id: u64,
    pub issuer: Issuer,
    pub signature: [u8; 8],
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("auth failure: key does not match or content tampered")]
    AuthFailure,
    #[error("wrong seal type for this open operation")]
    WrongSealType,
    #[error("key id {0} is not registered")]
    UnknownKey(u64),
}

// splitmix64 finalizer; the workhorse mixer behind keystreams and digests.
fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// 64-bit keyed digest over arbitrary bytes (FNV-style absorb, splitmix
/// finalize). Symbolic-strength only; determinism is what matters here.
pub fn digest64(seed: u64, bytes: &[u8]) -> u64 {
    let mut state = mix64(seed ^ 0xD1B5_4A32_D192_ED03);
    for &b in bytes {
        state = mix64(state ^ b as u64);
    }
    mix64(state ^ bytes.len() as u64)
}

fn material_seed(material: &[u8; 16]) -> u64 {
    let lo = u64::from_be_bytes(material[0..8].try_into().unwrap());
    let hi = u64::from_be_bytes(material[8..16].try_into().unwrap());
    lo ^ hi.rotate_left(17)
}

fn keystream_xor(seed: u64, nonce: u64, data: &mut [u8]) {
    let mut state = mix64(seed ^ mix64(nonce));
    let mut word = 0u64;
    for (i, b) in data.iter_mut().enumerate() {
        if i % 8 == 0 {
            state = mix64(state);
            word = state;
        }
        *b ^= (word >> ((i % 8) * 8)) as u8;
    }
}

const ASYM_SALT: u64 = 0x5EA1_0F_A5_11_22_33; // domain separation for asym streams

fn sym_tag(k_id: u64, material: &[u8; 16], sealed: &[u8]) -> [u8; 8] {
    digest64(mix64(k_id ^ material_seed(material)), sealed).to_be_bytes()
}

fn asym_tag(public_id: u64, sealed: &[u8]) -> [u8; 8] {
    digest64(mix64(public_id ^ ASYM_SALT), sealed).to_be_bytes()
}

/// Seal `plain` under a symmetric key. Deterministic: identical inputs yield
/// identical envelopes.
pub fn seal(k: &SymmetricKey, plain: &[u8]) -> Envelope {
    let nonce = digest64(0xE4E1_09E5, plain);
    let mut body = plain.to_vec();
    keystream_xor(k.key_id ^ material_seed(&k.material), nonce, &mut body);
    let mut sealed = Vec::with_capacity(8 + body.len());
    sealed.extend_from_slice(&nonce.to_be_bytes());
    sealed.extend_from_slice(&body);
    let auth_tag = sym_tag(k.key_id, &k.material, &sealed);
    Envelope { seal_type: SealType::Sym, key_ref: k.key_id, sealed, auth_tag }
}

/// Open a symmetric envelope. Succeeds iff `k` matches the sealing key and
/// the content is untouched.
pub fn open(k: &SymmetricKey, e: &Envelope) -> Result<Vec<u8>, CryptoError> {
    if e.seal_type != SealType::Sym {
        return Err(CryptoError::WrongSealType);
    }
    if e.key_ref != k.key_id || e.sealed.len() < 8 {
        return Err(CryptoError::AuthFailure);
    }
    if sym_tag(k.key_id, &k.material, &e.sealed) != e.auth_tag {
        return Err(CryptoError::AuthFailure);
    }
    let nonce = u64::from_be_bytes(e.sealed[0..8].try_into().unwrap());
    let mut body = e.sealed[8..].to_vec();
    keystream_xor(k.key_id ^ material_seed(&k.material), nonce, &mut body);
    Ok(body)
}

/// Per-simulation authority for key identities, asymmetric pairings, and the
/// trust root. Single-writer: owned and mutated only by the event loop.
#[derive(Debug, Clone)]
pub struct KeyRegistry {
    next_id: u64,
    issued_sym: BTreeMap<u64, [u8; 16]>,
    public_to_private: BTreeMap<u64, u64>,
    private_to_public: BTreeMap<u64, u64>,
    trust_secret: u64,
}

impl KeyRegistry {
    pub fn new(sim_seed: u64) -> KeyRegistry {
        KeyRegistry {
            next_id: 1,
            issued_sym: BTreeMap::new(),
            public_to_private: BTreeMap::new(),
            private_to_public: BTreeMap::new(),
            trust_secret: mix64(sim_seed ^ 0x7205_7_1200_7),
        }
    }

    fn alloc_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    /// Generate a fresh symmetric key; the id is never reused within a
    /// simulation.
    pub fn keygen(&mut self, rng: &mut impl RngCore) -> SymmetricKey {
        let key_id = self.alloc_id();
        let mut material = [0u8; 16];
        rng.fill_bytes(&mut material);
        self.issued_sym.insert(key_id, material);
        SymmetricKey { key_id, material }
    }

    /// Register a fresh asymmetric pair for a principal.
    pub fn register_pair(&mut self, _rng: &mut impl RngCore) -> KeyPair {
        let public_id = self.alloc_id();
        let private_id = self.alloc_id();
        self.public_to_private.insert(public_id, private_id);
        self.private_to_public.insert(private_id, public_id);
        KeyPair { public_id, private_id }
    }

    pub fn is_public(&self, id: u64) -> bool {
        self.public_to_private.contains_key(&id)
    }

    pub fn public_for(&self, private_id: u64) -> Option<u64> {
        self.private_to_public.get(&private_id).copied()
    }

    pub fn issued_key_count(&self) -> usize {
        self.issued_sym.len()
    }

    /// Seal under a registered public key.
    pub fn asym_seal(&self, public_id: u64, plain: &[u8]) -> Result<Envelope, CryptoError> {
        if !self.is_public(public_id) {
            return Err(CryptoError::UnknownKey(public_id));
        }
        let nonce = digest64(0xA57F_3321, plain);
        let mut body = plain.to_vec();
        keystream_xor(public_id ^ ASYM_SALT, nonce, &mut body);
        let mut sealed = Vec::with_capacity(8 + body.len());
        sealed.extend_from_slice(&nonce.to_be_bytes());
        sealed.extend_from_slice(&body);
        let auth_tag = asym_tag(public_id, &sealed);
        Ok(Envelope { seal_type: SealType::Asym, key_ref: public_id, sealed, auth_tag })
    }

    /// Open with a private key; succeeds iff it pairs with the sealing
    /// public key and the content is untouched.
    pub fn asym_open(&self, private_id: u64, e: &Envelope) -> Result<Vec<u8>, CryptoError> {
        if e.seal_type != SealType::Asym {
            return Err(CryptoError::WrongSealType);
        }
        match self.private_to_public.get(&private_id) {
            Some(&public_id) if public_id == e.key_ref => {}
            _ => return Err(CryptoError::AuthFailure),
        }
        if e.sealed.len() < 8 || asym_tag(e.key_ref, &e.sealed) != e.auth_tag {
            return Err(CryptoError::AuthFailure);
        }
        let nonce = u64::from_be_bytes(e.sealed[0..8].try_into().unwrap());
        let mut body = e.sealed[8..].to_vec();
        keystream_xor(e.key_ref ^ ASYM_SALT, nonce, &mut body);
        Ok(body)
    }

    /// Issue a certificate binding `subject` to `subject_public_id` under
    /// the trust root.
    pub fn issue_certificate(&self, subject: NodeId, subject_public_id: u64) -> Certificate {
        Certificate {
            subject,
            subject_public_id,
            issuer: Issuer::TrustRoot,
            signature: self.cert_signature(subject, subject_public_id),
        }
    }

    /// True iff the certificate was issued by this trust root and is
    /// unmodified.
    pub fn validate_certificate(&self, c: &Certificate) -> bool {
        c.signature == self.cert_signature(c.subject, c.subject_public_id)
    }

    fn cert_signature(&self, subject: NodeId, public_id: u64) -> [u8; 8] {
        let mut bytes = Vec::with_capacity(13);
        bytes.push(subject.role.code());
        bytes.extend_from_slice(&subject.index.to_be_bytes());
        bytes.extend_from_slice(&public_id.to_be_bytes());
        digest64(self.trust_secret, &bytes).to_be_bytes()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn registry_and_rng() -> (KeyRegistry, ChaCha12Rng) {
        (KeyRegistry::new(11), ChaCha12Rng::seed_from_u64(11))
    }

    #[test]
    fn seal_open_round_trip() {
        let (mut reg, mut rng) = registry_and_rng();
        let k = reg.keygen(&mut rng);
        let e = seal(&k, b"hello tunnel");
        assert_eq!(open(&k, &e).unwrap(), b"hello tunnel");
    }

    #[test]
    fn open_with_other_key_fails() {
        let (mut reg, mut rng) = registry_and_rng();
        let k1 = reg.keygen(&mut rng);
        let k2 = reg.keygen(&mut rng);
        let e = seal(&k1, b"secret");
        assert_eq!(open(&k2, &e), Err(CryptoError::AuthFailure));
    }

    #[test]
    fn identical_plaintexts_open_identically() {
        let (mut reg, mut rng) = registry_and_rng();
        let k = reg.keygen(&mut rng);
        let a = seal(&k, b"same");
        let b = seal(&k, b"same");
        assert_eq!(open(&k, &a).unwrap(), open(&k, &b).unwrap());
    }

    #[test]
    fn every_tag_bit_flip_fails() {
        let (mut reg, mut rng) = registry_and_rng();
        let k = reg.keygen(&mut rng);
        let e = seal(&k, b"bind me");
        for byte in 0..8 {
            for bit in 0..8 {
                let mut m = e.clone();
                m.auth_tag[byte] ^= 1 << bit;
                assert_eq!(open(&k, &m), Err(CryptoError::AuthFailure));
            }
        }
    }

    #[test]
    fn sealed_byte_tamper_fails() {
        let (mut reg, mut rng) = registry_and_rng();
        let k = reg.keygen(&mut rng);
        let e = seal(&k, b"payload bytes");
        for i in 0..e.sealed.len() {
            let mut m = e.clone();
            m.sealed[i] ^= 0x80;
            assert_eq!(open(&k, &m), Err(CryptoError::AuthFailure), "byte {i}");
        }
    }

    #[test]
    fn sym_open_of_asym_envelope_is_wrong_seal_type() {
        let (mut reg, mut rng) = registry_and_rng();
        let pair = reg.register_pair(&mut rng);
        let k = reg.keygen(&mut rng);
        let e = reg.asym_seal(pair.public_id, b"x").unwrap();
        assert_eq!(open(&k, &e), Err(CryptoError::WrongSealType));
        let s = seal(&k, b"x");
        assert_eq!(reg.asym_open(pair.private_id, &s), Err(CryptoError::WrongSealType));
    }

    #[test]
    fn asym_pairing_enforced() {
        let (mut reg, mut rng) = registry_and_rng();
        let server = reg.register_pair(&mut rng);
        let other = reg.register_pair(&mut rng);
        let e = reg.asym_seal(server.public_id, b"session key bytes").unwrap();
        assert_eq!(reg.asym_open(server.private_id, &e).unwrap(), b"session key bytes");
        assert_eq!(reg.asym_open(other.private_id, &e), Err(CryptoError::AuthFailure));
    }

    #[test]
    fn keygen_ids_unique_and_deterministic() {
        let (mut reg, mut rng) = registry_and_rng();
        let mut ids = std::collections::BTreeSet::new();
        for _ in 0..10_000 {
            assert!(ids.insert(reg.keygen(&mut rng).key_id));
        }
        assert_eq!(ids.len(), 10_000);

        // Same seed, fresh simulation: identical sequence.
        let (mut reg_a, mut rng_a) = registry_and_rng();
        let (mut reg_b, mut rng_b) = registry_and_rng();
        for _ in 0..32 {
            assert_eq!(reg_a.keygen(&mut rng_a), reg_b.keygen(&mut rng_b));
        }
    }

    #[test]
    fn certificate_validates_and_mutations_fail() {
        let (mut reg, mut rng) = registry_and_rng();
        let pair = reg.register_pair(&mut rng);
        let cert = reg.issue_certificate(NodeId::sp(1), pair.public_id);
        assert!(reg.validate_certificate(&cert));

        // Exhaustive single-field mutation sweep.
        let mut c = cert;
        c.subject = NodeId::sp(2);
        assert!(!reg.validate_certificate(&c));
        let mut c = cert;
        c.subject = NodeId::client(1);
        assert!(!reg.validate_certificate(&c));
        let mut c = cert;
        c.subject_public_id ^= 1;
        assert!(!reg.validate_certificate(&c));
        for byte in 0..8 {
            let mut c = cert;
            c.signature[byte] ^= 0xFF;
            assert!(!reg.validate_certificate(&c));
        }
    }
}
