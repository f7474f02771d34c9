//! Textbook RSA blind signatures over `M = A || h(A)`.
//!
//! With a 1024-bit modulus `A` is 768 bits and `h` is SHA-256. Smaller moduli
//! (test mode) shrink `A` so that `M` still fills the modulus width.

use std::collections::HashSet;

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{CryptoRng, RngCore};
use rsa::traits::{PrivateKeyParts, PublicKeyParts};

use super::sha256;
use crate::error::{CryptoError, ReportRejection};

pub const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RsaPublicKey {
    pub n: BigUint,
    pub e: BigUint,
}

impl RsaPublicKey {
    pub fn bits(&self) -> usize {
        self.n.bits() as usize
    }

    /// Width in bytes of `M` and of signatures.
    pub fn byte_len(&self) -> usize {
        self.bits().div_ceil(8)
    }
}

#[derive(Clone)]
pub struct RsaKeyPair {
    pub public: RsaPublicKey,
    d: BigUint,
}

impl std::fmt::Debug for RsaKeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RsaKeyPair")
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

impl RsaKeyPair {
    pub fn generate<R: RngCore + CryptoRng>(bits: usize, rng: &mut R) -> Result<Self, CryptoError> {
        if bits < 8 * (DIGEST_LEN + 16) {
            return Err(CryptoError::ModulusTooSmall(bits));
        }
        let key = rsa::RsaPrivateKey::new(rng, bits)
            .map_err(|e| CryptoError::KeyGeneration(e.to_string()))?;
        let n = BigUint::from_bytes_be(&key.n().to_bytes_be());
        let e = BigUint::from_bytes_be(&key.e().to_bytes_be());
        let d = BigUint::from_bytes_be(&key.d().to_bytes_be());
        Ok(RsaKeyPair {
            public: RsaPublicKey { n, e },
            d,
        })
    }
}

/// `M = A || h(A)`, stored big-endian and exactly as wide as the modulus.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ReportMessage(Vec<u8>);

impl ReportMessage {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        ReportMessage(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn a(&self) -> &[u8] {
        &self.0[..self.0.len().saturating_sub(DIGEST_LEN)]
    }

    pub fn to_int(&self) -> BigUint {
        BigUint::from_bytes_be(&self.0)
    }

    /// Whether the low 256 bits equal the hash of the rest.
    pub fn is_well_formed(&self) -> bool {
        self.0.len() > DIGEST_LEN && {
            let (a, tail) = self.0.split_at(self.0.len() - DIGEST_LEN);
            sha256(&[a]) == tail
        }
    }
}

pub fn gen_report_message<R: RngCore + CryptoRng>(key: &RsaPublicKey, rng: &mut R) -> ReportMessage {
    let width = key.byte_len();
    let mut bytes = vec![0u8; width];
    loop {
        rng.fill_bytes(&mut bytes[..width - DIGEST_LEN]);
        let digest = sha256(&[&bytes[..width - DIGEST_LEN]]);
        bytes[width - DIGEST_LEN..].copy_from_slice(&digest);
        if BigUint::from_bytes_be(&bytes) < key.n {
            return ReportMessage(bytes);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Blinded {
    pub value: BigUint,
    pub unblinder: BigUint,
}

/// `m * r^e mod N` for a fresh uniform `r` coprime to `N`.
pub fn blind<R: RngCore + CryptoRng>(m: &ReportMessage, key: &RsaPublicKey, rng: &mut R) -> Blinded {
    loop {
        let r = rng.gen_biguint_range(&BigUint::one(), &key.n);
        if let Some(b) = blind_with_factor(m, key, &r) {
            return b;
        }
    }
}

/// Blinds with a caller-chosen factor; `None` if `r` is not invertible mod `N`.
pub fn blind_with_factor(m: &ReportMessage, key: &RsaPublicKey, r: &BigUint) -> Option<Blinded> {
    if r.is_zero() || !r.gcd(&key.n).is_one() {
        return None;
    }
    let unblinder = r.modinv(&key.n)?;
    let value = (m.to_int() * r.modpow(&key.e, &key.n)) % &key.n;
    Some(Blinded { value, unblinder })
}

pub fn sign_blinded(blinded: &BigUint, key: &RsaKeyPair) -> Result<BigUint, CryptoError> {
    if blinded >= &key.public.n {
        return Err(CryptoError::OutOfRange);
    }
    Ok(blinded.modpow(&key.d, &key.public.n))
}

pub fn unblind(p: &BigUint, unblinder: &BigUint, n: &BigUint) -> BigUint {
    (p * unblinder) % n
}

/// `(M, sigma(M))`. Wire form: both values big-endian, each as wide as the modulus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportCredential {
    pub message: ReportMessage,
    pub sigma: BigUint,
}

impl ReportCredential {
    pub fn to_bytes(&self, key: &RsaPublicKey) -> Vec<u8> {
        let width = key.byte_len();
        let mut out = Vec::with_capacity(2 * width);
        out.extend(left_pad(&self.message.to_int().to_bytes_be(), width));
        out.extend(left_pad(&self.sigma.to_bytes_be(), width));
        out
    }

    pub fn from_bytes(bytes: &[u8], key: &RsaPublicKey) -> Result<Self, CryptoError> {
        let width = key.byte_len();
        if bytes.len() != 2 * width {
            return Err(CryptoError::Malformed("credential"));
        }
        Ok(ReportCredential {
            message: ReportMessage(bytes[..width].to_vec()),
            sigma: BigUint::from_bytes_be(&bytes[width..]),
        })
    }
}

fn left_pad(bytes: &[u8], width: usize) -> Vec<u8> {
    let mut out = vec![0u8; width.saturating_sub(bytes.len())];
    out.extend_from_slice(bytes);
    out
}

/// Structure and signature checks without touching the replay ledger.
pub fn verify_credential(cred: &ReportCredential, key: &RsaPublicKey) -> Result<(), ReportRejection> {
    let m = cred.message.to_int();
    if cred.message.as_bytes().len() != key.byte_len() || m >= key.n {
        return Err(ReportRejection::BadStructure);
    }
    if !cred.message.is_well_formed() {
        return Err(ReportRejection::BadStructure);
    }
    if cred.sigma >= key.n || cred.sigma.modpow(&key.e, &key.n) != m {
        return Err(ReportRejection::BadSignature);
    }
    Ok(())
}

/// Messages already accepted by the server.
#[derive(Debug, Default, Clone)]
pub struct ReplayLedger {
    accepted: HashSet<Vec<u8>>,
}

impl ReplayLedger {
    pub fn len(&self) -> usize {
        self.accepted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accepted.is_empty()
    }

    pub fn contains(&self, m: &ReportMessage) -> bool {
        self.accepted.contains(m.as_bytes())
    }
}

/// Full server-side check; a valid credential is recorded and can never be
/// accepted again.
pub fn verify_report(
    cred: &ReportCredential,
    key: &RsaPublicKey,
    ledger: &mut ReplayLedger,
) -> Result<(), ReportRejection> {
    verify_credential(cred, key)?;
    if !ledger.accepted.insert(cred.message.as_bytes().to_vec()) {
        return Err(ReportRejection::Replay);
    }
    Ok(())
}
