//! Client-to-server envelopes.
//!
//! `Sealed` is an anonymous X25519/XSalsa20-Poly1305 sealed box. `Transparent`
//! carries the payload in the clear behind an integrity check and exists only
//! so fast test runs can skip public-key work; it hides nothing.

use crypto_box::{PublicKey, SecretKey};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use super::sha256;
use crate::error::CryptoError;

const SEALED: u8 = 0x01;
const TRANSPARENT: u8 = 0xff;
const NONCE_LEN: usize = 16;
const CHECK_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeKind {
    #[default]
    Sealed,
    Transparent,
}

/// Held by clients.
#[derive(Debug, Clone)]
pub enum SealingKey {
    Sealed(PublicKey),
    Transparent,
}

/// Held by the server.
#[derive(Clone)]
pub enum OpeningKey {
    Sealed(SecretKey),
    Transparent,
}

impl std::fmt::Debug for OpeningKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OpeningKey::Sealed(_) => f.write_str("OpeningKey::Sealed(..)"),
            OpeningKey::Transparent => f.write_str("OpeningKey::Transparent"),
        }
    }
}

impl OpeningKey {
    pub fn generate<R: RngCore + CryptoRng>(kind: EnvelopeKind, rng: &mut R) -> Self {
        match kind {
            EnvelopeKind::Sealed => OpeningKey::Sealed(SecretKey::generate(rng)),
            EnvelopeKind::Transparent => OpeningKey::Transparent,
        }
    }

    pub fn sealing_key(&self) -> SealingKey {
        match self {
            OpeningKey::Sealed(sk) => SealingKey::Sealed(sk.public_key()),
            OpeningKey::Transparent => SealingKey::Transparent,
        }
    }

    pub fn open(&self, envelope: &[u8]) -> Result<Vec<u8>, CryptoError> {
        let (&kind, body) = envelope.split_first().ok_or(CryptoError::Envelope)?;
        match (self, kind) {
            (OpeningKey::Sealed(sk), SEALED) => sk.unseal(body).map_err(|_| CryptoError::Envelope),
            (OpeningKey::Transparent, TRANSPARENT) => {
                if body.len() < NONCE_LEN + CHECK_LEN {
                    return Err(CryptoError::Envelope);
                }
                let (covered, check) = body.split_at(body.len() - CHECK_LEN);
                if sha256(&[covered])[..CHECK_LEN] != *check {
                    return Err(CryptoError::Envelope);
                }
                Ok(covered[NONCE_LEN..].to_vec())
            }
            _ => Err(CryptoError::Envelope),
        }
    }
}

impl SealingKey {
    pub fn is_secure(&self) -> bool {
        matches!(self, SealingKey::Sealed(_))
    }

    pub fn seal<R: RngCore + CryptoRng>(&self, payload: &[u8], rng: &mut R) -> Vec<u8> {
        match self {
            SealingKey::Sealed(pk) => {
                let mut out = vec![SEALED];
                // Sealing only fails on absurd plaintext lengths.
                out.extend(pk.seal(rng, payload).expect("sealed box encryption"));
                out
            }
            SealingKey::Transparent => {
                let mut out = Vec::with_capacity(1 + NONCE_LEN + payload.len() + CHECK_LEN);
                out.push(TRANSPARENT);
                let mut nonce = [0u8; NONCE_LEN];
                rng.fill_bytes(&mut nonce);
                out.extend_from_slice(&nonce);
                out.extend_from_slice(payload);
                let check = sha256(&[&out[1..]]);
                out.extend_from_slice(&check[..CHECK_LEN]);
                out
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn each_kind(f: impl Fn(OpeningKey, &mut ChaCha20Rng)) {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for kind in [EnvelopeKind::Sealed, EnvelopeKind::Transparent] {
            let key = OpeningKey::generate(kind, &mut rng);
            f(key, &mut rng);
        }
    }

    #[test]
    fn round_trip_random_payload() {
        each_kind(|key, rng| {
            let mut payload = vec![0u8; 256];
            rng.fill_bytes(&mut payload);
            let env = key.sealing_key().seal(&payload, rng);
            assert_eq!(key.open(&env).unwrap(), payload);
        });
    }

    #[test]
    fn tampering_is_detected() {
        each_kind(|key, rng| {
            let mut env = key.sealing_key().seal(b"report bytes", rng);
            let last = env.len() - 1;
            env[last] ^= 0x80;
            assert!(key.open(&env).is_err());
            assert!(key.open(&[]).is_err());
            assert!(key.open(b"\x01garbage").is_err());
        });
    }

    #[test]
    fn sealing_is_randomized() {
        each_kind(|key, rng| {
            let sk = key.sealing_key();
            assert_ne!(sk.seal(b"same", rng), sk.seal(b"same", rng));
        });
    }

    #[test]
    fn sealed_envelope_hides_payload() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let key = OpeningKey::generate(EnvelopeKind::Sealed, &mut rng);
        let payload = [0x5au8; 64];
        let env = key.sealing_key().seal(&payload, &mut rng);
        assert!(!env.windows(8).any(|w| w == &payload[..8]));
        assert!(key.sealing_key().is_secure());

        let other = OpeningKey::generate(EnvelopeKind::Sealed, &mut rng);
        assert!(other.open(&env).is_err());
        assert!(OpeningKey::Transparent.open(&env).is_err());
    }
}
