//! Salted cell tags, pseudonyms, blind-signed report credentials and the
//! sealed client-to-server envelope.

mod blind;
mod envelope;

pub use blind::{
    blind, blind_with_factor, gen_report_message, sign_blinded, unblind, verify_credential,
    verify_report, Blinded, ReplayLedger, ReportCredential, ReportMessage, RsaKeyPair,
    RsaPublicKey, DIGEST_LEN,
};
pub use envelope::{EnvelopeKind, OpeningKey, SealingKey};

use std::fmt;

use rand::{CryptoRng, Rng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::geometry::CellId;
use crate::issuers::QId;

pub const SALT_LEN: usize = 16;
pub const PSEUDONYM_LEN: usize = 16;

pub fn sha256(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

/// `h(C || R_P)`: identifies a microcell to the server under an area salt.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellTag(#[serde(with = "hex_array")] pub [u8; 32]);

impl fmt::Debug for CellTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CellTag({})", hex::encode(&self.0[..8]))
    }
}

/// Random value broadcast by the telephone provider to every user in an area
/// for a window of slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AreaSalt {
    #[serde(with = "hex_array")]
    pub value: [u8; SALT_LEN],
    pub area: QId,
    pub valid_from: u64,
    pub valid_slots: u64,
}

impl AreaSalt {
    pub fn covers(&self, slot: u64) -> bool {
        slot >= self.valid_from && slot - self.valid_from < self.valid_slots
    }
}

/// Hash input is the 17-byte canonical cell encoding followed by the salt bytes.
pub fn cell_tag(c: CellId, salt: &[u8; SALT_LEN]) -> CellTag {
    CellTag(sha256(&[&c.to_bytes(), salt]))
}

/// Short-lived identifier a user shows only to the server.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pseudonym(#[serde(with = "hex_array")] pub [u8; PSEUDONYM_LEN]);

impl Pseudonym {
    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Pseudonym(rng.gen())
    }
}

impl fmt::Debug for Pseudonym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Pseudonym({})", hex::encode(self.0))
    }
}

impl fmt::Display for Pseudonym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

pub(crate) mod hex_array {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer, const N: usize>(v: &[u8; N], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>, const N: usize>(d: D) -> Result<[u8; N], D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(s).map_err(D::Error::custom)?;
        bytes
            .try_into()
            .map_err(|_| D::Error::custom(format!("expected {N} bytes")))
    }
}
