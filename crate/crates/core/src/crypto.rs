//! Simulated signatures. Each validator holds a secret handle; a tag is a
//! keyed hash over the signed bytes, so only the holder can produce it.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::types::ValidatorId;

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature {
    pub signer: ValidatorId,
    pub tag: [u8; 32],
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Sig({}, {})", self.signer, hex::encode(&self.tag[..4]))
    }
}

#[derive(Serialize, Deserialize)]
struct SigRepr {
    signer: ValidatorId,
    tag: String,
}

impl Serialize for Signature {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        SigRepr { signer: self.signer, tag: hex::encode(self.tag) }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Signature {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = SigRepr::deserialize(d)?;
        let bytes = hex::decode(&r.tag).map_err(serde::de::Error::custom)?;
        let tag: [u8; 32] = bytes.try_into().map_err(|_| serde::de::Error::custom("tag must be 32 bytes"))?;
        Ok(Signature { signer: r.signer, tag })
    }
}

/// Verification side of the simulated PKI, shared by all nodes of a run.
#[derive(Clone)]
pub struct KeyRing {
    secrets: Arc<Vec<[u8; 32]>>,
}

impl KeyRing {
    pub fn generate(n: usize, seed: u64) -> Self {
        let secrets = (0..n as u32)
            .map(|i| {
                let mut h = Sha256::new();
                h.update(b"simulated-secret");
                h.update(seed.to_be_bytes());
                h.update(i.to_be_bytes());
                h.finalize().into()
            })
            .collect();
        KeyRing { secrets: Arc::new(secrets) }
    }

    /// Signing handle for one validator. Only the simulator hands these out,
    /// one per node.
    pub fn signer(&self, who: ValidatorId) -> Signer {
        Signer { who, secret: self.secrets[who.index()] }
    }

    pub fn verify(&self, sig: &Signature, message: &[u8]) -> bool {
        match self.secrets.get(sig.signer.index()) {
            Some(secret) => tag_for(secret, message) == sig.tag,
            None => false,
        }
    }

    pub fn len(&self) -> usize {
        self.secrets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.secrets.is_empty()
    }
}

#[derive(Clone)]
pub struct Signer {
    who: ValidatorId,
    secret: [u8; 32],
}

impl Signer {
    pub fn id(&self) -> ValidatorId {
        self.who
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        Signature { signer: self.who, tag: tag_for(&self.secret, message) }
    }
}

fn tag_for(secret: &[u8; 32], message: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(secret);
    h.update(message);
    h.finalize().into()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_verify_and_forgery() {
        let ring = KeyRing::generate(4, 7);
        let p0 = ring.signer(ValidatorId(0));
        let p1 = ring.signer(ValidatorId(1));
        let sig = p0.sign(b"hello");
        assert!(ring.verify(&sig, b"hello"));
        assert!(!ring.verify(&sig, b"hellp"));
        // p1 claims to be p0 but can only use its own secret
        let mut forged = p1.sign(b"hello");
        forged.signer = ValidatorId(0);
        assert!(!ring.verify(&forged, b"hello"));
        // out of range signer
        let bogus = Signature { signer: ValidatorId(9), tag: sig.tag };
        assert!(!ring.verify(&bogus, b"hello"));
    }

    #[test]
    fn keys_depend_on_seed() {
        let a = KeyRing::generate(2, 1).signer(ValidatorId(0)).sign(b"m");
        let b = KeyRing::generate(2, 2).signer(ValidatorId(0)).sign(b"m");
        assert_ne!(a.tag, b.tag);
    }
}
