//! Instrumented wrappers around the primitives the roles invoke.
//!
//! A protocol-level hash is one call of [`Meter::hash`]. Hashing that is
//! internal to a primitive is charged to that primitive instead: the message
//! digest inside ECDSA signing and verification, the ZKP challenge, the
//! hybrid-encryption key schedule and keystream expansion.

use std::fmt;
use std::ops::{Add, AddAssign};

use rand::{CryptoRng, RngCore};

use crate::crypto::{hash, hybrid, CryptoError, CurvePoint, Digest, KeyPair, Scalar};
use crate::identity::{issue_vc, vc_to_statement, verify_vc, CredentialBody, DidDocument, SignedCredential};
use crate::zkp::{self, Proof, Statement};

use super::ProtocolError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Hash,
    Sign,
    Verify,
    ZkProve,
    ZkVerify,
    Encrypt,
    Decrypt,
}

impl OpKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Hash => "hash",
            Self::Sign => "ecdsa-sign",
            Self::Verify => "ecdsa-verify",
            Self::ZkProve => "zk-prove",
            Self::ZkVerify => "zk-verify",
            Self::Encrypt => "hybrid-encrypt",
            Self::Decrypt => "hybrid-decrypt",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub hash: u32,
    pub sign: u32,
    pub verify: u32,
    pub zk_prove: u32,
    pub zk_verify: u32,
    pub encrypt: u32,
    pub decrypt: u32,
}

impl OpCounts {
    fn bump(&mut self, kind: OpKind) {
        let slot = match kind {
            OpKind::Hash => &mut self.hash,
            OpKind::Sign => &mut self.sign,
            OpKind::Verify => &mut self.verify,
            OpKind::ZkProve => &mut self.zk_prove,
            OpKind::ZkVerify => &mut self.zk_verify,
            OpKind::Encrypt => &mut self.encrypt,
            OpKind::Decrypt => &mut self.decrypt,
        };
        *slot += 1;
    }
}

impl Add for OpCounts {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        self += o;
        self
    }
}

impl AddAssign for OpCounts {
    fn add_assign(&mut self, o: Self) {
        self.hash += o.hash;
        self.sign += o.sign;
        self.verify += o.verify;
        self.zk_prove += o.zk_prove;
        self.zk_verify += o.zk_verify;
        self.encrypt += o.encrypt;
        self.decrypt += o.decrypt;
    }
}

impl fmt::Display for OpCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "hash={} sign={} verify={} zk_prove={} zk_verify={} encrypt={} decrypt={}",
            self.hash, self.sign, self.verify, self.zk_prove, self.zk_verify, self.encrypt, self.decrypt
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpRecord {
    pub kind: OpKind,
    pub label: &'static str,
}

#[derive(Debug, Clone, Default)]
pub struct Meter {
    counts: OpCounts,
    log: Vec<OpRecord>,
}

impl Meter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn counts(&self) -> OpCounts {
        self.counts
    }

    pub fn log(&self) -> &[OpRecord] {
        &self.log
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }

    /// Appends another meter's records, as when folding per-phase meters
    /// into a role total.
    pub fn absorb(&mut self, other: &Meter) {
        self.counts += other.counts;
        self.log.extend_from_slice(&other.log);
    }

    fn record(&mut self, kind: OpKind, label: &'static str) {
        self.counts.bump(kind);
        self.log.push(OpRecord { kind, label });
    }

    pub fn hash<P: AsRef<[u8]>>(&mut self, label: &'static str, parts: &[P]) -> Digest {
        self.record(OpKind::Hash, label);
        hash(parts)
    }

    /// Issues a credential; the hashValue computation is the signature's
    /// message digest.
    pub fn issue_vc(
        &mut self,
        label: &'static str,
        issuer: &KeyPair,
        body: CredentialBody,
        subject_key: CurvePoint,
        nonce: [u8; 32],
    ) -> SignedCredential {
        self.record(OpKind::Sign, label);
        issue_vc(issuer, body, subject_key, nonce)
    }

    pub fn verify_vc(&mut self, label: &'static str, vc: &SignedCredential, issuer: &DidDocument) -> bool {
        self.record(OpKind::Verify, label);
        verify_vc(vc, issuer)
    }

    /// Recomputes the holder's hashValue (one protocol hash) and proves
    /// possession of the issuer signature over it.
    pub fn prove_possession<R: RngCore + CryptoRng>(
        &mut self,
        vc: &SignedCredential,
        issuer_key: &CurvePoint,
        rng: &mut R,
    ) -> Result<(Statement, Proof), ProtocolError> {
        self.record(OpKind::Hash, "hashValue");
        self.record(OpKind::ZkProve, "proof pi");
        let (st, w) = vc_to_statement(vc, issuer_key)?;
        let (crs, _) = zkp::setup(zkp::VC_POSSESSION, zkp::Mode::Production);
        let proof = zkp::prove(&crs, &st, &w, rng).map_err(|_| ProtocolError::Precondition("witness rejected"))?;
        Ok((st, proof))
    }

    pub fn verify_possession(&mut self, label: &'static str, st: &Statement, proof: &Proof) -> bool {
        self.record(OpKind::ZkVerify, label);
        let (crs, _) = zkp::setup(zkp::VC_POSSESSION, zkp::Mode::Production);
        zkp::verify(&crs, st, proof)
    }

    pub fn encrypt<R: RngCore + CryptoRng>(&mut self, label: &'static str, to: &CurvePoint, pt: &[u8], rng: &mut R) -> Vec<u8> {
        self.record(OpKind::Encrypt, label);
        hybrid::encrypt(to, pt, rng)
    }

    pub fn decrypt(&mut self, label: &'static str, key: &Scalar, ct: &[u8]) -> Result<Vec<u8>, CryptoError> {
        self.record(OpKind::Decrypt, label);
        hybrid::decrypt(key, ct)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_follow_the_log() {
        let mut m = Meter::new();
        m.hash("a", &[b"x"]);
        m.hash("b", &[b"y"]);
        assert_eq!(m.counts().hash, 2);
        assert_eq!(m.log().iter().map(|r| r.label).collect::<Vec<_>>(), ["a", "b"]);
        let mut total = Meter::new();
        total.absorb(&m);
        total.absorb(&m);
        assert_eq!(total.counts().hash, 4);
        assert_eq!(m.hash("c", &[b"x"]), hash(&[b"x"]));
    }
}
