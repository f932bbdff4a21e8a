//! Decentralized identifiers backed by an append-only registry, and
//! verifiable credentials signed with ECDSA.
//!
//! The registry stands in for the public ledger: a log of DID documents with
//! a rolling checksum. Credentials bind a canonical claim body, the
//! subject's public key and a nonce through
//! `hashValue = h(body ‖ subject key ‖ nonce)`; the issuer signs `hashValue`
//! directly as the ECDSA digest.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{DecodeError, Decoder, Encoder};
use crate::crypto::ecdsa::{digest_scalar, sign_digest, verify_digest};
use crate::crypto::group::{point_from_bytes, point_to_bytes};
use crate::crypto::{hash, CurvePoint, Digest, KeyPair, Signature};
use crate::zkp::{Statement, Witness};

pub const NONCE_LEN: usize = 32;
pub const DID_METHOD: &str = "ev";

#[derive(Debug, Error)]
pub enum IdentityError {
    #[error("DID {0} is not registered")]
    NotFound(String),
    #[error("DID {0} is already registered")]
    AlreadyRegistered(String),
    #[error("registry integrity check failed: {0}")]
    Integrity(String),
    #[error("registry storage error: {0}")]
    Storage(#[from] std::io::Error),
    #[error("malformed DID: {0}")]
    MalformedDid(String),
    #[error("precondition violated: {0}")]
    Precondition(&'static str),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Did {
    method: String,
    id: String,
}

impl Did {
    pub fn new(method: &str, id: &str) -> Result<Self, IdentityError> {
        let ok = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'.');
        if !ok(method) || !ok(id) {
            return Err(IdentityError::MalformedDid(format!("did:{method}:{id}")));
        }
        Ok(Self { method: method.to_owned(), id: id.to_owned() })
    }

    pub fn parse(s: &str) -> Result<Self, IdentityError> {
        let mut parts = s.splitn(3, ':');
        match (parts.next(), parts.next(), parts.next()) {
            (Some("did"), Some(method), Some(id)) => Self::new(method, id),
            _ => Err(IdentityError::MalformedDid(s.to_owned())),
        }
    }

    pub fn method(&self) -> &str {
        &self.method
    }

    pub fn id(&self) -> &str {
        &self.id
    }
}

impl fmt::Display for Did {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "did:{}:{}", self.method, self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DidDocument {
    pub id: Did,
    pub public_key: CurvePoint,
    pub authentication: String,
}

impl DidDocument {
    pub fn new(id: Did, public_key: CurvePoint) -> Self {
        let authentication = format!("{id}#key-1");
        Self { id, public_key, authentication }
    }
}

const REGISTRY_HEADER: &str = "evcharge-registry v1";

/// Append-only DID registry.
///
/// On disk it is a text log: a header line, then one tab-separated line per
/// document `did  pubkey-hex  auth-id  chain-hex`, where
/// `chain_i = h("registry-log", chain_{i-1}, did, pubkey, auth-id)` and
/// `chain_0` is 32 zero bytes. Appends take `&mut self`; reads are `&self`.
#[derive(Debug)]
pub struct Registry {
    docs: Vec<DidDocument>,
    index: HashMap<Did, usize>,
    chain: Digest,
    path: Option<PathBuf>,
}

fn chain_step(prev: &Digest, doc: &DidDocument) -> Digest {
    hash(&[
        &b"registry-log"[..],
        prev.as_bytes(),
        doc.id.to_string().as_bytes(),
        &point_to_bytes(&doc.public_key),
        doc.authentication.as_bytes(),
    ])
}

impl Registry {
    pub fn in_memory() -> Self {
        Self { docs: Vec::new(), index: HashMap::new(), chain: Digest([0; 32]), path: None }
    }

    /// Opens the log at `path`, creating it if absent, and replays it,
    /// verifying every checksum.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, IdentityError> {
        let path = path.as_ref().to_path_buf();
        let mut reg = Self::in_memory();
        if !path.exists() {
            let mut f = File::create(&path)?;
            writeln!(f, "{REGISTRY_HEADER}")?;
            f.sync_all()?;
            reg.path = Some(path);
            return Ok(reg);
        }
        let mut lines = BufReader::new(File::open(&path)?).lines();
        match lines.next() {
            Some(Ok(h)) if h == REGISTRY_HEADER => {}
            _ => return Err(IdentityError::Integrity("missing registry header".into())),
        }
        for (n, line) in lines.enumerate() {
            let line = line?;
            let bad = |what: &str| IdentityError::Integrity(format!("entry {n}: {what}"));
            let cols: Vec<&str> = line.split('\t').collect();
            let [did, key, auth, chain] = cols[..] else {
                return Err(bad("wrong column count"));
            };
            let id = Did::parse(did).map_err(|_| bad("bad DID"))?;
            let key = hex::decode(key).ok().and_then(|b| point_from_bytes(&b).ok()).ok_or_else(|| bad("bad key"))?;
            let doc = DidDocument { id, public_key: key, authentication: auth.to_owned() };
            let expected = chain_step(&reg.chain, &doc);
            if expected.to_hex() != chain {
                return Err(bad("checksum mismatch"));
            }
            reg.insert(doc, expected).map_err(|_| bad("duplicate DID"))?;
        }
        reg.path = Some(path);
        Ok(reg)
    }

    fn insert(&mut self, doc: DidDocument, chain: Digest) -> Result<(), IdentityError> {
        if self.index.contains_key(&doc.id) {
            return Err(IdentityError::AlreadyRegistered(doc.id.to_string()));
        }
        self.index.insert(doc.id.clone(), self.docs.len());
        self.docs.push(doc);
        self.chain = chain;
        Ok(())
    }

    pub fn register(&mut self, doc: DidDocument) -> Result<(), IdentityError> {
        if self.index.contains_key(&doc.id) {
            return Err(IdentityError::AlreadyRegistered(doc.id.to_string()));
        }
        let chain = chain_step(&self.chain, &doc);
        if let Some(path) = &self.path {
            let mut f = OpenOptions::new().append(true).open(path)?;
            writeln!(
                f,
                "{}\t{}\t{}\t{}",
                doc.id,
                hex::encode(point_to_bytes(&doc.public_key)),
                doc.authentication,
                chain.to_hex()
            )?;
            f.sync_data()?;
        }
        self.insert(doc, chain)
    }

    pub fn resolve(&self, did: &Did) -> Result<&DidDocument, IdentityError> {
        self.index.get(did).map(|&i| &self.docs[i]).ok_or_else(|| IdentityError::NotFound(did.to_string()))
    }

    pub fn contains(&self, did: &Did) -> bool {
        self.index.contains_key(did)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Rolling checksum after the last entry.
    pub fn head(&self) -> &Digest {
        &self.chain
    }
}

/// Creates a fresh DID for `public_key` (id derived from the key and a random
/// salt) and registers its document.
pub fn create_did<R: RngCore + CryptoRng>(
    method: &str,
    public_key: &CurvePoint,
    registry: &mut Registry,
    rng: &mut R,
) -> Result<Did, IdentityError> {
    loop {
        let mut salt = [0u8; 16];
        rng.fill_bytes(&mut salt);
        let digest = hash(&[&b"did"[..], &point_to_bytes(public_key), &salt]);
        let did = Did::new(method, &hex::encode(&digest.as_bytes()[..16]))?;
        if registry.contains(&did) {
            continue;
        }
        registry.register(DidDocument::new(did.clone(), *public_key))?;
        return Ok(did);
    }
}

pub fn resolve_did<'a>(did: &Did, registry: &'a Registry) -> Result<&'a DidDocument, IdentityError> {
    registry.resolve(did)
}

/// Claim set of a credential. The canonical encoding is compact JSON with
/// keys in lexicographic order; field order below is chosen to match.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CredentialBody {
    pub attributes: BTreeMap<String, String>,
    pub issued_at: u64,
    pub issuer: String,
    pub subject: String,
}

impl CredentialBody {
    pub fn new(issuer: &Did, subject: impl Into<String>, issued_at: u64) -> Self {
        Self { attributes: BTreeMap::new(), issued_at, issuer: issuer.to_string(), subject: subject.into() }
    }

    pub fn with_attribute(mut self, key: &str, value: &str) -> Self {
        self.attributes.insert(key.to_owned(), value.to_owned());
        self
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("string maps always serialize")
    }

    /// Parses a body, rejecting anything that is not byte-identical to its
    /// own canonical re-encoding.
    pub fn from_canonical(bytes: &[u8]) -> Result<Self, DecodeError> {
        let body: Self = serde_json::from_slice(bytes).map_err(|_| DecodeError::Invalid("credential body"))?;
        if body.canonical_bytes() != bytes {
            return Err(DecodeError::Invalid("non-canonical credential body"));
        }
        Ok(body)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedCredential {
    pub body: CredentialBody,
    pub subject_key: CurvePoint,
    pub nonce: [u8; NONCE_LEN],
    pub hash_value: Digest,
    pub signature: Signature,
}

impl SignedCredential {
    /// `body ‖ subject key ‖ nonce ‖ hashValue ‖ signature`, each
    /// length-prefixed.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.field(&self.body.canonical_bytes())
            .field(&point_to_bytes(&self.subject_key))
            .field(&self.nonce)
            .field(self.hash_value.as_bytes())
            .field(&self.signature.to_bytes());
        enc.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        let vc = Self::decode(&mut dec)?;
        dec.finish()?;
        Ok(vc)
    }

    pub(crate) fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            body: CredentialBody::from_canonical(dec.field("credential body")?)?,
            subject_key: point_from_bytes(dec.field("subject key")?)?,
            nonce: dec.fixed_field("credential nonce")?,
            hash_value: Digest::from_slice(dec.field("hashValue")?)?,
            signature: Signature::from_bytes(dec.field("signature")?)?,
        })
    }
}

pub fn make_hashvalue(body: &CredentialBody, subject_key: &CurvePoint, nonce: &[u8]) -> Digest {
    hash(&[&body.canonical_bytes()[..], &point_to_bytes(subject_key), nonce])
}

pub fn issue_vc(
    issuer: &KeyPair,
    body: CredentialBody,
    subject_key: CurvePoint,
    nonce: [u8; NONCE_LEN],
) -> SignedCredential {
    let hash_value = make_hashvalue(&body, &subject_key, &nonce);
    let signature = sign_digest(&hash_value, issuer.private());
    SignedCredential { body, subject_key, nonce, hash_value, signature }
}

/// Checks the stored `hashValue` against a recomputation and the signature
/// against the issuer document's key.
pub fn verify_vc(vc: &SignedCredential, issuer: &DidDocument) -> bool {
    vc.body.issuer == issuer.id.to_string()
        && make_hashvalue(&vc.body, &vc.subject_key, &vc.nonce) == vc.hash_value
        && verify_digest(&vc.hash_value, &issuer.public_key, &vc.signature)
}

/// Derives the possession-proof statement `(Q, hashValue, R)` and witness
/// `a = hashValue · s⁻¹` from a credential.
///
/// Validity is checked through the witness relation `a·B = R`, which holds
/// exactly when the signature verifies with its full point `R`.
pub fn vc_to_statement(vc: &SignedCredential, issuer_key: &CurvePoint) -> Result<(Statement, Witness), IdentityError> {
    if make_hashvalue(&vc.body, &vc.subject_key, &vc.nonce) != vc.hash_value {
        return Err(IdentityError::Precondition("credential hashValue does not match its contents"));
    }
    let st = Statement::new(*issuer_key, vc.hash_value, *vc.signature.point())
        .map_err(|_| IdentityError::Precondition("credential yields a degenerate statement"))?;
    let s_inv = vc.signature.s().invert().expect("signature s is nonzero");
    let w = Witness::new(digest_scalar(vc.hash_value.as_bytes()) * s_inv);
    if !w.satisfies(&st) {
        return Err(IdentityError::Precondition("credential does not verify under the issuer key"));
    }
    Ok((st, w))
}
