//! Role state machines for registration, authentication and key recovery.
//!
//! Every role function takes the randomness source and an op [`Meter`]
//! explicitly, so one deployment can be replayed bit-exactly and its
//! cryptographic work accounted per role.

pub mod cs;
pub mod messages;
pub mod meter;
pub mod recovery;
pub mod store;
pub mod user;
pub mod usp;

use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::codec::DecodeError;
use crate::crypto::group::scalar_reduce;
use crate::crypto::{hash, CurvePoint, KeyPair};
use crate::identity::{issue_vc, CredentialBody, Did, DidDocument, IdentityError, Registry, SignedCredential, DID_METHOD};
use crate::sharing::SharingError;

pub use cs::{CsSession, CsState};
pub use messages::Message;
pub use meter::{Meter, OpCounts, OpKind, OpRecord};
pub use recovery::{key_backup, key_recover, recover_from_shares, Custodian};
pub use user::{Enrollment, UserSession, Wallet};
pub use usp::{Authorized, UserSnapshot, Usp};

/// 32-byte symmetric values: session keys, shared keys, nonces, PDIDs.
pub type Secret32 = [u8; 32];

pub const REGISTRATION_REQUEST: &str = "ev-user-registration";
pub const CHARGING_REQUEST: &str = "ev-charging";
pub const PROOF_REQUEST: &str = "vc-possession-proof";
pub const DEFAULT_SHADOW_COUNT: usize = 10;

pub const ATTR_REGISTERED_USER: &str = "registeredEvUser";
pub const ATTR_STATION: &str = "chargingStation";
pub const ATTR_DIGITAL_ID: &str = "digitalIdentity";

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Decode(#[from] DecodeError),
    #[error("biometric or password mismatch")]
    LocalAuth,
    #[error("charging station credential rejected: {0}")]
    PeerAuth(&'static str),
    #[error("user possession proof rejected")]
    UserAuth,
    #[error("unknown identity: {0}")]
    Identity(&'static str),
    #[error("integrity check failed: {0}")]
    Integrity(&'static str),
    #[error("user location does not match the charging station")]
    LocationForgery,
    #[error("stale or reused value: {0}")]
    Replay(&'static str),
    #[error("session payload could not be decrypted")]
    Confidentiality,
    #[error("message out of order: {0}")]
    ProtocolOrder(&'static str),
    #[error("no unused shadow identity left")]
    ReRegistrationRequired,
    #[error("registration rejected: {0}")]
    RegistrationRejected(&'static str),
    #[error("identity already registered")]
    AlreadyRegistered,
    #[error("private key is not present on this device")]
    KeyMissing,
    #[error("share could not be decrypted")]
    ShareDecrypt,
    #[error("recovered key does not match the registered public key")]
    CorruptShare,
    #[error("precondition violated: {0}")]
    Precondition(&'static str),
    #[error(transparent)]
    Sharing(SharingError),
    #[error("state file failed its integrity check: {0}")]
    CorruptState(&'static str),
    #[error("storage error: {0}")]
    Storage(#[from] std::io::Error),
}

impl ProtocolError {
    /// Stable machine-readable name.
    pub fn name(&self) -> &'static str {
        match self {
            Self::Decode(_) => "decode-error",
            Self::LocalAuth => "local-auth-error",
            Self::PeerAuth(_) => "peer-auth-error",
            Self::UserAuth => "user-auth-error",
            Self::Identity(_) => "identity-error",
            Self::Integrity(_) => "integrity-error",
            Self::LocationForgery => "location-forgery-error",
            Self::Replay(_) => "replay-error",
            Self::Confidentiality => "confidentiality-error",
            Self::ProtocolOrder(_) => "protocol-order-error",
            Self::ReRegistrationRequired => "re-registration-required",
            Self::RegistrationRejected(_) => "registration-rejected",
            Self::AlreadyRegistered => "already-registered",
            Self::KeyMissing => "key-missing",
            Self::ShareDecrypt => "share-decrypt-error",
            Self::CorruptShare => "corrupt-share-error",
            Self::Precondition(_) => "precondition-error",
            Self::Sharing(_) => "sharing-error",
            Self::CorruptState(_) => "state-integrity-error",
            Self::Storage(_) => "storage-error",
        }
    }
}

impl From<SharingError> for ProtocolError {
    fn from(e: SharingError) -> Self {
        match e {
            SharingError::Decrypt => Self::ShareDecrypt,
            other => Self::Sharing(other),
        }
    }
}

impl From<IdentityError> for ProtocolError {
    fn from(e: IdentityError) -> Self {
        match e {
            IdentityError::NotFound(_) => Self::Identity("DID not registered"),
            IdentityError::AlreadyRegistered(_) => Self::AlreadyRegistered,
            IdentityError::Integrity(_) => Self::CorruptState("registry log"),
            IdentityError::Storage(io) => Self::Storage(io),
            IdentityError::MalformedDid(_) => Self::Decode(DecodeError::Invalid("DID")),
            IdentityError::Precondition(p) => Self::Precondition(p),
            IdentityError::Decode(d) => Self::Decode(d),
        }
    }
}

/// Result of feeding one message to a session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Send(Message),
    Finished { send: Option<Message>, session_key: Secret32 },
}

pub(crate) fn random32<R: RngCore + CryptoRng>(rng: &mut R) -> Secret32 {
    let mut out = [0u8; 32];
    rng.fill_bytes(&mut out);
    out
}

pub(crate) fn xor32(a: &Secret32, b: &Secret32) -> Secret32 {
    std::array::from_fn(|i| a[i] ^ b[i])
}

/// The trusted digital-identity issuer. Its key is a fixed built-in value so
/// every deployment and every CLI invocation agrees on it.
pub struct GovIssuer {
    keys: KeyPair,
    did: Did,
}

impl GovIssuer {
    pub fn builtin() -> Self {
        let d = scalar_reduce(hash(&[&b"evcharge builtin digital-identity issuer"[..]]).as_bytes());
        let keys = KeyPair::from_private(d).expect("fixed seed reduces to a nonzero scalar");
        let did = Did::new(DID_METHOD, "gov").expect("static DID");
        Self { keys, did }
    }

    pub fn did(&self) -> &Did {
        &self.did
    }

    pub fn public(&self) -> &CurvePoint {
        self.keys.public()
    }

    pub fn document(&self) -> DidDocument {
        DidDocument::new(self.did.clone(), *self.keys.public())
    }

    /// Adds the issuer's document unless the registry already holds it.
    pub fn publish(&self, registry: &mut Registry) -> Result<(), ProtocolError> {
        match registry.resolve(&self.did) {
            Ok(doc) if doc.public_key == *self.keys.public() => Ok(()),
            Ok(_) => Err(ProtocolError::CorruptState("registry holds a different issuer key")),
            Err(_) => Ok(registry.register(self.document())?),
        }
    }

    /// Issues the digital-identity credential a user presents at registration.
    pub fn issue_identity<R: RngCore + CryptoRng>(
        &self,
        subject: &Did,
        subject_key: &CurvePoint,
        issued_at: u64,
        rng: &mut R,
    ) -> SignedCredential {
        let body = CredentialBody::new(&self.did, subject.to_string(), issued_at).with_attribute(ATTR_DIGITAL_ID, "verified");
        issue_vc(&self.keys, body, *subject_key, random32(rng))
    }
}
