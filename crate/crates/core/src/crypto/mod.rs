//! Elliptic-curve primitives: keys, ECDSA, the protocol hash, keystream
//! masking and hybrid encryption.

pub mod ecdsa;
pub mod group;
pub mod hash;
pub mod hybrid;

use thiserror::Error;

pub use ecdsa::{KeyPair, Signature, SIGNATURE_LEN};
pub use group::{CurvePoint, GroupParams, ProjectivePoint, Scalar, GROUP, POINT_LEN, SCALAR_LEN};
pub use hash::{hash, keystream_wrap, Digest, DIGEST_LEN};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("malformed input: {0}")]
    Malformed(&'static str),
    #[error("authentication tag mismatch")]
    Authentication,
}
