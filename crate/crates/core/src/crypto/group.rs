//! Group parameters and canonical encodings for the configured curve.
//!
//! The whole crate works over NIST P-256. Scalars are encoded as 32-byte
//! big-endian integers below the group order; points as 33-byte SEC1
//! compressed encodings. The identity has no encoding here: no public value
//! exchanged by the protocol is ever the identity.

use p256::elliptic_curve::bigint::U256;
use p256::elliptic_curve::group::Group;
use p256::elliptic_curve::ops::Reduce;
use p256::elliptic_curve::point::AffineCoordinates;
use p256::elliptic_curve::sec1::{FromEncodedPoint, ToEncodedPoint};
use p256::elliptic_curve::{Field, PrimeField};
use p256::{EncodedPoint, FieldBytes};
use rand::{CryptoRng, RngCore};

use crate::codec::DecodeError;

pub use p256::{AffinePoint as CurvePoint, ProjectivePoint, Scalar};

/// Static description of the group every key and proof lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupParams {
    pub curve: &'static str,
    /// Big-endian group order `m`.
    pub order: [u8; 32],
    /// Compressed generator.
    pub generator: [u8; POINT_LEN],
}

pub const SCALAR_LEN: usize = 32;
pub const POINT_LEN: usize = 33;

pub const GROUP: GroupParams = GroupParams {
    curve: "P-256",
    order: [
        0xff, 0xff, 0xff, 0xff, 0x00, 0x00, 0x00, 0x00, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff,
        0xbc, 0xe6, 0xfa, 0xad, 0xa7, 0x17, 0x9e, 0x84, 0xf3, 0xb9, 0xca, 0xc2, 0xfc, 0x63, 0x25, 0x51,
    ],
    generator: [
        0x03, 0x6b, 0x17, 0xd1, 0xf2, 0xe1, 0x2c, 0x42, 0x47, 0xf8, 0xbc, 0xe6, 0xe5, 0x63, 0xa4, 0x40,
        0xf2, 0x77, 0x03, 0x7d, 0x81, 0x2d, 0xeb, 0x33, 0xa0, 0xf4, 0xa1, 0x39, 0x45, 0xd8, 0x98, 0xc2,
        0x96,
    ],
};

pub fn generator() -> ProjectivePoint {
    ProjectivePoint::GENERATOR
}

pub fn scalar_to_bytes(s: &Scalar) -> [u8; SCALAR_LEN] {
    s.to_bytes().into()
}

/// Decodes a canonical scalar; values `>= m` are rejected, not reduced.
pub fn scalar_from_bytes(bytes: &[u8]) -> Result<Scalar, DecodeError> {
    let arr: [u8; SCALAR_LEN] = bytes.try_into().map_err(|_| DecodeError::Invalid("scalar length"))?;
    Option::from(Scalar::from_repr(FieldBytes::from(arr))).ok_or(DecodeError::Invalid("scalar"))
}

/// Interprets 32 bytes as a big-endian integer reduced mod `m`.
pub fn scalar_reduce(bytes: &[u8; 32]) -> Scalar {
    <Scalar as Reduce<U256>>::reduce_bytes(&FieldBytes::from(*bytes))
}

pub fn random_scalar<R: RngCore + CryptoRng>(rng: &mut R) -> Scalar {
    Scalar::random(rng)
}

pub fn random_nonzero_scalar<R: RngCore + CryptoRng>(rng: &mut R) -> Scalar {
    loop {
        let s = Scalar::random(&mut *rng);
        if !bool::from(s.is_zero()) {
            return s;
        }
    }
}

pub fn point_to_bytes(p: &CurvePoint) -> [u8; POINT_LEN] {
    let enc = p.to_encoded_point(true);
    enc.as_bytes().try_into().expect("identity has no compressed encoding")
}

pub fn point_from_bytes(bytes: &[u8]) -> Result<CurvePoint, DecodeError> {
    if bytes.len() != POINT_LEN {
        return Err(DecodeError::Invalid("point length"));
    }
    // only compressed SEC1 tags; 0x05 (compact) would otherwise parse
    if bytes[0] != 0x02 && bytes[0] != 0x03 {
        return Err(DecodeError::Invalid("point tag"));
    }
    let enc = EncodedPoint::from_bytes(bytes).map_err(|_| DecodeError::Invalid("point"))?;
    Option::from(CurvePoint::from_encoded_point(&enc)).ok_or(DecodeError::Invalid("point"))
}

pub fn is_identity(p: &ProjectivePoint) -> bool {
    bool::from(p.is_identity())
}

/// The x-coordinate of `p` reduced mod `m` (ECDSA's `r`).
pub fn x_mod_order(p: &CurvePoint) -> Scalar {
    <Scalar as Reduce<U256>>::reduce_bytes(&p.x())
}
