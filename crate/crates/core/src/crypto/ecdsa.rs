//! ECDSA over the configured curve, keeping the full nonce point `R` in the
//! signature so it can serve as the public part of a possession proof.
//!
//! The per-signature nonce is derived from the private key and the signed
//! digest, so signing needs no randomness and never reuses a nonce across
//! distinct digests.

use p256::elliptic_curve::Field;
use rand::{CryptoRng, RngCore};

use super::group::{
    generator, point_from_bytes, point_to_bytes, random_nonzero_scalar, scalar_from_bytes, scalar_reduce,
    scalar_to_bytes, x_mod_order, CurvePoint, ProjectivePoint, Scalar, POINT_LEN, SCALAR_LEN,
};
use super::hash::{hash, sha256, Digest};
use crate::codec::DecodeError;

pub const SIGNATURE_LEN: usize = POINT_LEN + SCALAR_LEN;

#[derive(Clone)]
pub struct KeyPair {
    private: Scalar,
    public: CurvePoint,
}

impl KeyPair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Self::from_private(random_nonzero_scalar(rng)).expect("nonzero scalar")
    }

    /// Returns `None` for the zero scalar.
    pub fn from_private(private: Scalar) -> Option<Self> {
        if bool::from(private.is_zero()) {
            return None;
        }
        let public = (generator() * private).to_affine();
        Some(Self { private, public })
    }

    pub fn private(&self) -> &Scalar {
        &self.private
    }

    pub fn public(&self) -> &CurvePoint {
        &self.public
    }
}

impl std::fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyPair").field("public", &hex::encode(point_to_bytes(&self.public))).finish_non_exhaustive()
    }
}

/// `(R, r, s)` with `r = R.x mod m`.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature {
    point: CurvePoint,
    r: Scalar,
    s: Scalar,
}

impl std::fmt::Debug for Signature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Signature({})", hex::encode(self.to_bytes()))
    }
}

impl Signature {
    /// Assembles a signature from its parts. Fails if `R` yields `r = 0` or
    /// `s = 0`.
    pub fn from_parts(point: CurvePoint, s: Scalar) -> Result<Self, DecodeError> {
        let r = x_mod_order(&point);
        if bool::from(r.is_zero()) || bool::from(s.is_zero()) {
            return Err(DecodeError::Invalid("signature scalar"));
        }
        Ok(Self { point, r, s })
    }

    pub fn point(&self) -> &CurvePoint {
        &self.point
    }

    pub fn r(&self) -> &Scalar {
        &self.r
    }

    pub fn s(&self) -> &Scalar {
        &self.s
    }

    /// `R ‖ s`
    pub fn to_bytes(&self) -> [u8; SIGNATURE_LEN] {
        let mut out = [0u8; SIGNATURE_LEN];
        out[..POINT_LEN].copy_from_slice(&point_to_bytes(&self.point));
        out[POINT_LEN..].copy_from_slice(&scalar_to_bytes(&self.s));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        if bytes.len() != SIGNATURE_LEN {
            return Err(DecodeError::Invalid("signature length"));
        }
        let point = point_from_bytes(&bytes[..POINT_LEN])?;
        let s = scalar_from_bytes(&bytes[POINT_LEN..])?;
        Self::from_parts(point, s)
    }
}

/// The integer `h` signed for a 32-byte digest.
pub fn digest_scalar(digest: &[u8; 32]) -> Scalar {
    scalar_reduce(digest)
}

/// Signs `msg`, hashing it with SHA-256 first.
pub fn sign(msg: &[u8], private: &Scalar) -> Signature {
    sign_prehash(&sha256(msg), private)
}

/// Signs an already computed 32-byte digest, `s = k⁻¹(h + r·d) mod m`.
pub fn sign_prehash(digest: &[u8; 32], private: &Scalar) -> Signature {
    assert!(!bool::from(private.is_zero()), "signing key must be nonzero");
    let d = scalar_to_bytes(private);
    for counter in 0u32.. {
        let k = scalar_reduce(&hash(&[&b"ecdsa-nonce"[..], &d, digest, &counter.to_be_bytes()]).0);
        if let Some(sig) = sign_with_nonce(digest, private, &k) {
            return sig;
        }
    }
    unreachable!("nonce derivation exhausted")
}

/// One signing attempt with an explicit nonce. `None` when `k`, `r` or `s`
/// is zero.
pub(crate) fn sign_with_nonce(digest: &[u8; 32], private: &Scalar, k: &Scalar) -> Option<Signature> {
    let k_inv = Option::<Scalar>::from(k.invert())?;
    let point = (generator() * k).to_affine();
    let r = x_mod_order(&point);
    if bool::from(r.is_zero()) {
        return None;
    }
    let s = k_inv * (digest_scalar(digest) + r * private);
    if bool::from(s.is_zero()) {
        return None;
    }
    Some(Signature { point, r, s })
}

pub fn verify(msg: &[u8], public: &CurvePoint, sig: &Signature) -> bool {
    verify_prehash(&sha256(msg), public, sig)
}

/// Accepts iff `R' = (h·s⁻¹)G + (r·s⁻¹)Q` equals the carried `R`. Equality
/// of full points implies `R'.x mod m = r`; it also rejects the sign-flipped
/// twin of `R`, which an x-only check would let through.
pub fn verify_prehash(digest: &[u8; 32], public: &CurvePoint, sig: &Signature) -> bool {
    if bool::from(sig.r.is_zero()) || bool::from(sig.s.is_zero()) || sig.r != x_mod_order(&sig.point) {
        return false;
    }
    let Some(s_inv) = Option::<Scalar>::from(sig.s.invert()) else {
        return false;
    };
    let h = digest_scalar(digest);
    let recovered = generator() * (h * s_inv) + ProjectivePoint::from(*public) * (sig.r * s_inv);
    recovered.to_affine() == sig.point
}

/// Convenience for callers holding a [`Digest`].
pub fn sign_digest(digest: &Digest, private: &Scalar) -> Signature {
    sign_prehash(digest.as_bytes(), private)
}

pub fn verify_digest(digest: &Digest, public: &CurvePoint, sig: &Signature) -> bool {
    verify_prehash(digest.as_bytes(), public, sig)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::group::is_identity;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn scalar_hex(h: &str) -> Scalar {
        scalar_from_bytes(&hex::decode(h).unwrap()).unwrap()
    }

    // Deterministic-nonce test vectors for P-256 / SHA-256 (RFC 6979 A.2.5),
    // cross-checked with an independent affine-arithmetic implementation.
    const PRIV: &str = "c9afa9d845ba75166b5c215767b1d6934e50c3db36e89b127b8a622b120f6721";
    const PUB_X: &str = "60fed4ba255a9d31c961eb74c6356d68c049b8923b61fa6ce669622e60f29fb6";
    const VECTORS: [(&str, &str, &str, &str); 2] = [
        (
            "sample",
            "a6e3c57dd01abe90086538398355dd4c3b17aa873382b0f24d6129493d8aad60",
            "efd48b2aacb6a8fd1140dd9cd45e81d69d2c877b56aaf991c34d0ea84eaf3716",
            "f7cb1c942d657c41d436c7a1b6e29f65f3e900dbb9aff4064dc4ab2f843acda8",
        ),
        (
            "test",
            "d16b6ae827f17175e040871a1c7ec3500192c4c92677336ec2537acaee0008e0",
            "f1abb023518351cd71d881567b1ea663ed3efcf6c5132b354f28d3b0b7d38367",
            "019f4113742a2b14bd25926b49c649155f267e60d3814b4c0cc84250e46f0083",
        ),
    ];

    #[test]
    fn published_vectors() {
        let d = scalar_hex(PRIV);
        let kp = KeyPair::from_private(d).unwrap();
        assert_eq!(hex::encode(&point_to_bytes(kp.public())[1..]), PUB_X);
        for (msg, k, r, s) in VECTORS {
            let sig = sign_with_nonce(&sha256(msg.as_bytes()), &d, &scalar_hex(k)).unwrap();
            assert_eq!(hex::encode(scalar_to_bytes(sig.r())), r, "r for {msg}");
            assert_eq!(hex::encode(scalar_to_bytes(sig.s())), s, "s for {msg}");
            assert!(verify(msg.as_bytes(), kp.public(), &sig));
        }
    }

    #[test]
    fn keygen_is_on_curve_and_fresh() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let a = KeyPair::generate(&mut rng);
        let b = KeyPair::generate(&mut rng);
        assert_ne!(a.private(), b.private());
        // decoding validates the curve equation
        assert_eq!(point_from_bytes(&point_to_bytes(a.public())).unwrap(), *a.public());
        assert!(KeyPair::from_private(Scalar::ZERO).is_none());
    }

    #[test]
    fn roundtrip_and_tamper() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let kp = KeyPair::generate(&mut rng);
        let msg = b"charging credential".to_vec();
        let sig = sign(&msg, kp.private());
        assert!(verify(&msg, kp.public(), &sig));

        let mut flipped = msg.clone();
        flipped[0] ^= 1;
        assert!(!verify(&flipped, kp.public(), &sig));

        let other = KeyPair::generate(&mut rng);
        assert!(!verify(&msg, other.public(), &sig));
    }

    #[test]
    fn s_plus_one_is_rejected_by_direct_arithmetic() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let kp = KeyPair::generate(&mut rng);
        let digest = sha256(b"m");
        let sig = sign_prehash(&digest, kp.private());
        let bumped = Signature::from_parts(sig.point, sig.s + Scalar::ONE).unwrap();
        // recompute R' by hand for the bumped s
        let s_inv = bumped.s.invert().unwrap();
        let h = digest_scalar(&digest);
        let r_prime = (generator() * (h * s_inv) + ProjectivePoint::from(*kp.public()) * (sig.r * s_inv)).to_affine();
        assert_ne!(x_mod_order(&r_prime), sig.r);
        assert!(!verify_prehash(&digest, kp.public(), &bumped));
    }

    #[test]
    fn negated_nonce_point_is_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let kp = KeyPair::generate(&mut rng);
        let sig = sign(b"m", kp.private());
        let mut bytes = sig.to_bytes();
        bytes[0] ^= 1; // 0x02 <-> 0x03: same x, opposite y
        let twin = Signature::from_bytes(&bytes).unwrap();
        assert_eq!(twin.r(), sig.r());
        assert!(!verify(b"m", kp.public(), &twin));
    }

    #[test]
    fn zero_scalars_do_not_decode() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let kp = KeyPair::generate(&mut rng);
        let sig = sign(b"m", kp.private());
        let mut bytes = sig.to_bytes();
        bytes[POINT_LEN..].fill(0);
        assert!(Signature::from_bytes(&bytes).is_err());
        assert!(!is_identity(&ProjectivePoint::from(*sig.point())));
    }

    #[test]
    fn signature_bytes_roundtrip() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let kp = KeyPair::generate(&mut rng);
        let sig = sign(b"m", kp.private());
        assert_eq!(Signature::from_bytes(&sig.to_bytes()).unwrap(), sig);
    }
}
