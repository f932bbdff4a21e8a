//! Public-key hybrid encryption (ECIES-style) used to deliver the user's
//! session material through the charging station.
//!
//! Layout: `E ‖ C ‖ T` where `E = e·G` (33 bytes), `C` the keystream
//! ciphertext and `T` a 32-byte HMAC-SHA256 tag over `E ‖ C`.

use hmac::{Hmac, Mac};
use rand::{CryptoRng, RngCore};
use sha2::Sha256;

use super::group::{
    generator, point_from_bytes, point_to_bytes, random_nonzero_scalar, CurvePoint, ProjectivePoint, Scalar,
    POINT_LEN,
};
use super::hash::{hash, keystream_wrap, Digest, DIGEST_LEN};
use super::CryptoError;

pub const TAG_LEN: usize = 32;
pub const OVERHEAD: usize = POINT_LEN + TAG_LEN;

struct Keys {
    enc: Digest,
    mac: Digest,
}

fn derive(shared: &CurvePoint, ephemeral: &[u8]) -> Keys {
    let seed = hash(&[&b"hybrid-shared"[..], &point_to_bytes(shared), ephemeral]);
    Keys { enc: hash(&[seed.as_bytes(), &b"enc"[..]]), mac: hash(&[seed.as_bytes(), &b"mac"[..]]) }
}

fn tag(key: &Digest, ephemeral: &[u8], ciphertext: &[u8]) -> [u8; TAG_LEN] {
    let mut mac = Hmac::<Sha256>::new_from_slice(key.as_bytes()).expect("any key length");
    mac.update(ephemeral);
    mac.update(ciphertext);
    mac.finalize().into_bytes().into()
}

pub fn encrypt<R: RngCore + CryptoRng>(public: &CurvePoint, plaintext: &[u8], rng: &mut R) -> Vec<u8> {
    let e = random_nonzero_scalar(rng);
    let ephemeral = point_to_bytes(&(generator() * e).to_affine());
    let shared = (ProjectivePoint::from(*public) * e).to_affine();
    let keys = derive(&shared, &ephemeral);
    let body = keystream_wrap(keys.enc.as_bytes(), b"hybrid-enc", plaintext);
    let t = tag(&keys.mac, &ephemeral, &body);

    let mut out = Vec::with_capacity(OVERHEAD + plaintext.len());
    out.extend_from_slice(&ephemeral);
    out.extend_from_slice(&body);
    out.extend_from_slice(&t);
    out
}

pub fn decrypt(private: &Scalar, ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if ciphertext.len() < OVERHEAD {
        return Err(CryptoError::Malformed("hybrid ciphertext shorter than its header"));
    }
    let (ephemeral, rest) = ciphertext.split_at(POINT_LEN);
    let (body, received) = rest.split_at(rest.len() - TAG_LEN);
    let e_point = point_from_bytes(ephemeral).map_err(|_| CryptoError::Malformed("ephemeral point"))?;
    let shared = (ProjectivePoint::from(e_point) * private).to_affine();
    let keys = derive(&shared, ephemeral);

    let mut mac = Hmac::<Sha256>::new_from_slice(keys.mac.as_bytes()).expect("any key length");
    mac.update(ephemeral);
    mac.update(body);
    mac.verify_slice(received).map_err(|_| CryptoError::Authentication)?;
    Ok(keystream_wrap(keys.enc.as_bytes(), b"hybrid-enc", body))
}

const _: () = assert!(TAG_LEN == DIGEST_LEN);

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::KeyPair;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn roundtrip_and_randomized() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let kp = KeyPair::generate(&mut rng);
        let a = encrypt(kp.public(), b"session material", &mut rng);
        let b = encrypt(kp.public(), b"session material", &mut rng);
        assert_ne!(a, b);
        assert_eq!(decrypt(kp.private(), &a).unwrap(), b"session material");
        assert_eq!(decrypt(kp.private(), &b).unwrap(), b"session material");
    }

    #[test]
    fn wrong_key_fails_tag_check() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let kp = KeyPair::generate(&mut rng);
        let other = KeyPair::generate(&mut rng);
        let ct = encrypt(kp.public(), b"x", &mut rng);

        // recompute the tag the wrong key would expect and confirm it differs
        let e = point_from_bytes(&ct[..POINT_LEN]).unwrap();
        let keys = derive(&(ProjectivePoint::from(e) * other.private()).to_affine(), &ct[..POINT_LEN]);
        let expected = tag(&keys.mac, &ct[..POINT_LEN], &ct[POINT_LEN..ct.len() - TAG_LEN]);
        assert_ne!(&expected[..], &ct[ct.len() - TAG_LEN..]);

        assert_eq!(decrypt(other.private(), &ct), Err(CryptoError::Authentication));
    }

    #[test]
    fn truncated_is_a_decode_error() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let kp = KeyPair::generate(&mut rng);
        let ct = encrypt(kp.public(), b"", &mut rng);
        assert_eq!(ct.len(), OVERHEAD);
        assert!(matches!(decrypt(kp.private(), &ct[..OVERHEAD - 1]), Err(CryptoError::Malformed(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn any_single_byte_mutation_fails(seed in any::<u64>(), pt in proptest::collection::vec(any::<u8>(), 0..80),
                                          pos in any::<prop::sample::Index>(), mask in 1u8..=255) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let kp = KeyPair::generate(&mut rng);
            let mut ct = encrypt(kp.public(), &pt, &mut rng);
            prop_assert_eq!(decrypt(kp.private(), &ct).unwrap(), pt);
            let i = pos.index(ct.len());
            ct[i] ^= mask;
            prop_assert!(decrypt(kp.private(), &ct).is_err());
        }
    }
}
