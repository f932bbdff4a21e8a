//! The protocol hash `h(·)` and the keystream used to realise XOR masking of
//! values longer than one digest.

use std::fmt;

use sha2::{Digest as _, Sha256};

use crate::codec::DecodeError;

pub const DIGEST_LEN: usize = 32;

/// Output of [`hash`].
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, DecodeError> {
        bytes.try_into().map(Digest).map_err(|_| DecodeError::Invalid("digest length"))
    }

    pub fn xor(&self, other: &[u8; DIGEST_LEN]) -> [u8; DIGEST_LEN] {
        let mut out = self.0;
        out.iter_mut().zip(other).for_each(|(a, b)| *a ^= b);
        out
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl AsRef<[u8]> for Digest {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

/// SHA-256 over the length-prefixed concatenation of `parts`: each part is
/// preceded by its length as a 4-byte big-endian integer.
pub fn hash<P: AsRef<[u8]>>(parts: &[P]) -> Digest {
    let mut h = Sha256::new();
    for part in parts {
        let part = part.as_ref();
        h.update((part.len() as u32).to_be_bytes());
        h.update(part);
    }
    Digest(h.finalize().into())
}

/// Plain SHA-256 of a byte string, used where an external convention fixes
/// the digest (ECDSA message hashing).
pub fn sha256(data: &[u8]) -> [u8; DIGEST_LEN] {
    Sha256::digest(data).into()
}

/// `data ⊕ KS` with `KS = h(key, label, 0) ‖ h(key, label, 1) ‖ …`
/// truncated to `data.len()`. Applying it twice with the same key and label
/// is the identity.
pub fn keystream_wrap(key: &[u8], label: &[u8], data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len());
    for (counter, chunk) in data.chunks(DIGEST_LEN).enumerate() {
        let block = hash(&[key, label, &(counter as u32).to_be_bytes()]);
        out.extend(chunk.iter().zip(block.0.iter()).map(|(d, k)| d ^ k));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hash_is_deterministic() {
        assert_eq!(hash(&[b"x"]), hash(&[b"x"]));
    }

    #[test]
    fn length_prefix_separates_parts() {
        assert_ne!(hash(&[&b"ab"[..], b"c"]), hash(&[&b"a"[..], b"bc"]));
        assert_ne!(hash(&[&b"abc"[..]]), hash(&[&b"abc"[..], b""]));
    }

    #[test]
    fn hash_layout_matches_manual_sha256() {
        let mut buf = Vec::new();
        buf.extend_from_slice(&2u32.to_be_bytes());
        buf.extend_from_slice(b"ab");
        buf.extend_from_slice(&1u32.to_be_bytes());
        buf.extend_from_slice(b"c");
        assert_eq!(hash(&[&b"ab"[..], b"c"]).0, sha256(&buf));
    }

    #[test]
    fn keystream_of_zeros_is_the_keystream() {
        let ks = keystream_wrap(b"k", b"l", &[0u8; 70]);
        let mut expected = Vec::new();
        for i in 0u32..3 {
            expected.extend_from_slice(&hash(&[&b"k"[..], b"l", &i.to_be_bytes()]).0);
        }
        expected.truncate(70);
        assert_eq!(ks, expected);
    }

    #[test]
    fn labels_give_distinct_streams() {
        let data = [0x5au8; 40];
        let a = keystream_wrap(b"k", b"n-new", &data);
        let b = keystream_wrap(b"k", b"vc-new", &data);
        assert_ne!(a, b);
        let direct = hash(&[&b"k"[..], b"vc-new", &0u32.to_be_bytes()]);
        assert_eq!(b[0], 0x5a ^ direct.0[0]);
    }

    proptest! {
        #[test]
        fn keystream_is_an_involution(key in proptest::collection::vec(any::<u8>(), 0..40),
                                      data in proptest::collection::vec(any::<u8>(), 0..200)) {
            let once = keystream_wrap(&key, b"label", &data);
            prop_assert_eq!(keystream_wrap(&key, b"label", &once), data);
        }

        #[test]
        fn part_lists_do_not_collide(a in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..6), 0..4),
                                     b in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..6), 0..4)) {
            prop_assume!(a != b);
            prop_assert_ne!(hash(&a), hash(&b));
        }
    }
}
