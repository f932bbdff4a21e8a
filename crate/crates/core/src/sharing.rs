//! Shamir `(k, n)` threshold sharing over the scalar field of the curve, so a
//! private key can be split and reconstructed without leaving its type.
//!
//! Shares at rest are individually sealed under a key derived from a
//! recovery passphrase, the custodian label and a per-file salt; see
//! [`seal_share`] for the file layout.

use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::codec::{DecodeError, Decoder, Encoder};
use crate::crypto::group::{random_scalar, scalar_from_bytes, scalar_to_bytes};
use crate::crypto::{hash, keystream_wrap, Digest, Scalar};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SharingError {
    #[error("invalid share parameters: need 1 <= k <= n (k = {k}, n = {n})")]
    InvalidParams { k: u16, n: u16 },
    #[error("{got} shares supplied, threshold is {needed}")]
    Threshold { needed: u16, got: usize },
    #[error("share index {0} appears more than once")]
    DuplicateIndex(u16),
    #[error("invalid input: {0}")]
    Input(&'static str),
    #[error("share file could not be opened with this passphrase")]
    Decrypt,
    #[error("malformed share file: {0}")]
    Format(#[from] DecodeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShareParams {
    k: u16,
    n: u16,
}

impl ShareParams {
    pub fn new(k: u16, n: u16) -> Result<Self, SharingError> {
        if k == 0 || k > n {
            return Err(SharingError::InvalidParams { k, n });
        }
        Ok(Self { k, n })
    }

    pub fn threshold(&self) -> u16 {
        self.k
    }

    pub fn count(&self) -> u16 {
        self.n
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct Share {
    pub index: u16,
    pub value: Scalar,
    pub label: String,
}

impl std::fmt::Debug for Share {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Share").field("index", &self.index).field("label", &self.label).finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub struct ShareSet {
    pub params: ShareParams,
    pub shares: Vec<Share>,
}

fn eval(coefficients: &[Scalar], x: u16) -> Scalar {
    let x = Scalar::from(u64::from(x));
    coefficients.iter().rev().fold(Scalar::ZERO, |acc, c| acc * x + c)
}

/// Splits `secret` with fresh uniform coefficients `a₁…a_{k−1}`.
pub fn split<R: RngCore + CryptoRng>(secret: &Scalar, params: ShareParams, rng: &mut R) -> ShareSet {
    let coefficients: Vec<Scalar> = (1..params.k).map(|_| random_scalar(rng)).collect();
    split_with_coefficients(secret, params, &coefficients).expect("k - 1 coefficients")
}

/// Deterministic variant taking `a₁…a_{k−1}` explicitly (test vectors).
pub fn split_with_coefficients(
    secret: &Scalar,
    params: ShareParams,
    coefficients: &[Scalar],
) -> Result<ShareSet, SharingError> {
    if coefficients.len() != usize::from(params.k) - 1 {
        return Err(SharingError::Input("expected k - 1 coefficients"));
    }
    let mut poly = Vec::with_capacity(usize::from(params.k));
    poly.push(*secret);
    poly.extend_from_slice(coefficients);
    let shares = (1..=params.n)
        .map(|i| Share { index: i, value: eval(&poly, i), label: format!("custodian-{i}") })
        .collect();
    Ok(ShareSet { params, shares })
}

fn check_indices(shares: &[Share], params: ShareParams) -> Result<(), SharingError> {
    let mut seen = std::collections::BTreeSet::new();
    for s in shares {
        if s.index == 0 || s.index > params.n {
            return Err(SharingError::Input("share index outside 1..=n"));
        }
        if !seen.insert(s.index) {
            return Err(SharingError::DuplicateIndex(s.index));
        }
    }
    Ok(())
}

/// Lagrange interpolation at `x` through `points`.
fn interpolate(points: &[(Scalar, Scalar)], x: Scalar) -> Scalar {
    let mut acc = Scalar::ZERO;
    for (j, (xj, yj)) in points.iter().enumerate() {
        let mut num = Scalar::ONE;
        let mut den = Scalar::ONE;
        for (m, (xm, _)) in points.iter().enumerate() {
            if m != j {
                num *= x - xm;
                den *= *xj - xm;
            }
        }
        acc += *yj * num * den.invert().expect("distinct abscissae");
    }
    acc
}

/// Recovers `f(0)` from at least `k` shares with distinct indices. Only the
/// first `k` shares take part.
pub fn reconstruct(shares: &[Share], params: ShareParams) -> Result<Scalar, SharingError> {
    check_indices(shares, params)?;
    if shares.len() < usize::from(params.k) {
        return Err(SharingError::Threshold { needed: params.k, got: shares.len() });
    }
    let points: Vec<_> = shares[..usize::from(params.k)]
        .iter()
        .map(|s| (Scalar::from(u64::from(s.index)), s.value))
        .collect();
    Ok(interpolate(&points, Scalar::ZERO))
}

/// Given `k − 1` shares and any candidate secret, returns a `k`-th share
/// (at the lowest free index) that makes the set reconstruct to the
/// candidate. Existence for every candidate is why `k − 1` shares reveal
/// nothing.
pub fn complete(shares: &[Share], candidate: &Scalar, params: ShareParams) -> Result<Share, SharingError> {
    let index = (1..=params.n)
        .find(|i| shares.iter().all(|s| s.index != *i))
        .ok_or(SharingError::Input("no free share index"))?;
    complete_at(shares, candidate, index, params)
}

pub fn complete_at(shares: &[Share], candidate: &Scalar, index: u16, params: ShareParams) -> Result<Share, SharingError> {
    if shares.len() != usize::from(params.k) - 1 {
        return Err(SharingError::Input("complete needs exactly k - 1 shares"));
    }
    check_indices(shares, params)?;
    if index == 0 || index > params.n {
        return Err(SharingError::Input("share index outside 1..=n"));
    }
    if shares.iter().any(|s| s.index == index) {
        return Err(SharingError::Input("completion index collides with a given share"));
    }
    let mut points = vec![(Scalar::ZERO, *candidate)];
    points.extend(shares.iter().map(|s| (Scalar::from(u64::from(s.index)), s.value)));
    let value = interpolate(&points, Scalar::from(u64::from(index)));
    Ok(Share { index, value, label: format!("custodian-{index}") })
}

const SHARE_MAGIC: &[u8; 4] = b"EVSH";
const SHARE_VERSION: u8 = 1;
const SALT_LEN: usize = 16;

fn share_key(passphrase: &[u8], label: &str, salt: &[u8]) -> Digest {
    hash(&[&b"custodian-key"[..], passphrase, label.as_bytes(), salt])
}

/// Seals one share for its custodian.
///
/// ```text
/// "EVSH" | version u8 | index u16 | k u16 | n u16 | salt [16]
///        | label (u32 len ‖ utf-8) | ciphertext [32] | tag [32]
/// ```
///
/// `ciphertext = keystream_wrap(K, "share-value", value)` and
/// `tag = h("share-tag", K, header ‖ ciphertext)` with
/// `K = h("custodian-key", passphrase, label, salt)`.
pub fn seal_share<R: RngCore + CryptoRng>(share: &Share, params: ShareParams, passphrase: &[u8], rng: &mut R) -> Vec<u8> {
    let mut salt = [0u8; SALT_LEN];
    rng.fill_bytes(&mut salt);
    let key = share_key(passphrase, &share.label, &salt);
    let mut enc = Encoder::new();
    enc.raw(SHARE_MAGIC)
        .u8(SHARE_VERSION)
        .u16(share.index)
        .u16(params.k)
        .u16(params.n)
        .raw(&salt)
        .field(share.label.as_bytes());
    let ciphertext = keystream_wrap(key.as_bytes(), b"share-value", &scalar_to_bytes(&share.value));
    let tag = hash(&[&b"share-tag"[..], key.as_bytes(), enc.as_bytes(), &ciphertext]);
    enc.raw(&ciphertext).raw(tag.as_bytes());
    enc.finish()
}

/// Opens a sealed share, returning it with the parameters it was made for.
pub fn open_share(bytes: &[u8], passphrase: &[u8]) -> Result<(Share, ShareParams), SharingError> {
    let mut dec = Decoder::new(bytes);
    if &dec.raw::<4>("magic")? != SHARE_MAGIC {
        return Err(DecodeError::Invalid("share file magic").into());
    }
    if dec.u8("version")? != SHARE_VERSION {
        return Err(DecodeError::Invalid("share file version").into());
    }
    let index = dec.u16("index")?;
    let params = ShareParams::new(dec.u16("k")?, dec.u16("n")?)?;
    let salt = dec.raw::<SALT_LEN>("salt")?;
    let label = dec.string("label")?;
    let header_len = bytes.len() - dec.remaining();
    let ciphertext = dec.raw::<32>("ciphertext")?;
    let tag = dec.raw::<32>("tag")?;
    dec.finish()?;

    let key = share_key(passphrase, &label, &salt);
    let expected = hash(&[&b"share-tag"[..], key.as_bytes(), &bytes[..header_len], &ciphertext]);
    if expected.0 != tag {
        return Err(SharingError::Decrypt);
    }
    let value = scalar_from_bytes(&keystream_wrap(key.as_bytes(), b"share-value", &ciphertext))?;
    Ok((Share { index, value, label }, params))
}
