//! Threshold backup of the user's long-term private key.

use rand::{CryptoRng, RngCore};

use crate::crypto::{CurvePoint, Scalar};
use crate::sharing::{open_share, reconstruct, seal_share, split, Share, ShareParams, SharingError};

use super::user::{public_of, Wallet};
use super::ProtocolError;

/// A custodian's label and the passphrase their share file is sealed under.
#[derive(Debug, Clone)]
pub struct Custodian {
    pub label: String,
    pub passphrase: Vec<u8>,
}

/// Splits the wallet's private key and seals one share per custodian.
/// Returns the share files in custodian order.
pub fn key_backup<R: RngCore + CryptoRng>(
    wallet: &Wallet,
    params: ShareParams,
    custodians: &[Custodian],
    rng: &mut R,
) -> Result<Vec<Vec<u8>>, ProtocolError> {
    if custodians.len() != usize::from(params.count()) {
        return Err(SharingError::Input("one custodian per share required").into());
    }
    let secret = wallet.private_key()?;
    let set = split(secret, params, rng);
    Ok(set
        .shares
        .into_iter()
        .zip(custodians)
        .map(|(mut share, c)| {
            share.label = c.label.clone();
            seal_share(&share, params, &c.passphrase, rng)
        })
        .collect())
}

/// Opens share files and reconstructs the key, accepting it only if it
/// matches `registered`.
pub fn key_recover(files: &[(&[u8], &[u8])], registered: &CurvePoint) -> Result<Scalar, ProtocolError> {
    let mut shares = Vec::with_capacity(files.len());
    let mut params: Option<ShareParams> = None;
    for (bytes, passphrase) in files {
        let (share, p) = open_share(bytes, passphrase)?;
        match params {
            None => params = Some(p),
            Some(q) if q != p => return Err(ProtocolError::CorruptShare),
            Some(_) => {}
        }
        shares.push(share);
    }
    let params = params.ok_or(SharingError::Threshold { needed: 1, got: 0 })?;
    recover_from_shares(&shares, params, registered)
}

pub fn recover_from_shares(shares: &[Share], params: ShareParams, registered: &CurvePoint) -> Result<Scalar, ProtocolError> {
    let secret = reconstruct(shares, params)?;
    if secret == Scalar::ZERO || public_of(&secret) != *registered {
        log::warn!("key recovery: reconstructed key does not match the registry");
        return Err(ProtocolError::CorruptShare);
    }
    Ok(secret)
}
