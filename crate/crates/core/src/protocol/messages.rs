//! Wire messages. Encoding: a one-byte tag, then every field as a
//! length-prefixed byte string in declaration order. Lists carry a `u16`
//! count first. Decoding is strict: fixed-size fields must have their exact
//! length and no bytes may follow the last field.

use crate::codec::{DecodeError, Decoder, Encoder};
use crate::crypto::group::{point_from_bytes, point_to_bytes};
use crate::crypto::{CurvePoint, Digest};
use crate::identity::{CredentialBody, SignedCredential};
use crate::zkp::Proof;

use super::Secret32;

pub const TAG_REV1: u8 = 0x01;
pub const TAG_REV2: u8 = 0x02;
pub const TAG_A1: u8 = 0x11;
pub const TAG_A2: u8 = 0x12;
pub const TAG_A3: u8 = 0x13;
pub const TAG_A4: u8 = 0x14;
pub const TAG_A5: u8 = 0x15;
pub const TAG_A6: u8 = 0x16;

/// `M_REV1`, user to USP.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistrationRequest {
    pub request: String,
    pub did: String,
    pub pdid: Secret32,
    pub shadows: Vec<Secret32>,
    pub identity_vc: SignedCredential,
}

/// `M_REV2`, USP to user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistrationGrant {
    pub shared_key: Secret32,
    pub cred: CredentialBody,
    pub nonce: Secret32,
    pub vc: SignedCredential,
}

/// `M_A1`, user to CS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChargeRequest {
    pub pdid: Secret32,
    pub request: String,
    pub proof_request: String,
}

/// `M_A2`, CS to user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StationChallenge {
    pub did: String,
    pub vc: SignedCredential,
    pub proof_request: String,
}

/// `M_A3`, user to CS. Carries the signature point `R` alongside the proof
/// since the verifier's statement needs it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Presentation {
    pub hash_value: Digest,
    pub proof: Proof,
    pub sig_point: CurvePoint,
    pub user_nonce: Secret32,
    pub enc_location: Vec<u8>,
    pub v1: Digest,
}

/// `M_A4`, CS to USP.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StationForward {
    pub presentation: Presentation,
    pub pdid: Secret32,
    pub station: String,
    pub station_nonce: Secret32,
    pub station_location: Vec<u8>,
    pub v2: Digest,
}

/// `M_A5`, USP to CS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Authorization {
    pub user_ciphertext: Vec<u8>,
    pub station_masked_key: Secret32,
    pub v3: Digest,
}

/// `M_A6`, CS to user: the user's ciphertext from `M_A5`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub user_ciphertext: Vec<u8>,
}

/// Plaintext of the user ciphertext.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserPayload {
    pub masked_key: Secret32,
    pub v4: Digest,
    pub wrapped_nonce: Vec<u8>,
    pub wrapped_vc: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Rev1(RegistrationRequest),
    Rev2(RegistrationGrant),
    A1(ChargeRequest),
    A2(StationChallenge),
    A3(Presentation),
    A4(StationForward),
    A5(Authorization),
    A6(Delivery),
}

impl Message {
    pub fn tag(&self) -> u8 {
        match self {
            Self::Rev1(_) => TAG_REV1,
            Self::Rev2(_) => TAG_REV2,
            Self::A1(_) => TAG_A1,
            Self::A2(_) => TAG_A2,
            Self::A3(_) => TAG_A3,
            Self::A4(_) => TAG_A4,
            Self::A5(_) => TAG_A5,
            Self::A6(_) => TAG_A6,
        }
    }

    pub fn name(&self) -> &'static str {
        tag_name(self.tag()).expect("every variant has a name")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.u8(self.tag());
        match self {
            Self::Rev1(m) => {
                e.field(m.request.as_bytes()).field(m.did.as_bytes()).field(&m.pdid);
                e.u16(u16::try_from(m.shadows.len()).expect("shadow set fits u16"));
                for s in &m.shadows {
                    e.field(s);
                }
                e.field(&m.identity_vc.to_bytes());
            }
            Self::Rev2(m) => {
                e.field(&m.shared_key).field(&m.cred.canonical_bytes()).field(&m.nonce).field(&m.vc.to_bytes());
            }
            Self::A1(m) => {
                e.field(&m.pdid).field(m.request.as_bytes()).field(m.proof_request.as_bytes());
            }
            Self::A2(m) => {
                e.field(m.did.as_bytes()).field(&m.vc.to_bytes()).field(m.proof_request.as_bytes());
            }
            Self::A3(m) => encode_presentation(&mut e, m),
            Self::A4(m) => {
                let mut inner = Encoder::new();
                inner.u8(TAG_A3);
                encode_presentation(&mut inner, &m.presentation);
                e.field(inner.as_bytes())
                    .field(&m.pdid)
                    .field(m.station.as_bytes())
                    .field(&m.station_nonce)
                    .field(&m.station_location)
                    .field(m.v2.as_bytes());
            }
            Self::A5(m) => {
                e.field(&m.user_ciphertext).field(&m.station_masked_key).field(m.v3.as_bytes());
            }
            Self::A6(m) => {
                e.field(&m.user_ciphertext);
            }
        }
        e.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut d = Decoder::new(bytes);
        let msg = match d.u8("tag")? {
            TAG_REV1 => {
                let request = d.string("registration request")?;
                let did = d.string("DID")?;
                let pdid = d.fixed_field("PDID")?;
                let count = d.u16("shadow count")?;
                let shadows = (0..count).map(|_| d.fixed_field("shadow identity")).collect::<Result<_, _>>()?;
                let identity_vc = SignedCredential::from_bytes(d.field("identity credential")?)?;
                Self::Rev1(RegistrationRequest { request, did, pdid, shadows, identity_vc })
            }
            TAG_REV2 => Self::Rev2(RegistrationGrant {
                shared_key: d.fixed_field("shared key")?,
                cred: CredentialBody::from_canonical(d.field("cred")?)?,
                nonce: d.fixed_field("nonce")?,
                vc: SignedCredential::from_bytes(d.field("credential")?)?,
            }),
            TAG_A1 => Self::A1(ChargeRequest {
                pdid: d.fixed_field("PDID")?,
                request: d.string("charging request")?,
                proof_request: d.string("proof request")?,
            }),
            TAG_A2 => Self::A2(StationChallenge {
                did: d.string("station DID")?,
                vc: SignedCredential::from_bytes(d.field("station credential")?)?,
                proof_request: d.string("proof request")?,
            }),
            TAG_A3 => Self::A3(decode_presentation(&mut d)?),
            TAG_A4 => {
                let inner = d.field("presentation")?;
                let presentation = match Self::from_bytes(inner)? {
                    Self::A3(p) => p,
                    _ => return Err(DecodeError::Invalid("nested message is not a presentation")),
                };
                Self::A4(StationForward {
                    presentation,
                    pdid: d.fixed_field("PDID")?,
                    station: d.string("station DID")?,
                    station_nonce: d.fixed_field("station nonce")?,
                    station_location: d.field("station location")?.to_vec(),
                    v2: Digest(d.fixed_field("V2")?),
                })
            }
            TAG_A5 => Self::A5(Authorization {
                user_ciphertext: d.field("user ciphertext")?.to_vec(),
                station_masked_key: d.fixed_field("station key share")?,
                v3: Digest(d.fixed_field("V3")?),
            }),
            TAG_A6 => Self::A6(Delivery { user_ciphertext: d.field("user ciphertext")?.to_vec() }),
            other => return Err(DecodeError::UnknownTag(other)),
        };
        d.finish()?;
        Ok(msg)
    }
}

pub fn tag_name(tag: u8) -> Option<&'static str> {
    Some(match tag {
        TAG_REV1 => "M_REV1",
        TAG_REV2 => "M_REV2",
        TAG_A1 => "M_A1",
        TAG_A2 => "M_A2",
        TAG_A3 => "M_A3",
        TAG_A4 => "M_A4",
        TAG_A5 => "M_A5",
        TAG_A6 => "M_A6",
        _ => return None,
    })
}

fn encode_presentation(e: &mut Encoder, m: &Presentation) {
    e.field(m.hash_value.as_bytes())
        .field(&m.proof.to_bytes())
        .field(&point_to_bytes(&m.sig_point))
        .field(&m.user_nonce)
        .field(&m.enc_location)
        .field(m.v1.as_bytes());
}

fn decode_presentation(d: &mut Decoder<'_>) -> Result<Presentation, DecodeError> {
    Ok(Presentation {
        hash_value: Digest(d.fixed_field("hashValue")?),
        proof: Proof::from_bytes(d.field("proof")?)?,
        sig_point: point_from_bytes(d.field("signature point")?)?,
        user_nonce: d.fixed_field("user nonce")?,
        enc_location: d.field("encrypted location")?.to_vec(),
        v1: Digest(d.fixed_field("V1")?),
    })
}

impl Presentation {
    /// Standalone encoding (with tag), as nested in `M_A4` and bound by V2.
    pub fn to_bytes(&self) -> Vec<u8> {
        Message::A3(self.clone()).to_bytes()
    }
}

impl UserPayload {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.field(&self.masked_key).field(self.v4.as_bytes()).field(&self.wrapped_nonce).field(&self.wrapped_vc);
        e.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut d = Decoder::new(bytes);
        let p = Self {
            masked_key: d.fixed_field("user key share")?,
            v4: Digest(d.fixed_field("V4")?),
            wrapped_nonce: d.field("wrapped nonce")?.to_vec(),
            wrapped_vc: d.field("wrapped credential")?.to_vec(),
        };
        d.finish()?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::group::generator;
    use crate::crypto::KeyPair;
    use crate::identity::{issue_vc, Did};
    use crate::crypto::Scalar;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn sample_vc() -> SignedCredential {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let kp = KeyPair::generate(&mut rng);
        let body = CredentialBody::new(&Did::new("ev", "usp").unwrap(), "did:ev:x", 1).with_attribute("k", "v");
        issue_vc(&kp, body, *kp.public(), [3; 32])
    }

    fn samples() -> Vec<Message> {
        let vc = sample_vc();
        let g = generator().to_affine();
        let pres = Presentation {
            hash_value: Digest([1; 32]),
            proof: Proof::new(g, Scalar::from(5u64)),
            sig_point: g,
            user_nonce: [2; 32],
            enc_location: b"region-7".to_vec(),
            v1: Digest([3; 32]),
        };
        vec![
            Message::Rev1(RegistrationRequest {
                request: "r".into(),
                did: "did:ev:u".into(),
                pdid: [4; 32],
                shadows: vec![[5; 32], [6; 32]],
                identity_vc: vc.clone(),
            }),
            Message::Rev2(RegistrationGrant { shared_key: [7; 32], cred: vc.body.clone(), nonce: vc.nonce, vc: vc.clone() }),
            Message::A1(ChargeRequest { pdid: [8; 32], request: "c".into(), proof_request: "p".into() }),
            Message::A2(StationChallenge { did: "did:ev:cs".into(), vc, proof_request: "p".into() }),
            Message::A3(pres.clone()),
            Message::A4(StationForward {
                presentation: pres,
                pdid: [9; 32],
                station: "did:ev:cs".into(),
                station_nonce: [10; 32],
                station_location: b"region-7".to_vec(),
                v2: Digest([11; 32]),
            }),
            Message::A5(Authorization { user_ciphertext: vec![1, 2, 3], station_masked_key: [12; 32], v3: Digest([13; 32]) }),
            Message::A6(Delivery { user_ciphertext: vec![1, 2, 3] }),
        ]
    }

    #[test]
    fn roundtrip_every_variant() {
        for m in samples() {
            let bytes = m.to_bytes();
            assert_eq!(bytes[0], m.tag());
            assert_eq!(Message::from_bytes(&bytes).unwrap(), m, "{}", m.name());
        }
    }

    #[test]
    fn golden_a1_and_a6() {
        let a1 = Message::A1(ChargeRequest { pdid: [0xab; 32], request: "c".into(), proof_request: "p".into() });
        let expected = format!("11{}{}{}{}{}", "00000020", "ab".repeat(32), "0000000163", "00000001", "70");
        assert_eq!(hex::encode(a1.to_bytes()), expected);
        let a6 = Message::A6(Delivery { user_ciphertext: vec![0xde, 0xad] });
        assert_eq!(hex::encode(a6.to_bytes()), "1600000002dead");
    }

    #[test]
    fn strict_decoding() {
        for m in samples() {
            let bytes = m.to_bytes();
            let mut long = bytes.clone();
            long.push(0);
            assert!(matches!(Message::from_bytes(&long), Err(DecodeError::Trailing(1))));
            for cut in 0..bytes.len() {
                assert!(Message::from_bytes(&bytes[..cut]).is_err(), "{} truncated at {cut}", m.name());
            }
        }
        assert_eq!(Message::from_bytes(&[0x7f]), Err(DecodeError::UnknownTag(0x7f)));
        // A4 whose nested message is not an A3
        let mut e = Encoder::new();
        e.u8(TAG_A4).field(&Message::A6(Delivery { user_ciphertext: vec![] }).to_bytes());
        assert!(Message::from_bytes(&e.finish()).is_err());
    }

    #[test]
    fn digest_fields_have_hash_length() {
        let mut e = Encoder::new();
        e.u8(TAG_A5).field(&[1]).field(&[0; 32]).field(&[0; 31]);
        assert!(Message::from_bytes(&e.finish()).is_err());
    }
}
