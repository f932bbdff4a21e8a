//! Charging station: registration result, persistent state, session machine.

use std::path::Path;

use rand::{CryptoRng, RngCore};

use crate::codec::{DecodeError, Decoder, Encoder};
use crate::crypto::group::{point_from_bytes, point_to_bytes, scalar_from_bytes, scalar_to_bytes};
use crate::crypto::KeyPair;
use crate::identity::{create_did, verify_vc, Did, DidDocument, Registry, SignedCredential, DID_METHOD};
use crate::zkp::Statement;

use super::messages::{Delivery, Message, StationChallenge, StationForward};
use super::meter::Meter;
use super::usp::Usp;
use super::{random32, store, xor32, ProtocolError, Secret32, Step, CHARGING_REQUEST, PROOF_REQUEST};

const CS_MAGIC: &[u8; 4] = b"EVCS";

/// Long-lived station state. `K_CS` never leaves it after registration.
#[derive(Clone)]
pub struct CsState {
    did: Did,
    keys: KeyPair,
    vc: SignedCredential,
    shared_key: Secret32,
    location: Vec<u8>,
    usp: DidDocument,
}

impl std::fmt::Debug for CsState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CsState").field("did", &self.did).finish_non_exhaustive()
    }
}

impl CsState {
    /// Creates the station's DID and registers it with the USP over the
    /// assumed secure channel.
    pub fn register<R: RngCore + CryptoRng>(
        usp: &Usp,
        location: &[u8],
        registry: &mut Registry,
        rng: &mut R,
    ) -> Result<Self, ProtocolError> {
        let keys = KeyPair::generate(rng);
        let did = create_did(DID_METHOD, keys.public(), registry, rng)?;
        let (vc, shared_key) = usp.register_station(&did, registry, rng)?;
        let usp_doc = registry.resolve(usp.did())?.clone();
        if vc.body.subject != did.to_string() || !verify_vc(&vc, &usp_doc) {
            return Err(ProtocolError::RegistrationRejected("station credential"));
        }
        Ok(Self { did, keys, vc, shared_key, location: location.to_vec(), usp: usp_doc })
    }

    /// Assembles a station from parts; adversarial scenarios use this to run
    /// a station that reuses public material without the real `K_CS`.
    pub fn from_parts(did: Did, keys: KeyPair, vc: SignedCredential, shared_key: Secret32, location: Vec<u8>, usp: DidDocument) -> Self {
        Self { did, keys, vc, shared_key, location, usp }
    }

    pub fn did(&self) -> &Did {
        &self.did
    }

    pub fn credential(&self) -> &SignedCredential {
        &self.vc
    }

    pub fn location(&self) -> &[u8] {
        &self.location
    }

    pub fn usp(&self) -> &DidDocument {
        &self.usp
    }

    pub fn set_location(&mut self, location: &[u8]) {
        self.location = location.to_vec();
    }

    pub fn keys(&self) -> &KeyPair {
        &self.keys
    }

    /// Answers `M_A1` with `M_A2` and opens a session.
    pub fn respond(&self, msg: Message) -> Result<(CsSession, Message), ProtocolError> {
        let Message::A1(req) = msg else {
            return Err(ProtocolError::ProtocolOrder("station expected M_A1"));
        };
        if req.request != CHARGING_REQUEST {
            return Err(DecodeError::Invalid("charging request").into());
        }
        if req.proof_request != PROOF_REQUEST {
            return Err(DecodeError::Invalid("proof request").into());
        }
        let session = CsSession { state: CsStateTag::AwaitPresentation, pdid: req.pdid, station_nonce: [0; 32] };
        let reply = Message::A2(StationChallenge {
            did: self.did.to_string(),
            vc: self.vc.clone(),
            proof_request: PROOF_REQUEST.to_owned(),
        });
        Ok((session, reply))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.field(self.did.to_string().as_bytes())
            .field(&scalar_to_bytes(self.keys.private()))
            .field(&self.vc.to_bytes())
            .field(&self.shared_key)
            .field(&self.location)
            .field(self.usp.id.to_string().as_bytes())
            .field(&point_to_bytes(&self.usp.public_key));
        e.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let mut d = Decoder::new(bytes);
        let did = Did::parse(&d.string("DID")?)?;
        let keys = KeyPair::from_private(scalar_from_bytes(d.field("private key")?)?)
            .ok_or(ProtocolError::CorruptState("zero private key"))?;
        let vc = SignedCredential::from_bytes(d.field("credential")?)?;
        let shared_key = d.fixed_field("shared key")?;
        let location = d.field("location")?.to_vec();
        let usp_did = Did::parse(&d.string("USP DID")?)?;
        let usp = DidDocument::new(usp_did, point_from_bytes(d.field("USP key")?)?);
        d.finish()?;
        Ok(Self { did, keys, vc, shared_key, location, usp })
    }

    pub fn save(&self, path: &Path) -> Result<(), ProtocolError> {
        store::save(path, CS_MAGIC, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, ProtocolError> {
        Self::from_bytes(&store::load(path, CS_MAGIC)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CsStateTag {
    AwaitPresentation,
    AwaitAuthorization,
    Done,
}

/// One relayed authentication at the station.
#[derive(Debug)]
pub struct CsSession {
    state: CsStateTag,
    pdid: Secret32,
    station_nonce: Secret32,
}

impl CsSession {
    pub fn handle<R: RngCore + CryptoRng>(
        &mut self,
        cs: &CsState,
        msg: Message,
        rng: &mut R,
        meter: &mut Meter,
    ) -> Result<Step, ProtocolError> {
        match (self.state, msg) {
            (CsStateTag::AwaitPresentation, Message::A3(p)) => {
                let st = Statement::new(cs.usp.public_key, p.hash_value, p.sig_point).map_err(|_| ProtocolError::UserAuth)?;
                if !meter.verify_possession("verify pi", &st, &p.proof) {
                    log::warn!("station {}: possession proof rejected", cs.did);
                    return Err(ProtocolError::UserAuth);
                }
                self.station_nonce = random32(rng);
                let did = cs.did.to_string();
                let v2 = meter.hash(
                    "V2",
                    &[did.as_bytes(), &self.station_nonce, &cs.shared_key, &cs.location, &p.to_bytes()],
                );
                self.state = CsStateTag::AwaitAuthorization;
                Ok(Step::Send(Message::A4(StationForward {
                    presentation: p,
                    pdid: self.pdid,
                    station: did,
                    station_nonce: self.station_nonce,
                    station_location: cs.location.clone(),
                    v2,
                })))
            }
            (CsStateTag::AwaitAuthorization, Message::A5(a)) => {
                let v3 = meter.hash("V3", &[&a.station_masked_key, &self.station_nonce, &cs.shared_key]);
                if v3 != a.v3 {
                    log::warn!("station {}: V3 mismatch", cs.did);
                    return Err(ProtocolError::Integrity("V3"));
                }
                let did = cs.did.to_string();
                let mask = meter.hash("h(DID_CS||N_CS||K_CS)", &[did.as_bytes(), &self.station_nonce, &cs.shared_key]);
                let session_key = xor32(mask.as_bytes(), &a.station_masked_key);
                self.state = CsStateTag::Done;
                Ok(Step::Finished {
                    send: Some(Message::A6(Delivery { user_ciphertext: a.user_ciphertext })),
                    session_key,
                })
            }
            (CsStateTag::Done, _) => Err(ProtocolError::ProtocolOrder("session already finished")),
            (CsStateTag::AwaitPresentation, _) => Err(ProtocolError::ProtocolOrder("station expected M_A3")),
            (CsStateTag::AwaitAuthorization, _) => Err(ProtocolError::ProtocolOrder("station expected M_A5")),
        }
    }
}
