//! User device: enrollment, the wallet, and the per-session state machine.

use std::path::Path;

use rand::{CryptoRng, RngCore};

use crate::codec::{DecodeError, Decoder, Encoder};
use crate::crypto::group::{generator, point_from_bytes, point_to_bytes, scalar_from_bytes, scalar_to_bytes};
use crate::crypto::{hash, keystream_wrap, CurvePoint, Digest, KeyPair, Scalar};
use crate::identity::{verify_vc, Did, DidDocument, Registry, SignedCredential};

use super::messages::{ChargeRequest, Message, Presentation, RegistrationRequest, UserPayload};
use super::meter::Meter;
use super::{random32, store, xor32, GovIssuer, ProtocolError, Secret32, Step, ATTR_STATION, CHARGING_REQUEST, PROOF_REQUEST, REGISTRATION_REQUEST};

const WALLET_MAGIC: &[u8; 4] = b"EVWL";

/// Keystream key for wrapping `K_user`. Built from the raw biometric and
/// password, so the stored verifier `δ` cannot unwrap it.
fn wrapping_key(biometric: &[u8], password: &[u8]) -> Vec<u8> {
    let mut e = Encoder::new();
    e.field(biometric).field(password);
    e.finish()
}

fn secret32(bytes: Vec<u8>, what: &'static str) -> Result<Secret32, DecodeError> {
    bytes.try_into().map_err(|_| DecodeError::Invalid(what))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShadowIdentity {
    pub id: Secret32,
    pub used: bool,
}

/// A user between sending `M_REV1` and receiving `M_REV2`.
pub struct Enrollment {
    did: Did,
    keys: KeyPair,
    pdid: Secret32,
    shadows: Vec<Secret32>,
}

impl Enrollment {
    /// Draws the first PDID and `shadow_count` shadow identities and builds
    /// the registration request.
    pub fn start<R: RngCore + CryptoRng>(
        did: Did,
        keys: KeyPair,
        identity_vc: SignedCredential,
        registry: &Registry,
        shadow_count: usize,
        rng: &mut R,
    ) -> Result<(Self, Message), ProtocolError> {
        let gov = GovIssuer::builtin();
        let gov_doc = registry.resolve(gov.did()).map_err(|_| ProtocolError::Precondition("digital-identity issuer unknown"))?;
        if identity_vc.body.issuer != gov.did().to_string()
            || identity_vc.body.subject != did.to_string()
            || identity_vc.subject_key != *keys.public()
            || !verify_vc(&identity_vc, gov_doc)
        {
            return Err(ProtocolError::Precondition("digital-identity credential invalid"));
        }
        let pdid = random32(rng);
        let mut shadows: Vec<Secret32> = Vec::with_capacity(shadow_count);
        while shadows.len() < shadow_count {
            let s = random32(rng);
            if s != pdid && !shadows.contains(&s) {
                shadows.push(s);
            }
        }
        let msg = Message::Rev1(RegistrationRequest {
            request: REGISTRATION_REQUEST.to_owned(),
            did: did.to_string(),
            pdid,
            shadows: shadows.clone(),
            identity_vc,
        });
        Ok((Self { did, keys, pdid, shadows }, msg))
    }

    pub fn pdid(&self) -> &Secret32 {
        &self.pdid
    }

    pub fn shadows(&self) -> &[Secret32] {
        &self.shadows
    }

    /// Consumes `M_REV2` and produces the wallet.
    pub fn complete(self, msg: Message, biometric: &[u8], password: &[u8], registry: &Registry) -> Result<Wallet, ProtocolError> {
        let Message::Rev2(grant) = msg else {
            return Err(ProtocolError::ProtocolOrder("expected M_REV2"));
        };
        if grant.cred != grant.vc.body || grant.nonce != grant.vc.nonce || grant.vc.subject_key != *self.keys.public() {
            return Err(ProtocolError::RegistrationRejected("grant fields disagree with its credential"));
        }
        let usp_did = Did::parse(&grant.vc.body.issuer).map_err(|_| ProtocolError::RegistrationRejected("issuer DID"))?;
        let usp = registry.resolve(&usp_did).map_err(|_| ProtocolError::RegistrationRejected("issuer not registered"))?.clone();
        if !verify_vc(&grant.vc, &usp) {
            return Err(ProtocolError::RegistrationRejected("credential signature"));
        }
        let delta = hash(&[biometric, password]);
        let wrapped_key = keystream_wrap(&wrapping_key(biometric, password), b"k-user", &grant.shared_key);
        Ok(Wallet {
            did: self.did,
            public: *self.keys.public(),
            keys: Some(self.keys),
            delta,
            wrapped_key,
            pdid: self.pdid,
            shadows: self.shadows.into_iter().map(|id| ShadowIdentity { id, used: false }).collect(),
            vc: grant.vc,
            usp,
            resync_pending: false,
            session_public: None,
        })
    }
}

/// Device-resident user state.
#[derive(Clone)]
pub struct Wallet {
    did: Did,
    keys: Option<KeyPair>,
    public: CurvePoint,
    delta: Digest,
    wrapped_key: Vec<u8>,
    pdid: Secret32,
    shadows: Vec<ShadowIdentity>,
    vc: SignedCredential,
    usp: DidDocument,
    /// Set once `M_A3` leaves the device; cleared when the session completes.
    /// While set, the USP may have rotated without us, so the next session
    /// runs under a shadow identity.
    resync_pending: bool,
    session_public: Option<CurvePoint>,
}

impl std::fmt::Debug for Wallet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Wallet").field("did", &self.did).field("resync_pending", &self.resync_pending).finish_non_exhaustive()
    }
}

impl Wallet {
    pub fn did(&self) -> &Did {
        &self.did
    }

    pub fn public_key(&self) -> &CurvePoint {
        &self.public
    }

    pub fn pdid(&self) -> &Secret32 {
        &self.pdid
    }

    pub fn shadows(&self) -> &[ShadowIdentity] {
        &self.shadows
    }

    pub fn unused_shadows(&self) -> usize {
        self.shadows.iter().filter(|s| !s.used).count()
    }

    pub fn credential(&self) -> &SignedCredential {
        &self.vc
    }

    pub fn usp(&self) -> &DidDocument {
        &self.usp
    }

    pub fn resync_pending(&self) -> bool {
        self.resync_pending
    }

    pub fn session_public(&self) -> Option<&CurvePoint> {
        self.session_public.as_ref()
    }

    pub fn has_private_key(&self) -> bool {
        self.keys.is_some()
    }

    pub(crate) fn private_key(&self) -> Result<&Scalar, ProtocolError> {
        self.keys.as_ref().map(KeyPair::private).ok_or(ProtocolError::KeyMissing)
    }

    pub fn delete_private_key(&mut self) {
        self.keys = None;
    }

    /// Reinstalls a recovered private key; it must match the wallet's public key.
    pub fn restore_private_key(&mut self, private: Scalar) -> Result<(), ProtocolError> {
        match KeyPair::from_private(private) {
            Some(kp) if *kp.public() == self.public => {
                self.keys = Some(kp);
                Ok(())
            }
            _ => Err(ProtocolError::CorruptShare),
        }
    }

    /// `K*` unwrapped under `(β, psw)`; garbage for the wrong inputs.
    pub fn unwrap_shared_key(&self, biometric: &[u8], password: &[u8]) -> Secret32 {
        let k = keystream_wrap(&wrapping_key(biometric, password), b"k-user", &self.wrapped_key);
        k.try_into().expect("wrapped key is 32 bytes")
    }

    /// Local biometric gate and `M_A1`. On mismatch nothing is emitted.
    pub fn begin_auth<R: RngCore + CryptoRng>(
        &mut self,
        biometric: &[u8],
        password: &[u8],
        location: &[u8],
        rng: &mut R,
        meter: &mut Meter,
    ) -> Result<(UserSession, Message), ProtocolError> {
        let shadow = self.resync_pending;
        self.start_session(biometric, password, location, shadow, rng, meter)
    }

    /// Starts a session under an unused shadow identity regardless of the
    /// resync flag.
    pub fn desync_recover<R: RngCore + CryptoRng>(
        &mut self,
        biometric: &[u8],
        password: &[u8],
        location: &[u8],
        rng: &mut R,
        meter: &mut Meter,
    ) -> Result<(UserSession, Message), ProtocolError> {
        self.start_session(biometric, password, location, true, rng, meter)
    }

    fn start_session<R: RngCore + CryptoRng>(
        &mut self,
        biometric: &[u8],
        password: &[u8],
        location: &[u8],
        shadow: bool,
        rng: &mut R,
        meter: &mut Meter,
    ) -> Result<(UserSession, Message), ProtocolError> {
        if meter.hash("delta' = h(beta||psw)", &[biometric, password]) != self.delta {
            log::warn!("user {}: biometric gate rejected", self.did);
            return Err(ProtocolError::LocalAuth);
        }
        if self.keys.is_none() {
            return Err(ProtocolError::KeyMissing);
        }
        let shared_key = self.unwrap_shared_key(biometric, password);
        let pdid = if shadow {
            let slot = self.shadows.iter_mut().find(|s| !s.used).ok_or(ProtocolError::ReRegistrationRequired)?;
            slot.used = true;
            slot.id
        } else {
            self.pdid
        };
        let ephemeral = KeyPair::generate(rng);
        self.session_public = Some(*ephemeral.public());
        let session = UserSession {
            state: UserState::AwaitChallenge,
            shared_key,
            pdid,
            via_shadow: shadow,
            location: location.to_vec(),
            user_nonce: [0; 32],
        };
        let msg = Message::A1(ChargeRequest { pdid, request: CHARGING_REQUEST.to_owned(), proof_request: PROOF_REQUEST.to_owned() });
        Ok((session, msg))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.field(self.did.to_string().as_bytes());
        match &self.keys {
            Some(kp) => e.u8(1).field(&scalar_to_bytes(kp.private())),
            None => e.u8(0),
        };
        e.field(&point_to_bytes(&self.public))
            .field(self.delta.as_bytes())
            .field(&self.wrapped_key)
            .field(&self.pdid)
            .u16(u16::try_from(self.shadows.len()).expect("shadow set fits u16"));
        for s in &self.shadows {
            e.field(&s.id).u8(u8::from(s.used));
        }
        e.field(&self.vc.to_bytes())
            .field(self.usp.id.to_string().as_bytes())
            .field(&point_to_bytes(&self.usp.public_key))
            .u8(u8::from(self.resync_pending));
        match &self.session_public {
            Some(p) => e.u8(1).field(&point_to_bytes(p)),
            None => e.u8(0),
        };
        e.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let mut d = Decoder::new(bytes);
        let did = Did::parse(&d.string("DID")?)?;
        let keys = match d.u8("key flag")? {
            0 => None,
            1 => Some(
                KeyPair::from_private(scalar_from_bytes(d.field("private key")?)?)
                    .ok_or(ProtocolError::CorruptState("zero private key"))?,
            ),
            _ => return Err(DecodeError::Invalid("key flag").into()),
        };
        let public = point_from_bytes(d.field("public key")?)?;
        if keys.as_ref().is_some_and(|k| *k.public() != public) {
            return Err(ProtocolError::CorruptState("private key does not match public key"));
        }
        let delta = Digest(d.fixed_field("delta")?);
        let wrapped_key = d.field("wrapped key")?.to_vec();
        if wrapped_key.len() != 32 {
            return Err(DecodeError::Invalid("wrapped key").into());
        }
        let pdid = d.fixed_field("PDID")?;
        let n = d.u16("shadow count")?;
        let mut shadows = Vec::with_capacity(n.into());
        for _ in 0..n {
            let id = d.fixed_field("shadow")?;
            let used = match d.u8("shadow flag")? {
                0 => false,
                1 => true,
                _ => return Err(DecodeError::Invalid("shadow flag").into()),
            };
            shadows.push(ShadowIdentity { id, used });
        }
        let vc = SignedCredential::from_bytes(d.field("credential")?)?;
        let usp_did = Did::parse(&d.string("USP DID")?)?;
        let usp = DidDocument::new(usp_did, point_from_bytes(d.field("USP key")?)?);
        let resync_pending = match d.u8("resync flag")? {
            0 => false,
            1 => true,
            _ => return Err(DecodeError::Invalid("resync flag").into()),
        };
        let session_public = match d.u8("session key flag")? {
            0 => None,
            1 => Some(point_from_bytes(d.field("session key")?)?),
            _ => return Err(DecodeError::Invalid("session key flag").into()),
        };
        d.finish()?;
        Ok(Self { did, keys, public, delta, wrapped_key, pdid, shadows, vc, usp, resync_pending, session_public })
    }

    pub fn save(&self, path: &Path) -> Result<(), ProtocolError> {
        store::save(path, WALLET_MAGIC, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, ProtocolError> {
        Self::from_bytes(&store::load(path, WALLET_MAGIC)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum UserState {
    AwaitChallenge,
    AwaitDelivery,
    Done,
}

/// One authentication attempt on the device.
pub struct UserSession {
    state: UserState,
    shared_key: Secret32,
    pdid: Secret32,
    via_shadow: bool,
    location: Vec<u8>,
    user_nonce: Secret32,
}

impl UserSession {
    pub fn pdid(&self) -> &Secret32 {
        &self.pdid
    }

    pub fn via_shadow(&self) -> bool {
        self.via_shadow
    }

    pub fn handle<R: RngCore + CryptoRng>(
        &mut self,
        wallet: &mut Wallet,
        msg: Message,
        rng: &mut R,
        meter: &mut Meter,
    ) -> Result<Step, ProtocolError> {
        match (self.state, msg) {
            (UserState::AwaitChallenge, Message::A2(m)) => {
                let reply = self.prove(wallet, m, rng, meter)?;
                self.state = UserState::AwaitDelivery;
                Ok(Step::Send(reply))
            }
            (UserState::AwaitDelivery, Message::A6(m)) => {
                let key = self.finish(wallet, &m.user_ciphertext, meter)?;
                self.state = UserState::Done;
                Ok(Step::Finished { send: None, session_key: key })
            }
            (UserState::Done, _) => Err(ProtocolError::ProtocolOrder("session already finished")),
            (UserState::AwaitChallenge, _) => Err(ProtocolError::ProtocolOrder("user expected M_A2")),
            (UserState::AwaitDelivery, _) => Err(ProtocolError::ProtocolOrder("user expected M_A6")),
        }
    }

    fn prove<R: RngCore + CryptoRng>(
        &mut self,
        wallet: &mut Wallet,
        m: super::messages::StationChallenge,
        rng: &mut R,
        meter: &mut Meter,
    ) -> Result<Message, ProtocolError> {
        if m.proof_request != PROOF_REQUEST {
            return Err(DecodeError::Invalid("proof request").into());
        }
        let vc = &m.vc;
        if vc.body.subject != m.did
            || vc.body.issuer != wallet.usp.id.to_string()
            || vc.body.attributes.get(ATTR_STATION).map(String::as_str) != Some("true")
        {
            log::warn!("user {}: station credential does not describe {}", wallet.did, m.did);
            return Err(ProtocolError::PeerAuth("credential subject or issuer"));
        }
        if !meter.verify_vc("verify VC_CS", vc, &wallet.usp) {
            log::warn!("user {}: station credential signature rejected", wallet.did);
            return Err(ProtocolError::PeerAuth("credential signature"));
        }
        let (st, proof) = meter.prove_possession(&wallet.vc, &wallet.usp.public_key, rng)?;
        self.user_nonce = random32(rng);
        let mask = meter.hash("h(K_user||N_user)", &[&self.shared_key, &self.user_nonce]);
        let enc_location = keystream_wrap(mask.as_bytes(), b"lai", &self.location);
        let v1 = meter.hash("V1", &[&self.pdid[..], &self.user_nonce, &self.shared_key, &enc_location]);
        wallet.resync_pending = true;
        Ok(Message::A3(Presentation {
            hash_value: *st.hash_value(),
            proof,
            sig_point: *st.sig_point(),
            user_nonce: self.user_nonce,
            enc_location,
            v1,
        }))
    }

    fn finish(&mut self, wallet: &mut Wallet, ciphertext: &[u8], meter: &mut Meter) -> Result<Secret32, ProtocolError> {
        let private = *wallet.private_key()?;
        let plaintext = meter.decrypt("decrypt M_A5user", &private, ciphertext).map_err(|_| {
            log::warn!("user {}: session payload failed to decrypt", wallet.did);
            ProtocolError::Confidentiality
        })?;
        let payload = UserPayload::from_bytes(&plaintext)?;
        let k = &self.shared_key;
        if meter.hash("V4", &[&payload.masked_key, &self.user_nonce, k]) != payload.v4 {
            log::warn!("user {}: V4 mismatch", wallet.did);
            return Err(ProtocolError::Integrity("V4"));
        }
        let mask = meter.hash("h(PDID||N_user||K_user)", &[&self.pdid, &self.user_nonce, k]);
        let session_key = xor32(mask.as_bytes(), &payload.masked_key);
        let next_nonce = secret32(keystream_wrap(k, b"n-new", &payload.wrapped_nonce), "new nonce")?;
        let next_vc = SignedCredential::from_bytes(&keystream_wrap(k, b"vc-new", &payload.wrapped_vc))?;
        if next_vc.nonce != next_nonce || next_vc.subject_key != wallet.public {
            return Err(ProtocolError::Integrity("new credential"));
        }
        wallet.pdid = meter.hash("PDID_next = h(PDID||K_user)", &[&self.pdid, k]).0;
        if self.via_shadow {
            wallet.shadows.retain(|s| s.id != self.pdid);
        }
        wallet.vc = next_vc;
        wallet.resync_pending = false;
        Ok(session_key)
    }
}

/// The public key a scalar would have; used when checking recovered keys.
pub(crate) fn public_of(private: &Scalar) -> CurvePoint {
    (generator() * private).to_affine()
}
