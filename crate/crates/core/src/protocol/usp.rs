//! Utility service provider: credential issuer, user database, and the
//! authorization step of every session.
//!
//! Concurrency: the pseudonym index and the user and station maps sit
//! behind `RwLock`s; each user record has its own `Mutex`, held for the whole
//! of an authorization, so rotations of one user are serialized while
//! distinct users proceed in parallel. A record lock is never requested
//! while an index lock is held.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use rand::{CryptoRng, RngCore};

use crate::codec::{Decoder, Encoder};
use crate::crypto::group::{point_from_bytes, point_to_bytes, scalar_from_bytes, scalar_to_bytes};
use crate::crypto::{hash, keystream_wrap, CurvePoint, Digest, KeyPair};
use crate::identity::{create_did, issue_vc, verify_vc, CredentialBody, Did, Registry, SignedCredential, DID_METHOD};

use super::messages::{Authorization, Message, RegistrationGrant, UserPayload};
use super::meter::Meter;
use super::{
    random32, store, xor32, GovIssuer, ProtocolError, Secret32, ATTR_REGISTERED_USER, ATTR_STATION, REGISTRATION_REQUEST,
};

const USP_MAGIC: &[u8; 4] = b"EVDB";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Current,
    Shadow,
    Retired,
}

#[derive(Debug, Clone)]
struct UserRecord {
    did: Did,
    subject_key: CurvePoint,
    shared_key: Secret32,
    /// The PDID the user presents next.
    current: Secret32,
    /// `h(current ‖ K_user)`, persisted alongside `current`.
    next: Secret32,
    shadows: Vec<Secret32>,
    retired: Vec<Secret32>,
    cred: CredentialBody,
    nonce: Secret32,
    /// hashValue of the most recently issued credential.
    expected: Digest,
    /// hashValue last presented in a completed authorization; a shadow
    /// session may still present it if the user never received the newer one.
    confirmed: Option<Digest>,
}

#[derive(Debug, Clone)]
struct StationRecord {
    shared_key: Secret32,
}

/// Read-only view of one user's record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSnapshot {
    pub current_pdid: Secret32,
    pub next_pdid: Secret32,
    pub shadows: Vec<Secret32>,
    pub retired: usize,
    pub expected_hash_value: Digest,
    pub shared_key: Secret32,
}

/// Outcome of a successful authorization.
#[derive(Debug, Clone)]
pub struct Authorized {
    pub message: Message,
    pub session_key: Secret32,
}

pub struct Usp {
    did: Did,
    keys: KeyPair,
    clock: AtomicU64,
    users: RwLock<HashMap<String, Arc<Mutex<UserRecord>>>>,
    index: RwLock<HashMap<Secret32, (String, Slot)>>,
    stations: RwLock<HashMap<String, StationRecord>>,
    path: Option<PathBuf>,
    save_lock: Mutex<()>,
}

impl Usp {
    /// Generates the USP keypair and publishes its DID.
    pub fn create<R: RngCore + CryptoRng>(registry: &mut Registry, rng: &mut R) -> Result<Self, ProtocolError> {
        let keys = KeyPair::generate(rng);
        let did = create_did(DID_METHOD, keys.public(), registry, rng)?;
        Ok(Self::empty(did, keys))
    }

    fn empty(did: Did, keys: KeyPair) -> Self {
        Self {
            did,
            keys,
            clock: AtomicU64::new(0),
            users: RwLock::default(),
            index: RwLock::default(),
            stations: RwLock::default(),
            path: None,
            save_lock: Mutex::new(()),
        }
    }

    pub fn did(&self) -> &Did {
        &self.did
    }

    pub fn public_key(&self) -> &CurvePoint {
        self.keys.public()
    }

    /// Persists to `path` after every state change from now on.
    pub fn persist_to(&mut self, path: impl Into<PathBuf>) -> Result<(), ProtocolError> {
        self.path = Some(path.into());
        self.persist()
    }

    fn tick(&self) -> u64 {
        self.clock.fetch_add(1, Ordering::SeqCst)
    }

    fn issue<R: RngCore + CryptoRng>(&self, subject: &Did, attr: &str, key: CurvePoint, rng: &mut R) -> SignedCredential {
        let body = CredentialBody::new(&self.did, subject.to_string(), self.tick()).with_attribute(attr, "true");
        issue_vc(&self.keys, body, key, random32(rng))
    }

    /// Verifies the digital-identity credential and enrolls the user.
    pub fn handle_registration<R: RngCore + CryptoRng>(
        &self,
        msg: Message,
        registry: &Registry,
        rng: &mut R,
    ) -> Result<Message, ProtocolError> {
        let Message::Rev1(req) = msg else {
            return Err(ProtocolError::ProtocolOrder("USP expected M_REV1"));
        };
        let reject = |why| {
            log::warn!("USP: registration of {} rejected: {why}", req.did);
            ProtocolError::RegistrationRejected(why)
        };
        if req.request != REGISTRATION_REQUEST {
            return Err(reject("request type"));
        }
        let did = Did::parse(&req.did).map_err(|_| reject("malformed DID"))?;
        let user_doc = registry.resolve(&did).map_err(|_| reject("DID not in registry"))?;
        let gov = GovIssuer::builtin();
        let gov_doc = registry.resolve(gov.did()).map_err(|_| reject("digital-identity issuer unknown"))?;
        let id_vc = &req.identity_vc;
        if id_vc.body.issuer != gov.did().to_string()
            || id_vc.body.subject != req.did
            || id_vc.subject_key != user_doc.public_key
            || !verify_vc(id_vc, gov_doc)
        {
            return Err(reject("digital-identity credential"));
        }
        let mut all = req.shadows.clone();
        all.push(req.pdid);
        all.sort_unstable();
        if all.windows(2).any(|w| w[0] == w[1]) {
            return Err(reject("pseudonyms not distinct"));
        }

        let shared_key = random32(rng);
        let vc = self.issue(&did, ATTR_REGISTERED_USER, user_doc.public_key, rng);
        let record = UserRecord {
            did: did.clone(),
            subject_key: user_doc.public_key,
            shared_key,
            current: req.pdid,
            next: hash(&[&req.pdid, &shared_key]).0,
            shadows: req.shadows.clone(),
            retired: Vec::new(),
            cred: vc.body.clone(),
            nonce: vc.nonce,
            expected: vc.hash_value,
            confirmed: None,
        };
        {
            let mut users = self.users.write().expect("users lock");
            let mut index = self.index.write().expect("index lock");
            if users.contains_key(&req.did) {
                return Err(ProtocolError::AlreadyRegistered);
            }
            if all.iter().any(|p| index.contains_key(p)) {
                return Err(reject("pseudonym collision"));
            }
            index.insert(req.pdid, (req.did.clone(), Slot::Current));
            for s in &req.shadows {
                index.insert(*s, (req.did.clone(), Slot::Shadow));
            }
            users.insert(req.did.clone(), Arc::new(Mutex::new(record)));
        }
        self.persist()?;
        Ok(Message::Rev2(RegistrationGrant { shared_key, cred: vc.body.clone(), nonce: vc.nonce, vc }))
    }

    /// Issues a station credential and `K_CS`.
    pub fn register_station<R: RngCore + CryptoRng>(
        &self,
        did: &Did,
        registry: &Registry,
        rng: &mut R,
    ) -> Result<(SignedCredential, Secret32), ProtocolError> {
        let doc = registry.resolve(did)?;
        let shared_key = random32(rng);
        let vc = self.issue(did, ATTR_STATION, doc.public_key, rng);
        {
            let mut stations = self.stations.write().expect("stations lock");
            if stations.contains_key(&did.to_string()) {
                return Err(ProtocolError::AlreadyRegistered);
            }
            stations.insert(did.to_string(), StationRecord { shared_key });
        }
        self.persist()?;
        Ok((vc, shared_key))
    }

    /// Checks `M_A4` and, on success, rotates the user's pseudonym, issues the
    /// next credential and builds `M_A5`.
    ///
    /// Check order: pseudonym lookup, credential freshness, V1, location,
    /// V2. Location precedes V2 so that a forged `LAI_CS` is reported as
    /// location forgery rather than as a generic integrity failure.
    pub fn authorize<R: RngCore + CryptoRng>(
        &self,
        msg: Message,
        rng: &mut R,
        meter: &mut Meter,
    ) -> Result<Authorized, ProtocolError> {
        let Message::A4(fwd) = msg else {
            return Err(ProtocolError::ProtocolOrder("USP expected M_A4"));
        };
        let result = self.authorize_inner(fwd, rng, meter);
        if let Err(e) = &result {
            log::warn!("USP: authorization rejected: {} ({e})", e.name());
        }
        let out = result?;
        self.persist()?;
        Ok(out)
    }

    fn authorize_inner<R: RngCore + CryptoRng>(
        &self,
        fwd: super::messages::StationForward,
        rng: &mut R,
        meter: &mut Meter,
    ) -> Result<Authorized, ProtocolError> {
        let pres = &fwd.presentation;
        let (owner, slot) = match self.index.read().expect("index lock").get(&fwd.pdid) {
            None => return Err(ProtocolError::Identity("unknown PDID")),
            Some((_, Slot::Retired)) => return Err(ProtocolError::Replay("retired PDID")),
            Some((owner, slot)) => (owner.clone(), *slot),
        };
        let record = self.users.read().expect("users lock").get(&owner).cloned().ok_or(ProtocolError::Identity("unknown user"))?;
        let mut rec = record.lock().expect("record lock");

        // the index may have moved on between lookup and lock
        let via_shadow = match slot {
            Slot::Current if rec.current == fwd.pdid => false,
            Slot::Shadow if rec.shadows.contains(&fwd.pdid) => true,
            Slot::Current => return Err(ProtocolError::Replay("retired PDID")),
            _ => return Err(ProtocolError::Identity("unknown PDID")),
        };
        let fresh = pres.hash_value == rec.expected || (via_shadow && Some(pres.hash_value) == rec.confirmed);
        if !fresh {
            return Err(ProtocolError::Replay("stale credential hashValue"));
        }
        let k = rec.shared_key;
        let v1 = meter.hash("V1", &[&fwd.pdid[..], &pres.user_nonce, &k, &pres.enc_location]);
        if v1 != pres.v1 {
            return Err(ProtocolError::Integrity("V1"));
        }
        let mask = meter.hash("h(K_user||N_user)", &[&k, &pres.user_nonce]);
        let user_location = keystream_wrap(mask.as_bytes(), b"lai", &pres.enc_location);
        if user_location != fwd.station_location {
            return Err(ProtocolError::LocationForgery);
        }
        let k_cs = self
            .stations
            .read()
            .expect("stations lock")
            .get(&fwd.station)
            .map(|s| s.shared_key)
            .ok_or(ProtocolError::Identity("unknown station"))?;
        let v2 = meter.hash(
            "V2",
            &[fwd.station.as_bytes(), &fwd.station_nonce, &k_cs, &fwd.station_location, &pres.to_bytes()],
        );
        if v2 != fwd.v2 {
            return Err(ProtocolError::Integrity("V2"));
        }

        let session_key = random32(rng);
        let body = CredentialBody::new(&self.did, rec.did.to_string(), self.tick()).with_attribute(ATTR_REGISTERED_USER, "true");
        let next_vc = meter.issue_vc("sign hashValue_new", &self.keys, body, rec.subject_key, random32(rng));

        // rotation, committed before M_A5 exists
        let mut retire = vec![];
        let mut dropped_shadow = None;
        if via_shadow {
            rec.shadows.retain(|s| *s != fwd.pdid);
            dropped_shadow = Some(fwd.pdid);
            retire.push(rec.current);
            rec.current = meter.hash("PDID_next = h(shadow||K_user)", &[&fwd.pdid, &k]).0;
            rec.next = meter.hash("PDID after next (shadow session)", &[&rec.current, &k]).0;
        } else {
            retire.push(rec.current);
            rec.current = rec.next;
            rec.next = meter.hash("PDID_next = h(PDID||K_user)", &[&rec.current, &k]).0;
        }
        rec.retired.extend_from_slice(&retire);
        rec.confirmed = Some(pres.hash_value);
        rec.expected = next_vc.hash_value;
        rec.cred = next_vc.body.clone();
        rec.nonce = next_vc.nonce;
        {
            let mut index = self.index.write().expect("index lock");
            for p in &retire {
                index.insert(*p, (owner.clone(), Slot::Retired));
            }
            if let Some(s) = dropped_shadow {
                index.remove(&s);
            }
            index.insert(rec.current, (owner.clone(), Slot::Current));
        }

        let user_mask = meter.hash("h(PDID||N_user||K_user)", &[&fwd.pdid[..], &pres.user_nonce, &k]);
        let masked_user = xor32(user_mask.as_bytes(), &session_key);
        let cs_mask = meter.hash("h(DID_CS||N_CS||K_CS)", &[fwd.station.as_bytes(), &fwd.station_nonce, &k_cs]);
        let masked_cs = xor32(cs_mask.as_bytes(), &session_key);
        let v3 = meter.hash("V3", &[&masked_cs, &fwd.station_nonce, &k_cs]);
        let v4 = meter.hash("V4", &[&masked_user, &pres.user_nonce, &k]);
        let payload = UserPayload {
            masked_key: masked_user,
            v4,
            wrapped_nonce: keystream_wrap(&k, b"n-new", &next_vc.nonce),
            wrapped_vc: keystream_wrap(&k, b"vc-new", &next_vc.to_bytes()),
        };
        let user_ciphertext = meter.encrypt("encrypt M_A5user", &rec.subject_key, &payload.to_bytes(), rng);
        Ok(Authorized {
            message: Message::A5(Authorization { user_ciphertext, station_masked_key: masked_cs, v3 }),
            session_key,
        })
    }

    pub fn user_snapshot(&self, did: &Did) -> Option<UserSnapshot> {
        let record = self.users.read().expect("users lock").get(&did.to_string()).cloned()?;
        let rec = record.lock().expect("record lock");
        Some(UserSnapshot {
            current_pdid: rec.current,
            next_pdid: rec.next,
            shadows: rec.shadows.clone(),
            retired: rec.retired.len(),
            expected_hash_value: rec.expected,
            shared_key: rec.shared_key,
        })
    }

    pub fn user_count(&self) -> usize {
        self.users.read().expect("users lock").len()
    }

    fn persist(&self) -> Result<(), ProtocolError> {
        let Some(path) = &self.path else { return Ok(()) };
        let _guard = self.save_lock.lock().expect("save lock");
        store::save(path, USP_MAGIC, &self.to_bytes())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.field(self.did.to_string().as_bytes())
            .field(&scalar_to_bytes(self.keys.private()))
            .u64(self.clock.load(Ordering::SeqCst));
        let stations: BTreeMap<String, StationRecord> =
            self.stations.read().expect("stations lock").iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        e.u32(stations.len() as u32);
        for (did, s) in &stations {
            e.field(did.as_bytes()).field(&s.shared_key);
        }
        let users: BTreeMap<String, Arc<Mutex<UserRecord>>> =
            self.users.read().expect("users lock").iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        e.u32(users.len() as u32);
        for rec in users.values() {
            let r = rec.lock().expect("record lock").clone();
            e.field(r.did.to_string().as_bytes())
                .field(&point_to_bytes(&r.subject_key))
                .field(&r.shared_key)
                .field(&r.current)
                .field(&r.next);
            e.u16(r.shadows.len() as u16);
            for s in &r.shadows {
                e.field(s);
            }
            e.u32(r.retired.len() as u32);
            for p in &r.retired {
                e.field(p);
            }
            e.field(&r.cred.canonical_bytes()).field(&r.nonce).field(r.expected.as_bytes());
            match r.confirmed {
                Some(c) => e.u8(1).field(c.as_bytes()),
                None => e.u8(0),
            };
        }
        e.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let mut d = Decoder::new(bytes);
        let did = Did::parse(&d.string("USP DID")?)?;
        let keys =
            KeyPair::from_private(scalar_from_bytes(d.field("USP key")?)?).ok_or(ProtocolError::CorruptState("zero USP key"))?;
        let usp = Self::empty(did, keys);
        usp.clock.store(d.u64("clock")?, Ordering::SeqCst);
        {
            let mut stations = usp.stations.write().expect("stations lock");
            for _ in 0..d.u32("station count")? {
                let did = d.string("station DID")?;
                stations.insert(did, StationRecord { shared_key: d.fixed_field("station key")? });
            }
        }
        {
            let mut users = usp.users.write().expect("users lock");
            let mut index = usp.index.write().expect("index lock");
            for _ in 0..d.u32("user count")? {
                let did = Did::parse(&d.string("user DID")?)?;
                let subject_key = point_from_bytes(d.field("subject key")?)?;
                let shared_key = d.fixed_field("user key")?;
                let current = d.fixed_field("current PDID")?;
                let next = d.fixed_field("next PDID")?;
                let shadows: Vec<Secret32> =
                    (0..d.u16("shadow count")?).map(|_| d.fixed_field("shadow")).collect::<Result<_, _>>()?;
                let retired: Vec<Secret32> =
                    (0..d.u32("retired count")?).map(|_| d.fixed_field("retired PDID")).collect::<Result<_, _>>()?;
                let cred = CredentialBody::from_canonical(d.field("cred")?)?;
                let nonce = d.fixed_field("nonce")?;
                let expected = Digest(d.fixed_field("expected hashValue")?);
                let confirmed = match d.u8("confirmed flag")? {
                    0 => None,
                    1 => Some(Digest(d.fixed_field("confirmed hashValue")?)),
                    _ => return Err(ProtocolError::CorruptState("confirmed flag")),
                };
                let key = did.to_string();
                for p in &retired {
                    index.insert(*p, (key.clone(), Slot::Retired));
                }
                for s in &shadows {
                    index.insert(*s, (key.clone(), Slot::Shadow));
                }
                index.insert(current, (key.clone(), Slot::Current));
                let rec = UserRecord {
                    did,
                    subject_key,
                    shared_key,
                    current,
                    next,
                    shadows,
                    retired,
                    cred,
                    nonce,
                    expected,
                    confirmed,
                };
                users.insert(key, Arc::new(Mutex::new(rec)));
            }
        }
        d.finish()?;
        Ok(usp)
    }

    pub fn load(path: &Path) -> Result<Self, ProtocolError> {
        let mut usp = Self::from_bytes(&store::load(path, USP_MAGIC)?)?;
        usp.path = Some(path.to_path_buf());
        Ok(usp)
    }
}
