//! Deterministic Dolev-Yao network simulation.
//!
//! A [`Deployment`] holds one USP, any number of stations and users, and a
//! seeded RNG stream per participant. Every protocol message crosses a
//! [`Channel`] whose [`Adversary`] may pass, drop, modify, replay or replace
//! it. The adversary sees only channel bytes; role secrets stay inside the
//! role objects. Scenario scripts drive a deployment line by line and record
//! a [`Transcript`] that is byte-identical for identical `(seed, script)`.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::{self, Write as _};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::crypto::group::{point_to_bytes, scalar_to_bytes};
use crate::crypto::{hash, keystream_wrap, KeyPair};
use crate::identity::{create_did, Registry, DID_METHOD};
use crate::protocol::messages::{tag_name, Message};
use crate::protocol::recovery::Custodian;
use crate::protocol::{
    key_backup, key_recover, CsSession, CsState, Enrollment, GovIssuer, Meter, OpCounts, ProtocolError, Secret32, Step, Usp,
    UserSession, Wallet, DEFAULT_SHADOW_COUNT,
};
use crate::sharing::ShareParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    User,
    Cs,
    Usp,
    Channel,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::User => "user",
            Self::Cs => "cs",
            Self::Usp => "usp",
            Self::Channel => "channel",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "user" => Self::User,
            "cs" => Self::Cs,
            "usp" => Self::Usp,
            "channel" => Self::Channel,
            _ => return None,
        })
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What the adversary does with one matched message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Pass,
    Drop,
    /// Flips the low bit of the byte at this index; negative indexes count
    /// from the end, and both wrap modulo the length.
    Tamper(i64),
    /// Delivers the same-named message captured in an earlier session.
    Replay { session: u32 },
    Substitute(Vec<u8>),
    /// Rewrites `LAI_CS` inside `M_A4`.
    ForgeLocation(Vec<u8>),
    /// Rewrites `N_user`, `EL` and `V1` inside `M_A3` under a guessed `K_user`.
    ImpersonateUser,
}

impl Action {
    fn label(&self) -> String {
        match self {
            Self::Pass => "pass".into(),
            Self::Drop => "drop".into(),
            Self::Tamper(i) => format!("tamper:{i}"),
            Self::Replay { session } => format!("replay:{session}"),
            Self::Substitute(_) => "substitute".into(),
            Self::ForgeLocation(_) => "forge-location".into(),
            Self::ImpersonateUser => "impersonate-user".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Captured {
    pub session: u32,
    pub from: Role,
    pub to: Role,
    pub message: &'static str,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Default)]
pub struct CaptureFilter {
    pub session: Option<u32>,
    pub message: Option<String>,
}

impl CaptureFilter {
    fn matches(&self, c: &Captured) -> bool {
        self.session.is_none_or(|s| s == c.session) && self.message.as_deref().is_none_or(|m| m == c.message)
    }
}

/// Channel policy plus the store of everything observed on the wire.
#[derive(Debug, Default)]
pub struct Adversary {
    rules: BTreeMap<(u32, String), Action>,
    store: Vec<Captured>,
    rng: Option<ChaCha20Rng>,
}

impl Adversary {
    pub fn passive() -> Self {
        Self::default()
    }

    pub fn rule(&mut self, session: u32, message: &str, action: Action) {
        self.rules.insert((session, message.to_owned()), action);
    }

    fn action_for(&self, session: u32, message: &str) -> Action {
        self.rules.get(&(session, message.to_owned())).cloned().unwrap_or(Action::Pass)
    }

    pub fn captured(&self) -> &[Captured] {
        &self.store
    }

    fn recall(&self, session: u32, message: &str) -> Option<&Captured> {
        self.store.iter().find(|c| c.session == session && c.message == message)
    }
}

/// Copies matching observed messages out of the adversary's store.
pub fn adversary_capture(channel: &Channel, filter: &CaptureFilter) -> Vec<Captured> {
    channel.adversary.store.iter().filter(|c| filter.matches(c)).cloned().collect()
}

#[derive(Debug, Clone)]
struct Envelope {
    from: Role,
    to: Role,
    bytes: Vec<u8>,
}

/// Ordered delivery queue; each envelope passes the policy exactly once, on
/// delivery.
#[derive(Debug, Default)]
pub struct Channel {
    queue: VecDeque<Envelope>,
    pub adversary: Adversary,
    events: Vec<String>,
    seq: u64,
}

impl Channel {
    pub fn new(adversary: Adversary) -> Self {
        Self { adversary, ..Self::default() }
    }

    pub fn send(&mut self, from: Role, to: Role, bytes: Vec<u8>) {
        self.queue.push_back(Envelope { from, to, bytes });
    }

    /// Pops the next envelope, records it, and applies the policy. `None`
    /// means the queue was empty or the adversary dropped the message.
    pub fn deliver(&mut self, session: u32) -> Option<(Role, Vec<u8>)> {
        let env = self.queue.pop_front()?;
        let name = env.bytes.first().and_then(|t| tag_name(*t)).unwrap_or("unknown");
        self.adversary.store.push(Captured { session, from: env.from, to: env.to, message: name, bytes: env.bytes.clone() });
        let action = self.adversary.action_for(session, name);
        let delivered = match &action {
            Action::Pass => Some(env.bytes.clone()),
            Action::Drop => None,
            Action::Tamper(i) => {
                let mut b = env.bytes.clone();
                if !b.is_empty() {
                    let at = i.rem_euclid(b.len() as i64) as usize;
                    b[at] ^= 0x01;
                }
                Some(b)
            }
            Action::Replay { session: from } => {
                Some(self.adversary.recall(*from, name).map(|c| c.bytes.clone()).unwrap_or_else(|| env.bytes.clone()))
            }
            Action::Substitute(b) => Some(b.clone()),
            Action::ForgeLocation(lai) => Some(match Message::from_bytes(&env.bytes) {
                Ok(Message::A4(mut f)) => {
                    f.station_location = lai.clone();
                    Message::A4(f).to_bytes()
                }
                _ => env.bytes.clone(),
            }),
            Action::ImpersonateUser => Some(self.impersonate_user(session, &env.bytes)),
        };
        self.seq += 1;
        let mut line = format!(
            "event seq={} session={session} msg={name} from={} to={} action={} sent={}",
            self.seq,
            env.from,
            env.to,
            action.label(),
            hex::encode(&env.bytes)
        );
        match &delivered {
            Some(b) if *b != env.bytes => {
                let _ = write!(line, " delivered={}", hex::encode(b));
            }
            None => line.push_str(" delivered=none"),
            _ => {}
        }
        self.events.push(line);
        delivered.map(|b| (env.to, b))
    }

    fn impersonate_user(&mut self, session: u32, bytes: &[u8]) -> Vec<u8> {
        let Ok(Message::A3(mut p)) = Message::from_bytes(bytes) else {
            return bytes.to_vec();
        };
        let pdid = self
            .adversary
            .store
            .iter()
            .rev()
            .find(|c| c.session == session && c.message == "M_A1")
            .and_then(|c| match Message::from_bytes(&c.bytes) {
                Ok(Message::A1(a)) => Some(a.pdid),
                _ => None,
            })
            .unwrap_or([0; 32]);
        let rng = self.adversary.rng.get_or_insert_with(|| ChaCha20Rng::seed_from_u64(0));
        let guess: Secret32 = rand::Rng::gen(rng);
        let nonce: Secret32 = rand::Rng::gen(rng);
        let mask = hash(&[&guess, &nonce]);
        p.user_nonce = nonce;
        p.enc_location = keystream_wrap(mask.as_bytes(), b"lai", b"guessed-location");
        p.v1 = hash(&[&pdid[..], &nonce, &guess, &p.enc_location]);
        Message::A3(p).to_bytes()
    }

    pub fn events(&self) -> &[String] {
        &self.events
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Success { session_key: Secret32 },
    Failed { role: Role, error: &'static str },
    Dropped { message: &'static str },
    KeyMismatch,
    /// Result of the adversary comparing two sessions' user-originated fields.
    Linkage { shared_fields: usize },
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Success { .. } => "success",
            Self::Failed { error, .. } => error,
            Self::Dropped { .. } => "message-dropped",
            Self::KeyMismatch => "sk-mismatch",
            Self::Linkage { shared_fields: 0 } => "unlinkable",
            Self::Linkage { .. } => "linkable",
        }
    }

    pub fn role(&self) -> Option<Role> {
        match self {
            Self::Failed { role, .. } => Some(*role),
            Self::Dropped { .. } => Some(Role::Channel),
            _ => None,
        }
    }

    pub fn is_success(&self) -> bool {
        matches!(self, Self::Success { .. })
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Success { .. } => f.write_str("success"),
            Self::Failed { role, error } => write!(f, "{error} at={role}"),
            Self::Dropped { message } => write!(f, "message-dropped msg={message}"),
            Self::KeyMismatch => f.write_str("sk-mismatch"),
            Self::Linkage { shared_fields } => write!(f, "{} shared_fields={shared_fields}", self.label()),
        }
    }
}

/// One authentication attempt as seen by the simulator.
#[derive(Debug, Clone)]
pub struct SessionRecord {
    pub number: u32,
    pub user: String,
    pub station: String,
    pub outcome: Outcome,
    /// Messages as delivered, in order.
    pub messages: Vec<(&'static str, Vec<u8>)>,
    pub emitted: usize,
    pub user_ops: Meter,
    pub cs_ops: Meter,
    pub usp_ops: Meter,
    /// Session keys each role derived, when it got that far.
    pub keys: [Option<Secret32>; 3],
}

impl SessionRecord {
    pub fn message(&self, name: &str) -> Option<Message> {
        self.messages.iter().find(|(n, _)| *n == name).and_then(|(_, b)| Message::from_bytes(b).ok())
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("undefined participant `{0}`")]
    Undefined(String),
    #[error("setup failed: {0}")]
    Setup(#[from] ProtocolError),
}

struct UserEntry {
    wallet: Wallet,
    biometric: Vec<u8>,
    password: Vec<u8>,
    location: Vec<u8>,
    shares: Vec<Vec<u8>>,
}

fn derive_rng(seed: u64, label: &str) -> ChaCha20Rng {
    ChaCha20Rng::from_seed(hash(&[&b"simnet-rng"[..], &seed.to_be_bytes(), label.as_bytes()]).0)
}

fn custodian(i: usize) -> Custodian {
    Custodian { label: format!("custodian-{}", i + 1), passphrase: format!("custodian-passphrase-{}", i + 1).into_bytes() }
}

/// A full simulated system.
pub struct Deployment {
    seed: u64,
    pub registry: Registry,
    pub usp: Usp,
    stations: BTreeMap<String, CsState>,
    users: BTreeMap<String, UserEntry>,
    rngs: BTreeMap<String, ChaCha20Rng>,
    pub channel: Channel,
    sessions: Vec<SessionRecord>,
    totals: BTreeMap<Role, OpCounts>,
    notes: Vec<String>,
}

impl Deployment {
    pub fn new(seed: u64) -> Result<Self, ProtocolError> {
        Self::with_adversary(seed, Adversary::passive())
    }

    pub fn with_adversary(seed: u64, mut adversary: Adversary) -> Result<Self, ProtocolError> {
        let mut registry = Registry::in_memory();
        GovIssuer::builtin().publish(&mut registry)?;
        let mut usp_rng = derive_rng(seed, "usp");
        let usp = Usp::create(&mut registry, &mut usp_rng)?;
        adversary.rng = Some(derive_rng(seed, "adversary"));
        let mut rngs = BTreeMap::new();
        rngs.insert("usp".to_owned(), usp_rng);
        Ok(Self {
            seed,
            registry,
            usp,
            stations: BTreeMap::new(),
            users: BTreeMap::new(),
            rngs,
            channel: Channel::new(adversary),
            sessions: Vec::new(),
            totals: BTreeMap::new(),
            notes: Vec::new(),
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn rng(&mut self, key: &str) -> ChaCha20Rng {
        let seed = self.seed;
        self.rngs.remove(key).unwrap_or_else(|| derive_rng(seed, key))
    }

    fn put_rng(&mut self, key: &str, rng: ChaCha20Rng) {
        self.rngs.insert(key.to_owned(), rng);
    }

    pub fn add_station(&mut self, name: &str, location: &[u8]) -> Result<(), ProtocolError> {
        let key = format!("cs:{name}");
        let mut rng = self.rng(&key);
        let cs = CsState::register(&self.usp, location, &mut self.registry, &mut rng);
        self.put_rng(&key, rng);
        self.stations.insert(name.to_owned(), cs?);
        Ok(())
    }

    /// Adds a station that reuses `target`'s DID, credential and location
    /// but holds a guessed `K_CS` and its own keys.
    pub fn add_impersonator(&mut self, name: &str, target: &str) -> Result<(), ScenarioError> {
        let real = self.stations.get(target).ok_or_else(|| ScenarioError::Undefined(target.to_owned()))?.clone();
        let mut rng = self.rng("adversary-station");
        let fake = CsState::from_parts(
            real.did().clone(),
            KeyPair::generate(&mut rng),
            real.credential().clone(),
            rand::Rng::gen(&mut rng),
            real.location().to_vec(),
            real.usp().clone(),
        );
        self.put_rng("adversary-station", rng);
        self.stations.insert(name.to_owned(), fake);
        Ok(())
    }

    pub fn add_user(&mut self, name: &str, biometric: &[u8], password: &[u8], location: &[u8], shadows: usize) -> Result<(), ProtocolError> {
        let key = format!("user:{name}");
        let mut rng = self.rng(&key);
        let result = self.enroll(biometric, password, shadows, &mut rng);
        self.put_rng(&key, rng);
        let wallet = result?;
        self.users.insert(
            name.to_owned(),
            UserEntry { wallet, biometric: biometric.to_vec(), password: password.to_vec(), location: location.to_vec(), shares: vec![] },
        );
        Ok(())
    }

    fn enroll(&mut self, biometric: &[u8], password: &[u8], shadows: usize, rng: &mut ChaCha20Rng) -> Result<Wallet, ProtocolError> {
        let keys = KeyPair::generate(rng);
        let did = create_did(DID_METHOD, keys.public(), &mut self.registry, rng)?;
        let id_vc = GovIssuer::builtin().issue_identity(&did, keys.public(), 0, rng);
        let (enrollment, rev1) = Enrollment::start(did, keys, id_vc, &self.registry, shadows, rng)?;
        let mut usp_rng = self.rng("usp");
        let rev2 = self.usp.handle_registration(rev1, &self.registry, &mut usp_rng);
        self.put_rng("usp", usp_rng);
        enrollment.complete(rev2?, biometric, password, &self.registry)
    }

    pub fn wallet(&self, user: &str) -> Option<&Wallet> {
        self.users.get(user).map(|u| &u.wallet)
    }

    pub fn wallet_mut(&mut self, user: &str) -> Option<&mut Wallet> {
        self.users.get_mut(user).map(|u| &mut u.wallet)
    }

    pub fn station(&self, name: &str) -> Option<&CsState> {
        self.stations.get(name)
    }

    pub fn set_user_location(&mut self, user: &str, location: &[u8]) -> Result<(), ScenarioError> {
        let u = self.users.get_mut(user).ok_or_else(|| ScenarioError::Undefined(user.to_owned()))?;
        u.location = location.to_vec();
        Ok(())
    }

    pub fn sessions(&self) -> &[SessionRecord] {
        &self.sessions
    }

    pub fn last_session(&self) -> Option<&SessionRecord> {
        self.sessions.last()
    }

    pub fn next_session_number(&self) -> u32 {
        self.sessions.len() as u32 + 1
    }

    pub fn totals(&self) -> &BTreeMap<Role, OpCounts> {
        &self.totals
    }

    /// Runs one authentication between `user` and `station`. With `shadow`
    /// the user starts through desync recovery.
    pub fn run_session(&mut self, user: &str, station: &str, shadow: bool) -> Result<&SessionRecord, ScenarioError> {
        let mut entry = self.users.remove(user).ok_or_else(|| ScenarioError::Undefined(user.to_owned()))?;
        let Some(cs) = self.stations.get(station).cloned() else {
            self.users.insert(user.to_owned(), entry);
            return Err(ScenarioError::Undefined(station.to_owned()));
        };
        let number = self.next_session_number();
        let ukey = format!("user:{user}");
        let ckey = format!("cs:{station}");
        let mut urng = self.rng(&ukey);
        let mut crng = self.rng(&ckey);
        let mut prng = self.rng("usp");
        let mut rec = SessionRecord {
            number,
            user: user.to_owned(),
            station: station.to_owned(),
            outcome: Outcome::KeyMismatch,
            messages: vec![],
            emitted: 0,
            user_ops: Meter::new(),
            cs_ops: Meter::new(),
            usp_ops: Meter::new(),
            keys: [None; 3],
        };
        rec.outcome = self.drive(&mut entry, &cs, &mut rec, &mut urng, &mut crng, &mut prng, shadow);
        self.put_rng(&ukey, urng);
        self.put_rng(&ckey, crng);
        self.put_rng("usp", prng);
        self.users.insert(user.to_owned(), entry);
        *self.totals.entry(Role::User).or_default() += rec.user_ops.counts();
        *self.totals.entry(Role::Cs).or_default() += rec.cs_ops.counts();
        *self.totals.entry(Role::Usp).or_default() += rec.usp_ops.counts();
        self.notes.push(format!("outcome session={number} user={user} station={station} result={}", rec.outcome));
        self.sessions.push(rec);
        Ok(self.sessions.last().expect("just pushed"))
    }

    #[allow(clippy::too_many_arguments)]
    fn drive(
        &mut self,
        entry: &mut UserEntry,
        cs: &CsState,
        rec: &mut SessionRecord,
        urng: &mut ChaCha20Rng,
        crng: &mut ChaCha20Rng,
        prng: &mut ChaCha20Rng,
        shadow: bool,
    ) -> Outcome {
        let n = rec.number;
        let fail = |role, e: ProtocolError| Outcome::Failed { role, error: e.name() };
        let begun = if shadow {
            entry.wallet.desync_recover(&entry.biometric, &entry.password, &entry.location, urng, &mut rec.user_ops)
        } else {
            entry.wallet.begin_auth(&entry.biometric, &entry.password, &entry.location, urng, &mut rec.user_ops)
        };
        let (mut us, a1) = match begun {
            Ok(x) => x,
            Err(e) => return fail(Role::User, e),
        };

        // A1: user -> cs
        let Some(bytes) = self.hop(rec, Role::User, Role::Cs, a1) else { return Outcome::Dropped { message: "M_A1" } };
        let (mut cs_session, a2) = match Message::from_bytes(&bytes).map_err(ProtocolError::from).and_then(|m| cs.respond(m)) {
            Ok(x) => x,
            Err(e) => return fail(Role::Cs, e),
        };
        // A2: cs -> user
        let Some(bytes) = self.hop(rec, Role::Cs, Role::User, a2) else { return Outcome::Dropped { message: "M_A2" } };
        let a3 = match user_step(&mut us, &mut entry.wallet, &bytes, urng, &mut rec.user_ops) {
            Ok(Step::Send(m)) => m,
            Ok(_) => return fail(Role::User, ProtocolError::ProtocolOrder("unexpected completion")),
            Err(e) => return fail(Role::User, e),
        };
        // A3: user -> cs
        let Some(bytes) = self.hop(rec, Role::User, Role::Cs, a3) else { return Outcome::Dropped { message: "M_A3" } };
        let a4 = match cs_step(&mut cs_session, cs, &bytes, crng, &mut rec.cs_ops) {
            Ok(Step::Send(m)) => m,
            Ok(_) => return fail(Role::Cs, ProtocolError::ProtocolOrder("unexpected completion")),
            Err(e) => return fail(Role::Cs, e),
        };
        // A4: cs -> usp
        let Some(bytes) = self.hop(rec, Role::Cs, Role::Usp, a4) else { return Outcome::Dropped { message: "M_A4" } };
        let auth = match Message::from_bytes(&bytes).map_err(ProtocolError::from).and_then(|m| self.usp.authorize(m, prng, &mut rec.usp_ops)) {
            Ok(a) => a,
            Err(e) => return fail(Role::Usp, e),
        };
        rec.keys[2] = Some(auth.session_key);
        // A5: usp -> cs
        let Some(bytes) = self.hop(rec, Role::Usp, Role::Cs, auth.message) else { return Outcome::Dropped { message: "M_A5" } };
        let a6 = match cs_step(&mut cs_session, cs, &bytes, crng, &mut rec.cs_ops) {
            Ok(Step::Finished { send: Some(m), session_key }) => {
                rec.keys[1] = Some(session_key);
                m
            }
            Ok(_) => return fail(Role::Cs, ProtocolError::ProtocolOrder("unexpected step")),
            Err(e) => return fail(Role::Cs, e),
        };
        // A6: cs -> user
        let Some(bytes) = self.hop(rec, Role::Cs, Role::User, a6) else { return Outcome::Dropped { message: "M_A6" } };
        match user_step(&mut us, &mut entry.wallet, &bytes, urng, &mut rec.user_ops) {
            Ok(Step::Finished { session_key, .. }) => rec.keys[0] = Some(session_key),
            Ok(_) => return fail(Role::User, ProtocolError::ProtocolOrder("unexpected step")),
            Err(e) => return fail(Role::User, e),
        }
        match rec.keys {
            [Some(a), Some(b), Some(c)] if a == b && b == c => Outcome::Success { session_key: a },
            _ => {
                let _ = n;
                Outcome::KeyMismatch
            }
        }
    }

    fn hop(&mut self, rec: &mut SessionRecord, from: Role, to: Role, msg: Message) -> Option<Vec<u8>> {
        rec.emitted += 1;
        self.channel.send(from, to, msg.to_bytes());
        let (_, bytes) = self.channel.deliver(rec.number)?;
        let name = bytes.first().and_then(|t| tag_name(*t)).unwrap_or("unknown");
        rec.messages.push((name, bytes.clone()));
        Some(bytes)
    }

    /// An adversary holding the user's wallet file (but not `β`, `psw`) tries
    /// to start a session. Returns the error and the channel messages emitted.
    pub fn steal_device(&mut self, user: &str, biometric: &[u8], password: &[u8]) -> Result<(Outcome, usize), ScenarioError> {
        let entry = self.users.get(user).ok_or_else(|| ScenarioError::Undefined(user.to_owned()))?;
        let mut stolen = Wallet::from_bytes(&entry.wallet.to_bytes()).map_err(ScenarioError::Setup)?;
        let location = entry.location.clone();
        let before = self.channel.events().len();
        let mut rng = self.rng("adversary-device");
        let mut meter = Meter::new();
        let outcome = match stolen.begin_auth(biometric, password, &location, &mut rng, &mut meter) {
            Ok((_, a1)) => {
                let n = self.next_session_number();
                self.channel.send(Role::User, Role::Cs, a1.to_bytes());
                self.channel.deliver(n);
                Outcome::Success { session_key: [0; 32] }
            }
            Err(e) => Outcome::Failed { role: Role::User, error: e.name() },
        };
        self.put_rng("adversary-device", rng);
        let emitted = self.channel.events().len() - before;
        self.notes.push(format!("outcome steal user={user} result={outcome} emitted={emitted}"));
        Ok((outcome, emitted))
    }

    /// The adversary's linking attempt: counts user-originated wire values
    /// (PDID, hashValue, proof, signature point, N_user, EL, V1) that occur
    /// in both sessions.
    pub fn link(&mut self, a: u32, b: u32) -> Result<Outcome, ScenarioError> {
        let fields = |n: u32| -> Result<Vec<Vec<u8>>, ScenarioError> {
            let rec = self.sessions.get(n as usize - 1).ok_or_else(|| ScenarioError::Undefined(format!("session {n}")))?;
            Ok(user_fields(rec))
        };
        let (fa, fb) = (fields(a)?, fields(b)?);
        let shared_fields = fa.iter().filter(|f| fb.contains(f)).count();
        let outcome = Outcome::Linkage { shared_fields };
        self.notes.push(format!("outcome link sessions={a},{b} result={outcome}"));
        Ok(outcome)
    }

    pub fn delete_key(&mut self, user: &str) -> Result<(), ScenarioError> {
        let entry = self.users.get_mut(user).ok_or_else(|| ScenarioError::Undefined(user.to_owned()))?;
        entry.wallet.delete_private_key();
        self.notes.push(format!("key-deleted user={user}"));
        Ok(())
    }

    pub fn backup(&mut self, user: &str, k: u16, n: u16) -> Result<(), ScenarioError> {
        let params = ShareParams::new(k, n).map_err(|e| ScenarioError::Setup(e.into()))?;
        let key = format!("user:{user}");
        let mut rng = self.rng(&key);
        let entry = self.users.get_mut(user).ok_or_else(|| ScenarioError::Undefined(user.to_owned()))?;
        let custodians: Vec<Custodian> = (0..usize::from(n)).map(custodian).collect();
        let result = key_backup(&entry.wallet, params, &custodians, &mut rng);
        self.put_rng(&key, rng);
        let entry = self.users.get_mut(user).expect("checked above");
        entry.shares = result?;
        self.notes.push(format!("backup user={user} k={k} n={n}"));
        Ok(())
    }

    /// Recovers from the first `count` share files. Returns the outcome label.
    pub fn recover(&mut self, user: &str, count: usize) -> Result<Outcome, ScenarioError> {
        let registered = {
            let entry = self.users.get(user).ok_or_else(|| ScenarioError::Undefined(user.to_owned()))?;
            self.registry.resolve(entry.wallet.did()).map_err(|e| ScenarioError::Setup(e.into()))?.public_key
        };
        let entry = self.users.get_mut(user).expect("checked above");
        let files: Vec<(&[u8], Vec<u8>)> =
            entry.shares.iter().take(count).enumerate().map(|(i, b)| (b.as_slice(), custodian(i).passphrase)).collect();
        let refs: Vec<(&[u8], &[u8])> = files.iter().map(|(b, p)| (*b, p.as_slice())).collect();
        let outcome = match key_recover(&refs, &registered).and_then(|k| entry.wallet.restore_private_key(k)) {
            Ok(()) => Outcome::Success { session_key: [0; 32] },
            Err(e) => Outcome::Failed { role: Role::User, error: e.name() },
        };
        self.notes.push(format!("outcome recover user={user} shares={count} result={outcome}"));
        Ok(outcome)
    }

    /// Renders everything observed so far.
    pub fn transcript(&self) -> Transcript {
        Transcript {
            seed: self.seed,
            events: self.channel.events().to_vec(),
            notes: self.notes.clone(),
            totals: self.totals.clone(),
            expectations: vec![],
        }
    }
}

/// Values the user puts on the wire in one session.
pub fn user_fields(rec: &SessionRecord) -> Vec<Vec<u8>> {
    let mut out = vec![];
    if let Some(Message::A1(a)) = rec.message("M_A1") {
        out.push(a.pdid.to_vec());
    }
    if let Some(Message::A3(p)) = rec.message("M_A3") {
        out.push(p.hash_value.0.to_vec());
        out.push(point_to_bytes(p.proof.commitment()).to_vec());
        out.push(scalar_to_bytes(p.proof.response()).to_vec());
        out.push(point_to_bytes(&p.sig_point).to_vec());
        out.push(p.user_nonce.to_vec());
        out.push(p.enc_location.clone());
        out.push(p.v1.0.to_vec());
    }
    out
}

fn user_step(
    us: &mut UserSession,
    wallet: &mut Wallet,
    bytes: &[u8],
    rng: &mut ChaCha20Rng,
    meter: &mut Meter,
) -> Result<Step, ProtocolError> {
    let msg = Message::from_bytes(bytes)?;
    us.handle(wallet, msg, rng, meter)
}

fn cs_step(s: &mut CsSession, cs: &CsState, bytes: &[u8], rng: &mut ChaCha20Rng, meter: &mut Meter) -> Result<Step, ProtocolError> {
    let msg = Message::from_bytes(bytes)?;
    s.handle(cs, msg, rng, meter)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpectationResult {
    pub line: usize,
    pub expected: String,
    pub actual: String,
    pub passed: bool,
}

/// Machine-readable log of a scenario run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcript {
    pub seed: u64,
    pub events: Vec<String>,
    pub notes: Vec<String>,
    pub totals: BTreeMap<Role, OpCounts>,
    pub expectations: Vec<ExpectationResult>,
}

impl Transcript {
    pub fn passed(&self) -> bool {
        self.expectations.iter().all(|e| e.passed)
    }

    /// One event per line: channel events, then outcomes, per-role counters
    /// and expectation results.
    pub fn render(&self) -> String {
        let mut out = format!("seed {}\n", self.seed);
        for e in self.events.iter().chain(&self.notes) {
            out.push_str(e);
            out.push('\n');
        }
        for (role, c) in &self.totals {
            let _ = writeln!(out, "ops role={role} {c}");
        }
        for e in &self.expectations {
            let _ = writeln!(
                out,
                "expect line={} expected={} actual={} {}",
                e.line,
                e.expected,
                e.actual,
                if e.passed { "PASS" } else { "FAIL" }
            );
        }
        out
    }
}

/// Parsed scenario: seed plus ordered steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub seed: u64,
    pub steps: Vec<(usize, ScenarioStep)>,
}

/// A scenario instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScenarioStep {
    User { name: String, location: Vec<u8>, shadows: usize, biometric: Vec<u8>, password: Vec<u8> },
    Station { name: String, location: Vec<u8> },
    Impersonator { name: String, target: String },
    Rule { session: u32, message: String, action: Action },
    Send { user: String, station: String, shadow: bool },
    Steal { user: String, biometric: Vec<u8>, password: Vec<u8> },
    DeleteKey { user: String },
    Backup { user: String, k: u16, n: u16 },
    Recover { user: String, count: usize },
    Locate { user: String, location: Vec<u8> },
    Link { a: u32, b: u32 },
    Expect { outcome: String, role: Option<Role>, emitted: Option<usize> },
}

fn opts<'a>(tokens: &[&'a str]) -> BTreeMap<&'a str, &'a str> {
    tokens.iter().filter_map(|t| t.split_once('=')).collect()
}

const MESSAGES: [&str; 6] = ["M_A1", "M_A2", "M_A3", "M_A4", "M_A5", "M_A6"];

impl Scenario {
    /// Parses the line-oriented script format documented in `docs/FORMATS.md`.
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut seed = 0;
        let mut steps = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let toks: Vec<&str> = content.split_whitespace().collect();
            let err = |msg: &str| ScenarioError::Parse { line, msg: msg.to_owned() };
            let o = opts(&toks[1..]);
            let positional: Vec<&str> = toks[1..].iter().copied().filter(|t| !t.contains('=')).collect();
            let pos = |i: usize, what: &str| positional.get(i).copied().ok_or_else(|| err(&format!("missing {what}")));
            let session = |i: usize| -> Result<u32, ScenarioError> {
                pos(i, "session number")?.parse().map_err(|_| err("session number must be an integer"))
            };
            let message = |i: usize| -> Result<String, ScenarioError> {
                let m = pos(i, "message name")?;
                if MESSAGES.contains(&m) {
                    Ok(m.to_owned())
                } else {
                    Err(err(&format!("unknown message `{m}`")))
                }
            };
            let step = match toks[0] {
                "SEED" => {
                    seed = pos(0, "seed")?.parse().map_err(|_| err("seed must be an integer"))?;
                    continue;
                }
                "USER" => ScenarioStep::User {
                    name: pos(0, "user name")?.to_owned(),
                    location: o.get("lai").copied().unwrap_or("lai-default").as_bytes().to_vec(),
                    shadows: o
                        .get("shadows")
                        .map(|s| s.parse().map_err(|_| err("shadows must be an integer")))
                        .transpose()?
                        .unwrap_or(DEFAULT_SHADOW_COUNT),
                    biometric: o.get("biometric").copied().unwrap_or("biometric").as_bytes().to_vec(),
                    password: o.get("password").copied().unwrap_or("password").as_bytes().to_vec(),
                },
                "CS" => match o.get("impersonate") {
                    Some(target) => ScenarioStep::Impersonator { name: pos(0, "station name")?.to_owned(), target: (*target).to_owned() },
                    None => ScenarioStep::Station {
                        name: pos(0, "station name")?.to_owned(),
                        location: o.get("lai").copied().unwrap_or("lai-default").as_bytes().to_vec(),
                    },
                },
                "DROP" => ScenarioStep::Rule { session: session(0)?, message: message(1)?, action: Action::Drop },
                "TAMPER" => ScenarioStep::Rule {
                    session: session(0)?,
                    message: message(1)?,
                    action: Action::Tamper(
                        o.get("byte").ok_or_else(|| err("TAMPER needs byte="))?.parse().map_err(|_| err("byte must be an integer"))?,
                    ),
                },
                "REPLAY" => ScenarioStep::Rule {
                    session: session(0)?,
                    message: message(1)?,
                    action: Action::Replay {
                        session: o.get("from").ok_or_else(|| err("REPLAY needs from="))?.parse().map_err(|_| err("from must be an integer"))?,
                    },
                },
                "SUBSTITUTE" => ScenarioStep::Rule {
                    session: session(0)?,
                    message: message(1)?,
                    action: Action::Substitute(
                        hex::decode(o.get("hex").ok_or_else(|| err("SUBSTITUTE needs hex="))?).map_err(|_| err("bad hex"))?,
                    ),
                },
                "FORGE-LAI" => ScenarioStep::Rule {
                    session: session(0)?,
                    message: "M_A4".to_owned(),
                    action: Action::ForgeLocation(o.get("value").ok_or_else(|| err("FORGE-LAI needs value="))?.as_bytes().to_vec()),
                },
                "IMPERSONATE" => match pos(1, "role")? {
                    "user" => ScenarioStep::Rule { session: session(0)?, message: "M_A3".to_owned(), action: Action::ImpersonateUser },
                    _ => return Err(err("IMPERSONATE supports `user`; declare station impersonators with CS impersonate=")),
                },
                "SEND" => ScenarioStep::Send {
                    user: pos(0, "user")?.to_owned(),
                    station: pos(1, "station")?.to_owned(),
                    shadow: positional.get(2) == Some(&"shadow"),
                },
                "STEAL" => ScenarioStep::Steal {
                    user: pos(0, "user")?.to_owned(),
                    biometric: o.get("biometric").copied().unwrap_or("wrong-biometric").as_bytes().to_vec(),
                    password: o.get("password").copied().unwrap_or("password").as_bytes().to_vec(),
                },
                "DELETE-KEY" => ScenarioStep::DeleteKey { user: pos(0, "user")?.to_owned() },
                "BACKUP" => {
                    let (k, n) = pos(1, "k/n")?.split_once('/').ok_or_else(|| err("expected k/n"))?;
                    ScenarioStep::Backup {
                        user: pos(0, "user")?.to_owned(),
                        k: k.parse().map_err(|_| err("bad k"))?,
                        n: n.parse().map_err(|_| err("bad n"))?,
                    }
                }
                "RECOVER" => ScenarioStep::Recover {
                    user: pos(0, "user")?.to_owned(),
                    count: pos(1, "share count")?.parse().map_err(|_| err("bad share count"))?,
                },
                "LOCATE" => ScenarioStep::Locate {
                    user: pos(0, "user")?.to_owned(),
                    location: o.get("lai").ok_or_else(|| err("LOCATE needs lai="))?.as_bytes().to_vec(),
                },
                "LINK" => ScenarioStep::Link { a: session(0)?, b: session(1)? },
                "EXPECT" => ScenarioStep::Expect {
                    outcome: pos(0, "outcome")?.to_owned(),
                    role: o.get("at").map(|r| Role::parse(r).ok_or_else(|| err("unknown role"))).transpose()?,
                    emitted: o.get("emitted").map(|e| e.parse().map_err(|_| err("bad emitted"))).transpose()?,
                },
                other => return Err(err(&format!("unknown verb `{other}`"))),
            };
            steps.push((line, step));
        }
        Ok(Self { seed, steps })
    }
}

/// Runs a scenario from a fresh deployment.
pub fn run_scenario(scenario: &Scenario) -> Result<Transcript, ScenarioError> {
    let mut adversary = Adversary::passive();
    for (_, s) in &scenario.steps {
        if let ScenarioStep::Rule { session, message, action } = s {
            adversary.rule(*session, message, action.clone());
        }
    }
    let mut dep = Deployment::with_adversary(scenario.seed, adversary)?;
    let mut last: Option<(Outcome, Option<usize>)> = None;
    let mut expectations = Vec::new();
    for (line, step) in &scenario.steps {
        match step {
            ScenarioStep::User { name, location, shadows, biometric, password } => {
                dep.add_user(name, biometric, password, location, *shadows)?
            }
            ScenarioStep::Station { name, location } => dep.add_station(name, location)?,
            ScenarioStep::Impersonator { name, target } => dep.add_impersonator(name, target)?,
            ScenarioStep::Rule { .. } => {}
            ScenarioStep::Send { user, station, shadow } => {
                let rec = dep.run_session(user, station, *shadow)?;
                last = Some((rec.outcome.clone(), Some(rec.emitted)));
            }
            ScenarioStep::Steal { user, biometric, password } => {
                let (o, emitted) = dep.steal_device(user, biometric, password)?;
                last = Some((o, Some(emitted)));
            }
            ScenarioStep::DeleteKey { user } => dep.delete_key(user)?,
            ScenarioStep::Backup { user, k, n } => dep.backup(user, *k, *n)?,
            ScenarioStep::Recover { user, count } => last = Some((dep.recover(user, *count)?, None)),
            ScenarioStep::Locate { user, location } => dep.set_user_location(user, location)?,
            ScenarioStep::Link { a, b } => last = Some((dep.link(*a, *b)?, None)),
            ScenarioStep::Expect { outcome, role, emitted } => {
                let (actual, passed) = match &last {
                    None => ("nothing-run".to_owned(), false),
                    Some((o, n)) => {
                        let ok = o.label() == outcome
                            && role.is_none_or(|r| o.role() == Some(r))
                            && emitted.is_none_or(|e| *n == Some(e));
                        let mut a = o.to_string();
                        if let Some(n) = n {
                            let _ = write!(a, " emitted={n}");
                        }
                        (a, ok)
                    }
                };
                let mut expected = outcome.clone();
                if let Some(r) = role {
                    let _ = write!(expected, " at={r}");
                }
                if let Some(e) = emitted {
                    let _ = write!(expected, " emitted={e}");
                }
                expectations.push(ExpectationResult { line: *line, expected, actual, passed });
            }
        }
    }
    let mut t = dep.transcript();
    t.expectations = expectations;
    Ok(t)
}

/// An adversary with the wallet file but not the biometric tries to
/// authenticate; the transcript shows no channel traffic.
pub fn stolen_device_scenario(wallet_file: &[u8], wrong_biometric: &[u8], password: &[u8]) -> Transcript {
    let mut notes = Vec::new();
    let outcome = match Wallet::from_bytes(wallet_file) {
        Ok(mut w) => {
            let mut rng = derive_rng(0, "adversary-device");
            match w.begin_auth(wrong_biometric, password, b"", &mut rng, &mut Meter::new()) {
                Ok(_) => "success".to_owned(),
                Err(e) => e.name().to_owned(),
            }
        }
        Err(e) => e.name().to_owned(),
    };
    notes.push(format!("outcome steal result={outcome} emitted=0"));
    Transcript { seed: 0, events: vec![], notes, totals: BTreeMap::new(), expectations: vec![] }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn happy_path_and_determinism() {
        let script = "SEED 7\nUSER alice lai=r1\nCS cs1 lai=r1\nSEND alice cs1\nEXPECT success\nSEND alice cs1\nEXPECT success\n";
        let sc = Scenario::parse(script).unwrap();
        let a = run_scenario(&sc).unwrap();
        let b = run_scenario(&sc).unwrap();
        assert!(a.passed(), "{}", a.render());
        assert_eq!(a.render(), b.render());
        assert_eq!(a.events.len(), 12);
    }

    #[test]
    fn pass_all_policy_is_non_interfering() {
        let mut explicit = Adversary::passive();
        for m in MESSAGES {
            explicit.rule(1, m, Action::Pass);
        }
        let run = |adv| {
            let mut d = Deployment::with_adversary(3, adv).unwrap();
            d.add_user("u", b"b", b"p", b"r", 2).unwrap();
            d.add_station("c", b"r").unwrap();
            d.run_session("u", "c", false).unwrap();
            d.transcript().render()
        };
        assert_eq!(run(Adversary::passive()), run(explicit));
    }

    #[test]
    fn capture_copies_without_altering_delivery() {
        let mut d = Deployment::new(4).unwrap();
        d.add_user("u", b"b", b"p", b"r", 2).unwrap();
        d.add_station("c", b"r").unwrap();
        let rec = d.run_session("u", "c", false).unwrap().clone();
        assert!(rec.outcome.is_success());
        let caught = adversary_capture(&d.channel, &CaptureFilter { session: Some(1), message: Some("M_A3".into()) });
        assert_eq!(caught.len(), 1);
        assert_eq!(caught[0].bytes, rec.messages[2].1);
        assert!(adversary_capture(&d.channel, &CaptureFilter { session: Some(9), message: None }).is_empty());
    }

    #[test]
    fn undefined_participant_is_a_config_error() {
        let sc = Scenario::parse("SEED 1\nUSER a\nSEND a nowhere\n").unwrap();
        assert!(matches!(run_scenario(&sc), Err(ScenarioError::Undefined(n)) if n == "nowhere"));
        assert!(matches!(Scenario::parse("FLY away"), Err(ScenarioError::Parse { line: 1, .. })));
        assert!(matches!(Scenario::parse("DROP 1 M_A9"), Err(ScenarioError::Parse { .. })));
    }

    #[test]
    fn stolen_wallet_file_emits_nothing() {
        let mut d = Deployment::new(5).unwrap();
        d.add_user("u", b"bio", b"pw", b"r", 2).unwrap();
        let t = stolen_device_scenario(&d.wallet("u").unwrap().to_bytes(), b"not-bio", b"pw");
        assert!(t.events.is_empty());
        assert!(t.notes[0].contains("local-auth-error"));
    }
}
