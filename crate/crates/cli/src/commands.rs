use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use evcharge_core::accounting::{self, Side, HASH_TOLERANCE};
use evcharge_core::crypto::KeyPair;
use evcharge_core::identity::{create_did, Registry, DID_METHOD};
use evcharge_core::protocol::{
    key_backup, key_recover, Custodian, CsState, Enrollment, GovIssuer, OpCounts, ProtocolError, Usp, Wallet,
};
use evcharge_core::sharing::ShareParams;
use evcharge_core::simnet::{run_scenario, Scenario, ScenarioError};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::driver::{self, SessionRun, UserInput};
use crate::{
    AttackArgs, AttackType, AuthenticateArgs, BackupArgs, BenchArgs, DeleteKeyArgs, RecoverArgs, RegisterArgs, RoleArg,
    ScenarioArgs, StateArgs,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    State { path: PathBuf, source: ProtocolError },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("scenario: {0}")]
    Scenario(#[from] ScenarioError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::Scenario(ScenarioError::Parse { .. } | ScenarioError::Undefined(_)) => 2,
            Self::Scenario(ScenarioError::Setup(_)) => 1,
            Self::State { .. } | Self::Io(_) => 3,
        }
    }

    /// Value of `outcome=` in the RESULT line.
    pub fn class(&self) -> &'static str {
        match self {
            Self::Usage(_) => "usage-error",
            Self::State { source, .. } => source.name(),
            Self::Io(_) => "storage-error",
            Self::Scenario(ScenarioError::Setup(e)) => e.name(),
            Self::Scenario(_) => "config-error",
        }
    }
}

type CmdResult = Result<bool, CliError>;

fn state_err(path: &Path) -> impl FnOnce(ProtocolError) -> CliError + '_ {
    move |source| CliError::State { path: path.to_path_buf(), source }
}

fn rng(seed: Option<u64>) -> ChaCha20Rng {
    match seed {
        Some(s) => ChaCha20Rng::seed_from_u64(s),
        None => ChaCha20Rng::from_entropy(),
    }
}

fn require<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T, CliError> {
    v.as_ref().ok_or_else(|| CliError::Usage(format!("missing required flag --{flag}")))
}

fn usp_db(state: &StateArgs) -> Result<&Path, CliError> {
    require(&state.usp_db, "usp-db").map(PathBuf::as_path)
}

fn registry_path(state: &StateArgs) -> Result<PathBuf, CliError> {
    match (&state.registry, &state.usp_db) {
        (Some(r), _) => Ok(r.clone()),
        (None, Some(db)) => {
            let mut p = db.clone().into_os_string();
            p.push(".registry");
            Ok(p.into())
        }
        (None, None) => Err(CliError::Usage("need --registry or --usp-db".into())),
    }
}

fn open_registry(state: &StateArgs) -> Result<(Registry, PathBuf), CliError> {
    let path = registry_path(state)?;
    let reg = Registry::open(&path).map_err(|e| CliError::State { path: path.clone(), source: e.into() })?;
    Ok((reg, path))
}

fn load_usp(path: &Path) -> Result<Usp, CliError> {
    Usp::load(path).map_err(state_err(path))
}

fn parse_shares(spec: &str) -> Result<ShareParams, CliError> {
    let (k, n) = spec.split_once('/').ok_or_else(|| CliError::Usage(format!("--shares expects k/n, got `{spec}`")))?;
    let parse = |s: &str| s.parse::<u16>().map_err(|_| CliError::Usage(format!("--shares: `{s}` is not a number")));
    ShareParams::new(parse(k)?, parse(n)?).map_err(|e| CliError::Usage(format!("--shares: {e}")))
}

fn result_line(fields: &[(&str, String)]) -> String {
    let mut out = String::from("RESULT");
    for (k, v) in fields {
        let _ = write!(out, " {k}={v}");
    }
    out
}

pub fn cmd_register(a: &RegisterArgs) -> CmdResult {
    let mut rng = rng(a.state.seed);
    let db = usp_db(&a.state)?;
    match a.role {
        RoleArg::Usp => {
            if db.exists() {
                return Err(CliError::Usage(format!("{} already exists", db.display())));
            }
            let (mut registry, reg_path) = open_registry(&a.state)?;
            let publish = GovIssuer::builtin().publish(&mut registry);
            if let Err(e) = publish {
                if !matches!(e, ProtocolError::AlreadyRegistered | ProtocolError::Identity(_)) {
                    return Err(state_err(&reg_path)(e));
                }
            }
            let mut usp = Usp::create(&mut registry, &mut rng).map_err(state_err(&reg_path))?;
            usp.persist_to(db).map_err(state_err(db))?;
            println!("USP registered as {}", usp.did());
            println!("{}", result_line(&[("command", "register".into()), ("role", "usp".into()), ("outcome", "success".into())]));
            Ok(true)
        }
        RoleArg::Cs => {
            let out = require(&a.cs_state, "cs-state")?;
            let lai = require(&a.lai, "lai")?;
            let (mut registry, _) = open_registry(&a.state)?;
            let usp = load_usp(db)?;
            match CsState::register(&usp, lai.as_bytes(), &mut registry, &mut rng) {
                Ok(cs) => {
                    cs.save(out).map_err(state_err(out))?;
                    println!("station registered as {} at {lai}", cs.did());
                    println!(
                        "{}",
                        result_line(&[("command", "register".into()), ("role", "cs".into()), ("outcome", "success".into())])
                    );
                    Ok(true)
                }
                Err(e) => protocol_failure("register", "cs", &e),
            }
        }
        RoleArg::User => {
            let out = require(&a.wallet, "wallet")?;
            let bio = require(&a.biometric, "biometric")?;
            let psw = require(&a.password, "password")?;
            let (mut registry, reg_path) = open_registry(&a.state)?;
            let usp = load_usp(db)?;
            let keys = KeyPair::generate(&mut rng);
            let did = create_did(DID_METHOD, keys.public(), &mut registry, &mut rng)
                .map_err(|e| CliError::State { path: reg_path.clone(), source: e.into() })?;
            let id_vc = GovIssuer::builtin().issue_identity(&did, keys.public(), 0, &mut rng);
            let enrolled = Enrollment::start(did, keys, id_vc, &registry, a.shadows, &mut rng).and_then(|(en, rev1)| {
                let rev2 = usp.handle_registration(rev1, &registry, &mut rng)?;
                en.complete(rev2, bio.as_bytes(), psw.as_bytes(), &registry)
            });
            match enrolled {
                Ok(wallet) => {
                    wallet.save(out).map_err(state_err(out))?;
                    println!("user registered as {} with {} shadow identities", wallet.did(), wallet.shadows().len());
                    println!(
                        "{}",
                        result_line(&[("command", "register".into()), ("role", "user".into()), ("outcome", "success".into())])
                    );
                    Ok(true)
                }
                Err(e) => protocol_failure("register", "user", &e),
            }
        }
    }
}

fn protocol_failure(command: &str, role: &str, e: &ProtocolError) -> CmdResult {
    println!("{command} failed at {role}: {e}");
    println!("{}", result_line(&[("command", command.into()), ("outcome", e.name().into()), ("at", role.into())]));
    Ok(false)
}

pub fn cmd_authenticate(a: &AuthenticateArgs) -> CmdResult {
    let db = usp_db(&a.state)?;
    let usp = load_usp(db)?;
    let cs = CsState::load(&a.cs_state).map_err(state_err(&a.cs_state))?;
    let mut wallet = Wallet::load(&a.wallet).map_err(state_err(&a.wallet))?;
    let before = *wallet.pdid();
    let location = a.lai.clone().map_or_else(|| cs.location().to_vec(), String::into_bytes);
    let input = UserInput { biometric: a.biometric.as_bytes(), password: a.password.as_bytes(), location: &location, shadow: a.shadow };
    let mut rng = rng(a.state.seed);
    let run = driver::run(&mut wallet, &input, &cs, &usp, &mut rng);
    wallet.save(&a.wallet).map_err(state_err(&a.wallet))?;
    let rotated = *wallet.pdid() != before;
    let sk_match = run.keys_agree();
    let mut fields = vec![("command", "authenticate".to_owned())];
    let ok = match &run.result {
        Ok(_) => {
            println!("authenticated at {}; session key agreed by user, station and USP", cs.did());
            fields.push(("outcome", "success".into()));
            sk_match
        }
        Err((role, e)) => {
            println!("authentication failed at {role}: {e}");
            fields.push(("outcome", e.name().into()));
            fields.push(("at", role.as_str().into()));
            false
        }
    };
    fields.push(("sk_match", sk_match.to_string()));
    fields.push(("pdid_rotated", rotated.to_string()));
    fields.push(("shadows_left", wallet.unused_shadows().to_string()));
    println!("{}", result_line(&fields));
    Ok(ok)
}

fn attack_script(kind: AttackType) -> (&'static str, &'static str) {
    match kind {
        AttackType::ReplayMA3 => ("replay-m-a3", include_str!("../../../scenarios/replay-m-a3.scn")),
        AttackType::ReplayMA4 => ("replay-m-a4", include_str!("../../../scenarios/replay-m-a4.scn")),
        AttackType::ReplayMA5 => ("replay-m-a5", include_str!("../../../scenarios/replay-m-a5.scn")),
        AttackType::ReplayMA6 => ("replay-m-a6", include_str!("../../../scenarios/replay-m-a6.scn")),
        AttackType::ForgeLocation => ("forge-location", include_str!("../../../scenarios/forge-location-cs.scn")),
        AttackType::ForgeLocationUser => ("forge-location-user", include_str!("../../../scenarios/forge-location-user.scn")),
        AttackType::ImpersonateUser => ("impersonate-user", include_str!("../../../scenarios/impersonate-user.scn")),
        AttackType::ImpersonateCs => ("impersonate-cs", include_str!("../../../scenarios/impersonate-cs.scn")),
        AttackType::StolenDevice => ("stolen-device", include_str!("../../../scenarios/stolen-device.scn")),
        AttackType::TamperV2 => ("tamper-v2", include_str!("../../../scenarios/tamper-v2.scn")),
        AttackType::TamperDelivery => ("tamper-delivery", include_str!("../../../scenarios/tamper-delivery.scn")),
        AttackType::Privacy => ("privacy", include_str!("../../../scenarios/privacy.scn")),
        AttackType::Desync => ("desync", include_str!("../../../scenarios/desync.scn")),
    }
}

fn first_token(s: &str) -> &str {
    s.split_whitespace().next().unwrap_or("")
}

fn role_token(s: &str) -> Option<&str> {
    s.split_whitespace().find_map(|t| t.strip_prefix("at="))
}

pub fn cmd_attack(a: &AttackArgs) -> CmdResult {
    let (name, text) = attack_script(a.kind);
    let mut scenario = Scenario::parse(text)?;
    if let Some(seed) = a.seed {
        scenario.seed = seed;
    }
    let t = run_scenario(&scenario)?;
    // the attack's own expectation is the first one that is not plain success
    let probe = t.expectations.iter().find(|e| first_token(&e.expected) != "success").or(t.expectations.first());
    let mut fields = vec![("command", "attack".to_owned()), ("type", name.to_owned())];
    if let Some(e) = probe {
        println!("attack {name}: expected {}, observed {}", e.expected, e.actual);
        fields.push(("outcome", first_token(&e.actual).to_owned()));
        if let Some(r) = role_token(&e.actual) {
            fields.push(("at", r.to_owned()));
        }
        fields.push(("expected", first_token(&e.expected).to_owned()));
    }
    fields.push(("passed", t.passed().to_string()));
    println!("{}", result_line(&fields));
    Ok(t.passed())
}

pub fn cmd_backup(a: &BackupArgs) -> CmdResult {
    let params = parse_shares(&a.shares)?;
    if a.passphrases.len() != usize::from(params.count()) {
        return Err(CliError::Usage(format!(
            "{} shares need {} --passphrase flags, got {}",
            params.count(),
            params.count(),
            a.passphrases.len()
        )));
    }
    let wallet = Wallet::load(&a.wallet).map_err(state_err(&a.wallet))?;
    let custodians: Vec<Custodian> = a
        .passphrases
        .iter()
        .enumerate()
        .map(|(i, p)| Custodian { label: format!("custodian-{}", i + 1), passphrase: p.clone().into_bytes() })
        .collect();
    let mut rng = rng(a.seed);
    let files = match key_backup(&wallet, params, &custodians, &mut rng) {
        Ok(f) => f,
        Err(e) => return protocol_failure("backup", "user", &e),
    };
    fs::create_dir_all(&a.out_dir)?;
    for (i, bytes) in files.iter().enumerate() {
        let path = a.out_dir.join(format!("share-{}.evsh", i + 1));
        fs::write(&path, bytes)?;
        println!("wrote {}", path.display());
    }
    println!(
        "{}",
        result_line(&[
            ("command", "backup".into()),
            ("outcome", "success".into()),
            ("k", params.threshold().to_string()),
            ("n", params.count().to_string()),
        ])
    );
    Ok(true)
}

pub fn cmd_recover(a: &RecoverArgs) -> CmdResult {
    if a.shares.len() != a.passphrases.len() {
        return Err(CliError::Usage("each --share needs a matching --passphrase".into()));
    }
    let mut wallet = Wallet::load(&a.wallet).map_err(state_err(&a.wallet))?;
    let (registry, reg_path) = open_registry(&a.state)?;
    let registered = registry
        .resolve(wallet.did())
        .map_err(|e| CliError::State { path: reg_path, source: e.into() })?
        .public_key;
    let mut blobs = Vec::with_capacity(a.shares.len());
    for p in &a.shares {
        blobs.push(fs::read(p)?);
    }
    let files: Vec<(&[u8], &[u8])> = blobs.iter().zip(&a.passphrases).map(|(b, p)| (b.as_slice(), p.as_bytes())).collect();
    match key_recover(&files, &registered).and_then(|k| wallet.restore_private_key(k)) {
        Ok(()) => {
            wallet.save(&a.wallet).map_err(state_err(&a.wallet))?;
            println!("private key restored for {}", wallet.did());
            println!("{}", result_line(&[("command", "recover".into()), ("outcome", "success".into()), ("restored", "true".into())]));
            Ok(true)
        }
        Err(e) => protocol_failure("recover", "user", &e),
    }
}

pub fn cmd_delete_key(a: &DeleteKeyArgs) -> CmdResult {
    let mut wallet = Wallet::load(&a.wallet).map_err(state_err(&a.wallet))?;
    wallet.delete_private_key();
    wallet.save(&a.wallet).map_err(state_err(&a.wallet))?;
    println!("private key deleted from {}", a.wallet.display());
    println!("{}", result_line(&[("command", "delete-key".into()), ("outcome", "success".into())]));
    Ok(true)
}

pub fn cmd_scenario(a: &ScenarioArgs) -> CmdResult {
    let text = fs::read_to_string(&a.file)?;
    let mut scenario = Scenario::parse(&text)?;
    if let Some(seed) = a.seed {
        scenario.seed = seed;
    }
    let t = run_scenario(&scenario)?;
    let rendered = t.render();
    match &a.transcript {
        Some(p) => {
            fs::write(p, &rendered)?;
            println!("transcript written to {}", p.display());
        }
        None => print!("{rendered}"),
    }
    let passed = t.expectations.iter().filter(|e| e.passed).count();
    println!(
        "{}",
        result_line(&[
            ("command", "scenario".into()),
            ("seed", scenario.seed.to_string()),
            ("expectations", t.expectations.len().to_string()),
            ("passed", passed.to_string()),
            ("outcome", if t.passed() { "pass" } else { "fail" }.into()),
        ])
    );
    Ok(t.passed())
}

struct BenchSetup {
    usp: Usp,
    cs: CsState,
    wallet: Wallet,
    registration: Duration,
}

const BENCH_BIO: &[u8] = b"bench-biometric";
const BENCH_PSW: &[u8] = b"bench-password";
const BENCH_LAI: &[u8] = b"bench-area";

fn bench_setup(rng: &mut ChaCha20Rng) -> Result<BenchSetup, ProtocolError> {
    let start = Instant::now();
    let mut registry = Registry::in_memory();
    let gov = GovIssuer::builtin();
    gov.publish(&mut registry)?;
    let usp = Usp::create(&mut registry, rng)?;
    let cs = CsState::register(&usp, BENCH_LAI, &mut registry, rng)?;
    let keys = KeyPair::generate(rng);
    let did = create_did(DID_METHOD, keys.public(), &mut registry, rng)?;
    let id_vc = gov.issue_identity(&did, keys.public(), 0, rng);
    let (en, rev1) = Enrollment::start(did, keys, id_vc, &registry, 1, rng)?;
    let rev2 = usp.handle_registration(rev1, &registry, rng)?;
    let wallet = en.complete(rev2, BENCH_BIO, BENCH_PSW, &registry)?;
    Ok(BenchSetup { usp, cs, wallet, registration: start.elapsed() })
}

fn side_fields(prefix: &str, s: &Side) -> Vec<(String, String)> {
    vec![
        (format!("{prefix}_hash"), s.hash.to_string()),
        (format!("{prefix}_sign"), s.sign.to_string()),
        (format!("{prefix}_verify"), s.verify.to_string()),
        (format!("{prefix}_measured"), s.formula().replace(' ', "")),
        (format!("{prefix}_expected"), s.expected.formula.replace(' ', "")),
        (format!("{prefix}_hash_delta"), format!("{:+}", s.hash_delta())),
        (format!("{prefix}_within_tolerance"), s.passed().to_string()),
    ]
}

pub fn cmd_bench(a: &BenchArgs) -> CmdResult {
    if a.iterations == 0 {
        return Err(CliError::Usage("--iterations must be at least 1".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(a.seed);
    let mut setup = match bench_setup(&mut rng) {
        Ok(s) => s,
        Err(e) => return protocol_failure("bench", "setup", &e),
    };
    let input = UserInput { biometric: BENCH_BIO, password: BENCH_PSW, location: BENCH_LAI, shadow: false };
    let mut first: Option<SessionRun> = None;
    let mut stable = true;
    let mut agreed = 0u32;
    let mut times = [Duration::ZERO; 3];
    let counts = |r: &SessionRun| -> [OpCounts; 3] { [r.user.meter.counts(), r.cs.meter.counts(), r.usp.meter.counts()] };
    for _ in 0..a.iterations {
        let run = driver::run(&mut setup.wallet, &input, &setup.cs, &setup.usp, &mut rng);
        agreed += u32::from(run.keys_agree());
        times[0] += run.user.time;
        times[1] += run.cs.time;
        times[2] += run.usp.time;
        match &first {
            None => first = Some(run),
            Some(f) => stable &= counts(f) == counts(&run),
        }
    }
    let first = first.expect("at least one iteration");
    let report = accounting::account(&first.user.meter, &first.cs.meter, &first.usp.meter);
    let n = f64::from(a.iterations);
    let ms = |d: Duration| d.as_secs_f64() * 1000.0 / n;

    println!("operation counts per authentication (ground truth; hash tolerance ±{HASH_TOLERANCE})");
    println!();
    print!("{report}");
    println!();
    println!("wall clock (informational; reference figures are hardware-specific)");
    println!("| phase | mean ms | reference ms |");
    println!("|---|---|---|");
    println!("| registration (USP, CS and one user, once) | {:.3} | n/a |", setup.registration.as_secs_f64() * 1000.0);
    println!("| authentication, user device | {:.3} | {:.2} |", ms(times[0]), report.user.expected.millis);
    println!("| authentication, CS + USP | {:.3} | {:.2} |", ms(times[1] + times[2]), report.server.expected.millis);
    println!();

    let mut fields: Vec<(String, String)> = vec![
        ("command".into(), "bench".into()),
        ("iterations".into(), a.iterations.to_string()),
        ("sessions_ok".into(), agreed.to_string()),
        ("counts_stable".into(), stable.to_string()),
    ];
    fields.extend(side_fields("user", &report.user));
    fields.extend(side_fields("server", &report.server));
    let refs: Vec<(&str, String)> = fields.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
    println!("{}", result_line(&refs));
    Ok(agreed == a.iterations && stable)
}
