use evcharge_core::crypto::KeyPair;
use evcharge_core::identity::{create_did, Registry, DID_METHOD};
use evcharge_core::protocol::recovery::Custodian;
use evcharge_core::protocol::{
    key_backup, key_recover, CsState, Enrollment, GovIssuer, Message, Meter, ProtocolError, Secret32, Step, Usp, Wallet,
};
use evcharge_core::sharing::ShareParams;
use evcharge_core::simnet::{Action, Adversary, Deployment, Outcome, Role};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

const BIO: &[u8] = b"biometric";
const PSW: &[u8] = b"password";
const LAI: &[u8] = b"region-7";

fn deployment(seed: u64, adversary: Adversary, shadows: usize) -> Deployment {
    let mut d = Deployment::with_adversary(seed, adversary).unwrap();
    d.add_user("alice", BIO, PSW, LAI, shadows).unwrap();
    d.add_station("cs1", LAI).unwrap();
    d
}

fn outcome(d: &mut Deployment, shadow: bool) -> Outcome {
    d.run_session("alice", "cs1", shadow).unwrap().outcome.clone()
}

fn failed(role: Role, error: &'static str) -> Outcome {
    Outcome::Failed { role, error }
}

#[test]
fn sessions_agree_and_rotate_pseudonyms() {
    let mut d = deployment(1, Adversary::passive(), 3);
    let did = d.wallet("alice").unwrap().did().clone();
    let mut seen_pdids = vec![];
    let mut seen_keys = vec![];
    for _ in 0..4 {
        let before = *d.wallet("alice").unwrap().pdid();
        let rec = d.run_session("alice", "cs1", false).unwrap().clone();
        let Outcome::Success { session_key } = rec.outcome else { panic!("{}", rec.outcome) };
        assert_eq!(rec.keys, [Some(session_key); 3]);
        let Some(Message::A1(a1)) = rec.message("M_A1") else { panic!() };
        assert_eq!(a1.pdid, before);
        seen_pdids.push(before);
        seen_keys.push(session_key);
        let snap = d.usp.user_snapshot(&did).unwrap();
        assert_eq!(snap.current_pdid, *d.wallet("alice").unwrap().pdid());
        assert_eq!(snap.expected_hash_value, d.wallet("alice").unwrap().credential().hash_value);
        assert!(!d.wallet("alice").unwrap().resync_pending());
    }
    seen_pdids.sort();
    seen_pdids.dedup();
    assert_eq!(seen_pdids.len(), 4);
    seen_keys.sort();
    seen_keys.dedup();
    assert_eq!(seen_keys.len(), 4);
    assert_eq!(d.usp.user_snapshot(&did).unwrap().retired, 4);
    assert!(d.wallet("alice").unwrap().session_public().is_some());
}

#[test]
fn wrong_password_unwraps_a_different_key_and_is_gated() {
    let mut d = deployment(2, Adversary::passive(), 2);
    let w = d.wallet("alice").unwrap();
    let did = w.did().clone();
    let k = d.usp.user_snapshot(&did).unwrap().shared_key;
    assert_eq!(w.unwrap_shared_key(BIO, PSW), k);
    assert_ne!(w.unwrap_shared_key(BIO, b"passw0rd"), k);
    let (o, emitted) = d.steal_device("alice", BIO, b"passw0rd").unwrap();
    assert_eq!(o, failed(Role::User, "local-auth-error"));
    assert_eq!(emitted, 0);
}

#[test]
fn replayed_messages_are_rejected_by_name() {
    let cases = [
        ("M_A1", failed(Role::Usp, "replay-error")),
        ("M_A3", failed(Role::Usp, "replay-error")),
        ("M_A4", failed(Role::Usp, "replay-error")),
        ("M_A5", failed(Role::Cs, "integrity-error")),
        ("M_A6", failed(Role::User, "integrity-error")),
    ];
    for (msg, want) in cases {
        let mut adv = Adversary::passive();
        adv.rule(2, msg, Action::Replay { session: 1 });
        let mut d = deployment(3, adv, 2);
        assert!(outcome(&mut d, false).is_success());
        assert_eq!(outcome(&mut d, false), want, "replay of {msg}");
    }
}

#[test]
fn dropped_delivery_recovers_through_a_shadow_identity() {
    let mut adv = Adversary::passive();
    adv.rule(1, "M_A6", Action::Drop);
    let mut d = deployment(4, adv, 2);
    let did = d.wallet("alice").unwrap().did().clone();
    assert_eq!(outcome(&mut d, false), Outcome::Dropped { message: "M_A6" });
    assert!(d.wallet("alice").unwrap().resync_pending());
    assert_eq!(d.usp.user_snapshot(&did).unwrap().shadows.len(), 2);

    let shadow = d.wallet("alice").unwrap().shadows()[0].id;
    let rec = d.run_session("alice", "cs1", false).unwrap().clone();
    assert!(rec.outcome.is_success(), "{}", rec.outcome);
    let Some(Message::A1(a1)) = rec.message("M_A1") else { panic!() };
    assert_eq!(a1.pdid, shadow);
    assert!(d.wallet("alice").unwrap().shadows().iter().all(|s| s.id != shadow));
    assert_eq!(d.usp.user_snapshot(&did).unwrap().shadows.len(), 1);
    assert_eq!(d.wallet("alice").unwrap().unused_shadows(), 1);

    // back in sync on the normal chain
    let rec = d.run_session("alice", "cs1", false).unwrap().clone();
    assert!(rec.outcome.is_success());
    assert_eq!(d.usp.user_snapshot(&did).unwrap().current_pdid, *d.wallet("alice").unwrap().pdid());
}

#[test]
fn a_consumed_shadow_is_unknown_afterwards() {
    let mut adv = Adversary::passive();
    adv.rule(3, "M_A4", Action::Replay { session: 2 });
    let mut d = deployment(5, adv, 2);
    assert!(outcome(&mut d, false).is_success());
    assert!(outcome(&mut d, true).is_success());
    assert_eq!(outcome(&mut d, false), failed(Role::Usp, "identity-error"));
}

#[test]
fn exhausted_shadows_require_re_registration() {
    let mut adv = Adversary::passive();
    adv.rule(1, "M_A6", Action::Drop);
    adv.rule(2, "M_A6", Action::Drop);
    let mut d = deployment(6, adv, 1);
    assert!(matches!(outcome(&mut d, false), Outcome::Dropped { .. }));
    assert!(matches!(outcome(&mut d, false), Outcome::Dropped { .. }));
    let rec = d.run_session("alice", "cs1", false).unwrap().clone();
    assert_eq!(rec.outcome, failed(Role::User, "re-registration-required"));
    assert_eq!(rec.emitted, 0);
}

#[test]
fn forged_station_location_and_remote_user_are_detected() {
    let mut adv = Adversary::passive();
    adv.rule(1, "M_A4", Action::ForgeLocation(b"region-9".to_vec()));
    let mut d = deployment(7, adv, 2);
    assert_eq!(outcome(&mut d, false), failed(Role::Usp, "location-forgery-error"));

    let mut d = deployment(7, Adversary::passive(), 2);
    d.set_user_location("alice", b"region-9").unwrap();
    assert_eq!(outcome(&mut d, false), failed(Role::Usp, "location-forgery-error"));
}

#[test]
fn impersonation_without_shared_keys_fails_integrity() {
    let mut adv = Adversary::passive();
    adv.rule(1, "M_A3", Action::ImpersonateUser);
    let mut d = deployment(8, adv, 2);
    assert_eq!(outcome(&mut d, false), failed(Role::Usp, "integrity-error"));

    let mut d = deployment(8, Adversary::passive(), 2);
    d.add_impersonator("evil", "cs1").unwrap();
    let rec = d.run_session("alice", "evil", false).unwrap();
    assert_eq!(rec.outcome, failed(Role::Usp, "integrity-error"));
}

#[test]
fn out_of_order_messages_are_protocol_errors() {
    let mut d = deployment(9, Adversary::passive(), 2);
    let rec = d.run_session("alice", "cs1", false).unwrap().clone();
    let cs = d.station("cs1").unwrap().clone();
    let a3 = rec.message("M_A3").unwrap();
    assert!(matches!(cs.respond(a3.clone()), Err(ProtocolError::ProtocolOrder(_))));

    let a1 = rec.message("M_A1").unwrap();
    let (mut session, _) = cs.respond(a1).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    let a5 = rec.message("M_A5").unwrap();
    let err = session.handle(&cs, a5, &mut rng, &mut Meter::new()).unwrap_err();
    assert_eq!(err.name(), "protocol-order-error");

    let err = d.usp.authorize(a3, &mut rng, &mut Meter::new()).unwrap_err();
    assert_eq!(err.name(), "protocol-order-error");
}

#[test]
fn state_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let mut d = deployment(10, Adversary::passive(), 2);
    d.usp.persist_to(dir.path().join("usp.db")).unwrap();
    assert!(outcome(&mut d, false).is_success());

    let wpath = dir.path().join("wallet.bin");
    let cpath = dir.path().join("cs.bin");
    d.wallet("alice").unwrap().save(&wpath).unwrap();
    d.station("cs1").unwrap().save(&cpath).unwrap();
    let wallet = Wallet::load(&wpath).unwrap();
    assert_eq!(wallet.to_bytes(), d.wallet("alice").unwrap().to_bytes());
    let cs = CsState::load(&cpath).unwrap();
    assert_eq!(cs.to_bytes(), d.station("cs1").unwrap().to_bytes());
    let usp = Usp::load(&dir.path().join("usp.db")).unwrap();
    assert_eq!(usp.to_bytes(), d.usp.to_bytes());

    // a reloaded USP continues the same pseudonym chain
    d.usp = usp;
    assert!(outcome(&mut d, false).is_success());

    let mut bytes = std::fs::read(&wpath).unwrap();
    bytes[10] ^= 0x40;
    std::fs::write(&wpath, &bytes).unwrap();
    assert_eq!(Wallet::load(&wpath).unwrap_err().name(), "state-integrity-error");
}

fn custodians(n: usize, tag: &str) -> Vec<Custodian> {
    (0..n).map(|i| Custodian { label: format!("{tag}-{i}"), passphrase: format!("{tag}-pass-{i}").into_bytes() }).collect()
}

#[test]
fn key_backup_and_recovery() {
    let mut d = deployment(11, Adversary::passive(), 2);
    d.add_user("bob", b"bob-bio", b"bob-psw", LAI, 2).unwrap();
    let params = ShareParams::new(3, 5).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let alice_c = custodians(5, "a");
    let bob_c = custodians(5, "b");
    let alice_files = key_backup(d.wallet("alice").unwrap(), params, &alice_c, &mut rng).unwrap();
    let bob_files = key_backup(d.wallet("bob").unwrap(), params, &bob_c, &mut rng).unwrap();
    let alice_pub = *d.wallet("alice").unwrap().public_key();

    d.wallet_mut("alice").unwrap().delete_private_key();
    assert_eq!(outcome(&mut d, false), failed(Role::User, "key-missing"));

    let open = |files: &[Vec<u8>], cs: &[Custodian], idx: &[usize]| -> Vec<(Vec<u8>, Vec<u8>)> {
        idx.iter().map(|&i| (files[i].clone(), cs[i].passphrase.clone())).collect()
    };
    let try_recover = |pairs: &[(Vec<u8>, Vec<u8>)]| {
        let refs: Vec<(&[u8], &[u8])> = pairs.iter().map(|(a, b)| (a.as_slice(), b.as_slice())).collect();
        key_recover(&refs, &alice_pub)
    };

    assert_eq!(try_recover(&open(&alice_files, &alice_c, &[0, 4])).unwrap_err().name(), "sharing-error");

    let mut mixed = open(&alice_files, &alice_c, &[0, 1]);
    mixed.extend(open(&bob_files, &bob_c, &[2]));
    assert_eq!(try_recover(&mixed).unwrap_err().name(), "corrupt-share-error");

    let mut flipped = open(&alice_files, &alice_c, &[1, 2, 3]);
    flipped[1].0[12] ^= 0x01;
    assert_eq!(try_recover(&flipped).unwrap_err().name(), "share-decrypt-error");

    let mut wrong_pass = open(&alice_files, &alice_c, &[1, 2, 3]);
    wrong_pass[0].1 = b"guess".to_vec();
    assert_eq!(try_recover(&wrong_pass).unwrap_err().name(), "share-decrypt-error");

    let key = try_recover(&open(&alice_files, &alice_c, &[4, 1, 3])).unwrap();
    d.wallet_mut("alice").unwrap().restore_private_key(key).unwrap();
    assert!(outcome(&mut d, false).is_success());
}

struct Party {
    wallet: Wallet,
    cs: CsState,
    rng: ChaCha20Rng,
}

fn direct_session(usp: &Usp, p: &mut Party) -> Result<[Secret32; 3], ProtocolError> {
    let mut m = Meter::new();
    let (mut us, a1) = p.wallet.begin_auth(BIO, PSW, LAI, &mut p.rng, &mut m)?;
    let (mut css, a2) = p.cs.respond(a1)?;
    let Step::Send(a3) = us.handle(&mut p.wallet, a2, &mut p.rng, &mut m)? else { panic!() };
    let Step::Send(a4) = css.handle(&p.cs, a3, &mut p.rng, &mut m)? else { panic!() };
    let auth = usp.authorize(a4, &mut p.rng, &mut m)?;
    let Step::Finished { send: Some(a6), session_key: k_cs } = css.handle(&p.cs, auth.message, &mut p.rng, &mut m)? else {
        panic!()
    };
    let Step::Finished { session_key: k_user, .. } = us.handle(&mut p.wallet, a6, &mut p.rng, &mut m)? else { panic!() };
    Ok([k_user, k_cs, auth.session_key])
}

#[test]
fn concurrent_users_share_one_provider() {
    let mut rng = ChaCha20Rng::seed_from_u64(12);
    let mut registry = Registry::in_memory();
    let gov = GovIssuer::builtin();
    gov.publish(&mut registry).unwrap();
    let usp = Usp::create(&mut registry, &mut rng).unwrap();
    let mut parties = vec![];
    for i in 0..6u64 {
        let keys = KeyPair::generate(&mut rng);
        let did = create_did(DID_METHOD, keys.public(), &mut registry, &mut rng).unwrap();
        let id_vc = gov.issue_identity(&did, keys.public(), 0, &mut rng);
        let (en, rev1) = Enrollment::start(did, keys, id_vc, &registry, 3, &mut rng).unwrap();
        let rev2 = usp.handle_registration(rev1, &registry, &mut rng).unwrap();
        let wallet = en.complete(rev2, BIO, PSW, &registry).unwrap();
        let cs = CsState::register(&usp, LAI, &mut registry, &mut rng).unwrap();
        parties.push(Party { wallet, cs, rng: ChaCha20Rng::seed_from_u64(100 + i) });
    }
    std::thread::scope(|s| {
        for p in parties.iter_mut() {
            let usp = &usp;
            s.spawn(move || {
                for _ in 0..5 {
                    let keys = direct_session(usp, p).unwrap();
                    assert!(keys[0] == keys[1] && keys[1] == keys[2]);
                }
            });
        }
    });
    for p in &parties {
        let snap = usp.user_snapshot(p.wallet.did()).unwrap();
        assert_eq!(snap.current_pdid, *p.wallet.pdid());
        assert_eq!(snap.retired, 5);
    }
}

#[test]
fn one_user_racing_itself_rotates_once() {
    let mut d = deployment(13, Adversary::passive(), 2);
    let rec = d.run_session("alice", "cs1", false).unwrap().clone();
    let a4 = rec.message("M_A4").unwrap();
    // the first authorization already rotated; a parallel duplicate of its M_A4 never succeeds twice
    let results: Vec<_> = std::thread::scope(|s| {
        let hs: Vec<_> = (0..4)
            .map(|i| {
                let usp = &d.usp;
                let m = a4.clone();
                s.spawn(move || usp.authorize(m, &mut ChaCha20Rng::seed_from_u64(i), &mut Meter::new()).map(|_| ()))
            })
            .collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert!(results.iter().all(|r| matches!(r, Err(ProtocolError::Replay(_)))));
}
