//! In-process run of one authentication across the three roles, with each
//! role's operations metered and timed separately.

use std::time::{Duration, Instant};

use evcharge_core::protocol::{CsState, Meter, ProtocolError, Secret32, Step, Usp, Wallet};
use evcharge_core::simnet::Role;
use rand::{CryptoRng, RngCore};

#[derive(Debug, Default)]
pub struct RoleCost {
    pub meter: Meter,
    pub time: Duration,
}

#[derive(Debug)]
pub struct SessionRun {
    pub result: Result<[Secret32; 3], (Role, ProtocolError)>,
    pub user: RoleCost,
    pub cs: RoleCost,
    pub usp: RoleCost,
}

impl SessionRun {
    pub fn keys_agree(&self) -> bool {
        matches!(self.result, Ok([a, b, c]) if a == b && b == c)
    }
}

pub struct UserInput<'a> {
    pub biometric: &'a [u8],
    pub password: &'a [u8],
    pub location: &'a [u8],
    pub shadow: bool,
}

fn timed<T>(cost: &mut RoleCost, f: impl FnOnce(&mut Meter) -> T) -> T {
    let start = Instant::now();
    let out = f(&mut cost.meter);
    cost.time += start.elapsed();
    out
}

pub fn run<R: RngCore + CryptoRng>(wallet: &mut Wallet, input: &UserInput<'_>, cs: &CsState, usp: &Usp, rng: &mut R) -> SessionRun {
    let mut run = SessionRun { result: Ok([[0; 32]; 3]), user: RoleCost::default(), cs: RoleCost::default(), usp: RoleCost::default() };
    run.result = drive(wallet, input, cs, usp, rng, &mut run.user, &mut run.cs, &mut run.usp);
    run
}

#[allow(clippy::too_many_arguments)]
fn drive<R: RngCore + CryptoRng>(
    wallet: &mut Wallet,
    input: &UserInput<'_>,
    cs: &CsState,
    usp: &Usp,
    rng: &mut R,
    user_cost: &mut RoleCost,
    cs_cost: &mut RoleCost,
    usp_cost: &mut RoleCost,
) -> Result<[Secret32; 3], (Role, ProtocolError)> {
    let at = |role| move |e| (role, e);
    let unexpected = |role| (role, ProtocolError::ProtocolOrder("unexpected step"));
    let (mut us, a1) = timed(user_cost, |m| {
        if input.shadow {
            wallet.desync_recover(input.biometric, input.password, input.location, rng, m)
        } else {
            wallet.begin_auth(input.biometric, input.password, input.location, rng, m)
        }
    })
    .map_err(at(Role::User))?;
    let (mut css, a2) = timed(cs_cost, |_| cs.respond(a1)).map_err(at(Role::Cs))?;
    let Step::Send(a3) = timed(user_cost, |m| us.handle(wallet, a2, rng, m)).map_err(at(Role::User))? else {
        return Err(unexpected(Role::User));
    };
    let Step::Send(a4) = timed(cs_cost, |m| css.handle(cs, a3, rng, m)).map_err(at(Role::Cs))? else {
        return Err(unexpected(Role::Cs));
    };
    let auth = timed(usp_cost, |m| usp.authorize(a4, rng, m)).map_err(at(Role::Usp))?;
    let Step::Finished { send: Some(a6), session_key: k_cs } =
        timed(cs_cost, |m| css.handle(cs, auth.message, rng, m)).map_err(at(Role::Cs))?
    else {
        return Err(unexpected(Role::Cs));
    };
    let Step::Finished { session_key: k_user, .. } = timed(user_cost, |m| us.handle(wallet, a6, rng, m)).map_err(at(Role::User))? else {
        return Err(unexpected(Role::User));
    };
    Ok([k_user, k_cs, auth.session_key])
}
