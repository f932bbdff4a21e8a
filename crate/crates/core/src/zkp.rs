//! Non-interactive zero-knowledge proof that the prover holds a valid ECDSA
//! signature by a known issuer on a given `hashValue`, without revealing the
//! signature scalar `s`.
//!
//! For a signature `(R, s)` on `h` under issuer key `Q`, with `r = R.x mod m`,
//!
//! ```text
//!   R = k·G = s⁻¹(h + r·d)·G = (h·s⁻¹)·(G + (r·h⁻¹)·Q)
//! ```
//!
//! so possession reduces to knowing `a = h·s⁻¹` with `a·B = R` for the public
//! base `B = G + (r·h⁻¹)·Q`. That discrete log is proven with a Fiat-Shamir
//! Schnorr proof whose challenge is bound to the CRS tag and the full
//! statement. Extracting `a` yields `s = h·a⁻¹`, a valid signature, so
//! soundness rests on the unforgeability of ECDSA.
//!
//! `Setup`/`Prove`/`Verify`/`Sim` map onto [`setup`], [`prove`], [`verify`]
//! and [`sim`]. Simulation programs the challenge oracle and therefore only
//! works against [`verify_with_trapdoor`]; the production [`verify`] always
//! uses the real hash.

use std::collections::HashMap;

use p256::elliptic_curve::Field;
use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::codec::DecodeError;
use crate::crypto::group::{
    generator, is_identity, point_from_bytes, point_to_bytes, random_nonzero_scalar, random_scalar,
    scalar_from_bytes, scalar_reduce, scalar_to_bytes, x_mod_order,
};
use crate::crypto::{hash, CurvePoint, Digest, ProjectivePoint, Scalar, POINT_LEN, SCALAR_LEN};

pub const PROOF_LEN: usize = POINT_LEN + SCALAR_LEN;
pub const STATEMENT_LEN: usize = 2 * POINT_LEN + 32;

/// Relation id used by the charging protocol.
pub const VC_POSSESSION: &[u8] = b"vc-possession";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ZkError {
    #[error("precondition violated: {0}")]
    Precondition(&'static str),
    #[error("simulation requires a trapdoor, which only exists in test mode")]
    Capability,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Production,
    Test,
}

/// Common reference string: a domain tag derived from the relation id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Crs {
    tag: Digest,
}

impl Crs {
    pub fn tag(&self) -> &Digest {
        &self.tag
    }
}

/// Simulation capability: a programmable challenge oracle.
#[derive(Debug, Default)]
pub struct Trapdoor {
    programmed: HashMap<Digest, Scalar>,
}

impl Trapdoor {
    /// Fixes the challenge returned for `(crs, st, t)`.
    pub fn program(&mut self, crs: &Crs, st: &Statement, commitment: &CurvePoint, challenge: Scalar) {
        self.programmed.insert(challenge_input(crs, st, commitment), challenge);
    }

    fn challenge(&self, crs: &Crs, st: &Statement, commitment: &CurvePoint) -> Scalar {
        let input = challenge_input(crs, st, commitment);
        self.programmed.get(&input).copied().unwrap_or_else(|| scalar_reduce(input.as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Statement {
    issuer: CurvePoint,
    hash_value: Digest,
    sig_point: CurvePoint,
}

impl Statement {
    pub fn new(issuer: CurvePoint, hash_value: Digest, sig_point: CurvePoint) -> Result<Self, ZkError> {
        if is_identity(&ProjectivePoint::from(sig_point)) || is_identity(&ProjectivePoint::from(issuer)) {
            return Err(ZkError::Precondition("statement point is the identity"));
        }
        if bool::from(scalar_reduce(hash_value.as_bytes()).is_zero()) {
            return Err(ZkError::Precondition("hashValue is zero mod m"));
        }
        if bool::from(x_mod_order(&sig_point).is_zero()) {
            return Err(ZkError::Precondition("signature point has r = 0"));
        }
        Ok(Self { issuer, hash_value, sig_point })
    }

    pub fn issuer(&self) -> &CurvePoint {
        &self.issuer
    }

    pub fn hash_value(&self) -> &Digest {
        &self.hash_value
    }

    pub fn sig_point(&self) -> &CurvePoint {
        &self.sig_point
    }

    /// `Q ‖ hashValue ‖ R`
    pub fn to_bytes(&self) -> [u8; STATEMENT_LEN] {
        let mut out = [0u8; STATEMENT_LEN];
        out[..POINT_LEN].copy_from_slice(&point_to_bytes(&self.issuer));
        out[POINT_LEN..POINT_LEN + 32].copy_from_slice(self.hash_value.as_bytes());
        out[POINT_LEN + 32..].copy_from_slice(&point_to_bytes(&self.sig_point));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        if bytes.len() != STATEMENT_LEN {
            return Err(DecodeError::Invalid("statement length"));
        }
        let issuer = point_from_bytes(&bytes[..POINT_LEN])?;
        let hash_value = Digest::from_slice(&bytes[POINT_LEN..POINT_LEN + 32])?;
        let sig_point = point_from_bytes(&bytes[POINT_LEN + 32..])?;
        Self::new(issuer, hash_value, sig_point).map_err(|_| DecodeError::Invalid("statement"))
    }

    /// `B = G + (r·h⁻¹)·Q`
    pub fn base(&self) -> ProjectivePoint {
        let h = scalar_reduce(self.hash_value.as_bytes());
        let h_inv = h.invert().expect("nonzero by construction");
        let r = x_mod_order(&self.sig_point);
        generator() + ProjectivePoint::from(self.issuer) * (r * h_inv)
    }
}

/// `a = hashValue · s⁻¹ mod m`.
#[derive(Clone)]
pub struct Witness {
    a: Scalar,
}

impl Witness {
    pub fn new(a: Scalar) -> Self {
        Self { a }
    }

    pub fn scalar(&self) -> &Scalar {
        &self.a
    }

    pub fn satisfies(&self, st: &Statement) -> bool {
        (st.base() * self.a).to_affine() == st.sig_point
    }
}

impl std::fmt::Debug for Witness {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Witness(..)")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Proof {
    commitment: CurvePoint,
    response: Scalar,
}

impl Proof {
    pub fn new(commitment: CurvePoint, response: Scalar) -> Self {
        Self { commitment, response }
    }

    pub fn commitment(&self) -> &CurvePoint {
        &self.commitment
    }

    pub fn response(&self) -> &Scalar {
        &self.response
    }

    /// `t ‖ z`
    pub fn to_bytes(&self) -> [u8; PROOF_LEN] {
        let mut out = [0u8; PROOF_LEN];
        out[..POINT_LEN].copy_from_slice(&point_to_bytes(&self.commitment));
        out[POINT_LEN..].copy_from_slice(&scalar_to_bytes(&self.response));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        if bytes.len() != PROOF_LEN {
            return Err(DecodeError::Invalid("proof length"));
        }
        Ok(Self {
            commitment: point_from_bytes(&bytes[..POINT_LEN])?,
            response: scalar_from_bytes(&bytes[POINT_LEN..])?,
        })
    }
}

pub fn setup(relation_id: &[u8], mode: Mode) -> (Crs, Option<Trapdoor>) {
    let crs = Crs { tag: hash(&[&b"crs"[..], relation_id]) };
    let td = match mode {
        Mode::Production => None,
        Mode::Test => Some(Trapdoor::default()),
    };
    (crs, td)
}

fn challenge_input(crs: &Crs, st: &Statement, commitment: &CurvePoint) -> Digest {
    hash(&[crs.tag.as_bytes(), &b"zkp-challenge"[..], &st.to_bytes(), &point_to_bytes(commitment)])
}

fn challenge(crs: &Crs, st: &Statement, commitment: &CurvePoint) -> Scalar {
    scalar_reduce(challenge_input(crs, st, commitment).as_bytes())
}

fn prove_inner<R, F>(st: &Statement, w: &Witness, rng: &mut R, oracle: F) -> Result<Proof, ZkError>
where
    R: RngCore + CryptoRng,
    F: Fn(&CurvePoint) -> Scalar,
{
    let base = st.base();
    if (base * w.a).to_affine() != st.sig_point {
        return Err(ZkError::Precondition("witness does not open the statement"));
    }
    loop {
        let omega = random_nonzero_scalar(rng);
        let commitment = base * omega;
        if is_identity(&commitment) {
            continue;
        }
        let commitment = commitment.to_affine();
        let c = oracle(&commitment);
        return Ok(Proof { commitment, response: omega + c * w.a });
    }
}

pub fn prove<R: RngCore + CryptoRng>(crs: &Crs, st: &Statement, w: &Witness, rng: &mut R) -> Result<Proof, ZkError> {
    prove_inner(st, w, rng, |t| challenge(crs, st, t))
}

/// Proves against the trapdoor's programmed oracle. Rewinding extractors use
/// this to obtain two responses for one commitment.
pub fn prove_with_trapdoor<R: RngCore + CryptoRng>(
    crs: &Crs,
    td: &Trapdoor,
    st: &Statement,
    w: &Witness,
    rng: &mut R,
) -> Result<Proof, ZkError> {
    prove_inner(st, w, rng, |t| td.challenge(crs, st, t))
}

fn check(st: &Statement, proof: &Proof, c: Scalar) -> bool {
    let lhs = st.base() * proof.response;
    let rhs = ProjectivePoint::from(proof.commitment) + ProjectivePoint::from(st.sig_point) * c;
    lhs == rhs
}

/// Accepts iff `z·B = t + c·R` with `c` from the real hash.
pub fn verify(crs: &Crs, st: &Statement, proof: &Proof) -> bool {
    check(st, proof, challenge(crs, st, &proof.commitment))
}

/// Verification against the programmable oracle; accepts simulated proofs.
pub fn verify_with_trapdoor(crs: &Crs, td: &Trapdoor, st: &Statement, proof: &Proof) -> bool {
    check(st, proof, td.challenge(crs, st, &proof.commitment))
}

/// Produces an accepting (test-mode) proof without a witness:
/// `t = z·B − c·R` for random `(c, z)`, with `c` programmed into the oracle.
pub fn sim<R: RngCore + CryptoRng>(
    crs: &Crs,
    td: Option<&mut Trapdoor>,
    st: &Statement,
    rng: &mut R,
) -> Result<Proof, ZkError> {
    let td = td.ok_or(ZkError::Capability)?;
    let base = st.base();
    loop {
        let c = random_scalar(rng);
        let z = random_scalar(rng);
        let t = base * z - ProjectivePoint::from(st.sig_point) * c;
        if is_identity(&t) {
            continue;
        }
        let commitment = t.to_affine();
        td.program(crs, st, &commitment, c);
        return Ok(Proof { commitment, response: z });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::ecdsa::{sign_prehash, verify_prehash, Signature};
    use crate::crypto::KeyPair;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn instance(rng: &mut ChaCha20Rng) -> (KeyPair, Statement, Witness) {
        let issuer = KeyPair::generate(rng);
        let mut hv = [0u8; 32];
        rng.fill_bytes(&mut hv);
        let sig = sign_prehash(&hv, issuer.private());
        let h = scalar_reduce(&hv);
        let a = h * sig.s().invert().unwrap();
        let st = Statement::new(*issuer.public(), Digest(hv), *sig.point()).unwrap();
        (issuer, st, Witness::new(a))
    }

    #[test]
    fn setup_is_deterministic_and_separated() {
        let (a, _) = setup(VC_POSSESSION, Mode::Production);
        let (b, _) = setup(VC_POSSESSION, Mode::Production);
        let (c, _) = setup(b"other", Mode::Production);
        assert_eq!(a, b);
        assert_ne!(a.tag(), c.tag());
    }

    #[test]
    fn production_has_no_trapdoor() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let (crs, td) = setup(VC_POSSESSION, Mode::Production);
        assert!(td.is_none());
        let (_, st, _) = instance(&mut rng);
        assert_eq!(sim(&crs, None, &st, &mut rng), Err(ZkError::Capability));
    }

    #[test]
    fn completeness_and_fresh_commitments() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let (crs, _) = setup(VC_POSSESSION, Mode::Production);
        let (_, st, w) = instance(&mut rng);
        assert!(w.satisfies(&st));
        let p1 = prove(&crs, &st, &w, &mut rng).unwrap();
        let p2 = prove(&crs, &st, &w, &mut rng).unwrap();
        assert!(verify(&crs, &st, &p1));
        assert!(verify(&crs, &st, &p2));
        assert_ne!(p1.commitment(), p2.commitment());
    }

    #[test]
    fn bumped_response_is_rejected_on_both_sides_of_the_equation() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let (crs, _) = setup(VC_POSSESSION, Mode::Production);
        let (_, st, w) = instance(&mut rng);
        let p = prove(&crs, &st, &w, &mut rng).unwrap();
        let bumped = Proof::new(p.commitment, p.response + Scalar::ONE);
        let c = challenge(&crs, &st, &p.commitment);
        let lhs = (st.base() * bumped.response).to_affine();
        let rhs = (ProjectivePoint::from(p.commitment) + ProjectivePoint::from(*st.sig_point()) * c).to_affine();
        assert_ne!(lhs, rhs);
        assert!(!verify(&crs, &st, &bumped));
    }

    #[test]
    fn other_hash_value_is_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let (crs, _) = setup(VC_POSSESSION, Mode::Production);
        let (_, st, w) = instance(&mut rng);
        let p = prove(&crs, &st, &w, &mut rng).unwrap();
        let mut hv = *st.hash_value().as_bytes();
        hv[5] ^= 0x40;
        let moved = Statement::new(*st.issuer(), Digest(hv), *st.sig_point()).unwrap();
        assert_ne!(moved.base(), st.base());
        assert!(!verify(&crs, &moved, &p));
    }

    #[test]
    fn wrong_witness_is_a_precondition_error() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let (crs, _) = setup(VC_POSSESSION, Mode::Production);
        let (_, st, w) = instance(&mut rng);
        let bad = Witness::new(*w.scalar() + Scalar::ONE);
        assert!(matches!(prove(&crs, &st, &bad, &mut rng), Err(ZkError::Precondition(_))));
    }

    #[test]
    fn crs_binds_the_challenge() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let (crs, _) = setup(VC_POSSESSION, Mode::Production);
        let (other, _) = setup(b"another-deployment", Mode::Production);
        let (_, st, w) = instance(&mut rng);
        let p = prove(&crs, &st, &w, &mut rng).unwrap();
        assert!(!verify(&other, &st, &p));
    }

    #[test]
    fn simulated_proofs_need_the_programmed_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let (crs, td) = setup(VC_POSSESSION, Mode::Test);
        let mut td = td.unwrap();
        let (_, st, _) = instance(&mut rng);
        let p = sim(&crs, Some(&mut td), &st, &mut rng).unwrap();
        assert!(verify_with_trapdoor(&crs, &td, &st, &p));
        assert!(!verify(&crs, &st, &p));
    }

    #[test]
    fn rewinding_extracts_a_valid_signature() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let (crs, td) = setup(VC_POSSESSION, Mode::Test);
        let mut td = td.unwrap();
        let (issuer, st, w) = instance(&mut rng);

        let prover_rng = ChaCha20Rng::seed_from_u64(99);
        let first = prove(&crs, &st, &w, &mut prover_rng.clone()).unwrap();
        let c1 = challenge(&crs, &st, first.commitment());
        let c2 = c1 + Scalar::from(17u64);
        td.program(&crs, &st, first.commitment(), c2);
        let second = prove_with_trapdoor(&crs, &td, &st, &w, &mut prover_rng.clone()).unwrap();
        assert_eq!(first.commitment(), second.commitment());

        let a = (first.response - second.response) * (c1 - c2).invert().unwrap();
        let h = scalar_reduce(st.hash_value().as_bytes());
        let s = h * a.invert().unwrap();
        let sig = Signature::from_parts(*st.sig_point(), s).unwrap();
        assert!(verify_prehash(st.hash_value().as_bytes(), issuer.public(), &sig));
    }

    #[test]
    fn encodings_roundtrip() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let (crs, _) = setup(VC_POSSESSION, Mode::Production);
        let (_, st, w) = instance(&mut rng);
        let p = prove(&crs, &st, &w, &mut rng).unwrap();
        assert_eq!(Proof::from_bytes(&p.to_bytes()).unwrap(), p);
        assert_eq!(Statement::from_bytes(&st.to_bytes()).unwrap(), st);
    }
}
