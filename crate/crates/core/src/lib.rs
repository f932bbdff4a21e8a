//! Privacy-preserving authenticated key exchange for EV charging built on
//! decentralized identifiers and verifiable credentials.
//!
//! Three roles take part: the user's device, the charging station (CS) and
//! the utility service provider (USP). The USP issues each user a fresh
//! credential every session; the user proves possession of it to the CS in
//! zero knowledge, and the three parties end up sharing a session key while
//! the user appears under a pseudonym that rotates every round.
//!
//! Module map:
//! - [`crypto`]: curve, ECDSA, hash, keystream masking, hybrid encryption
//! - [`zkp`]: non-interactive proof of possession of an ECDSA credential
//! - [`sharing`]: Shamir threshold sharing of a private key
//! - [`identity`]: DID registry and verifiable credentials
//! - [`protocol`]: role state machines, messages, key recovery, persistence
//! - [`simnet`]: Dolev-Yao channel and attack scenario engine
//! - [`accounting`]: per-session operation counts against the cost table

pub mod accounting;
pub mod codec;
pub mod crypto;
pub mod identity;
pub mod protocol;
pub mod sharing;
pub mod simnet;
pub mod zkp;
