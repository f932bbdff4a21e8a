//! Per-authentication operation counts against the reference cost table.
//!
//! Counts come only from [`Meter`] logs. The table lists hashes (`H`), ECDSA
//! signing and ECDSA verification per side; the user device is one side, CS
//! and USP together the other. Verifying the possession proof is verifying
//! an ECDSA signature in zero knowledge and maps to `Verify_ECDSA`. Proof
//! generation and hybrid encryption have no column and are reported apart.

use std::fmt;

use crate::protocol::{Meter, OpCounts, OpKind};

/// Allowed absolute difference in hash count.
pub const HASH_TOLERANCE: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Expectation {
    pub formula: &'static str,
    pub hash: u32,
    pub sign: u32,
    pub verify: u32,
    /// Reported reference timing, informational only.
    pub millis: f64,
}

pub const USER_DEVICE: Expectation = Expectation { formula: "6H + Verify_ECDSA", hash: 6, sign: 0, verify: 1, millis: 28.06 };
pub const SERVER: Expectation =
    Expectation { formula: "8H + Sign_ECDSA + Verify_ECDSA", hash: 8, sign: 1, verify: 1, millis: 45.95 };

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Row {
    pub role: &'static str,
    pub kind: OpKind,
    pub label: &'static str,
}

impl Row {
    pub fn column(&self) -> &'static str {
        match self.kind {
            OpKind::Hash => "H",
            OpKind::Sign => "Sign_ECDSA",
            OpKind::Verify | OpKind::ZkVerify => "Verify_ECDSA",
            OpKind::ZkProve | OpKind::Encrypt | OpKind::Decrypt => "(no column)",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Side {
    pub name: &'static str,
    pub expected: Expectation,
    pub hash: u32,
    pub sign: u32,
    pub verify: u32,
    pub totals: OpCounts,
    pub rows: Vec<Row>,
}

impl Side {
    fn build(name: &'static str, expected: Expectation, meters: &[(&'static str, &Meter)]) -> Self {
        let mut totals = OpCounts::default();
        let mut rows = vec![];
        for (role, m) in meters {
            totals += m.counts();
            rows.extend(m.log().iter().map(|r| Row { role, kind: r.kind, label: r.label }));
        }
        Self {
            name,
            expected,
            hash: totals.hash,
            sign: totals.sign,
            verify: totals.verify + totals.zk_verify,
            totals,
            rows,
        }
    }

    pub fn hash_delta(&self) -> i64 {
        i64::from(self.hash) - i64::from(self.expected.hash)
    }

    pub fn hash_within_tolerance(&self) -> bool {
        self.hash_delta().unsigned_abs() <= u64::from(HASH_TOLERANCE)
    }

    pub fn signature_ops_exact(&self) -> bool {
        self.sign == self.expected.sign && self.verify == self.expected.verify
    }

    pub fn passed(&self) -> bool {
        self.hash_within_tolerance() && self.signature_ops_exact()
    }

    /// `"7H + Verify_ECDSA"` style rendering of the measured counts.
    pub fn formula(&self) -> String {
        let mut parts = vec![format!("{}H", self.hash)];
        for (n, name) in [(self.sign, "Sign_ECDSA"), (self.verify, "Verify_ECDSA")] {
            match n {
                0 => {}
                1 => parts.push(name.to_owned()),
                _ => parts.push(format!("{n}{name}")),
            }
        }
        parts.join(" + ")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub user: Side,
    pub server: Side,
}

/// Builds the report from the meters of one authentication.
pub fn account(user: &Meter, cs: &Meter, usp: &Meter) -> Report {
    Report {
        user: Side::build("user device", USER_DEVICE, &[("user", user)]),
        server: Side::build("CS/USP", SERVER, &[("cs", cs), ("usp", usp)]),
    }
}

impl Report {
    pub fn sides(&self) -> [&Side; 2] {
        [&self.user, &self.server]
    }

    pub fn passed(&self) -> bool {
        self.user.passed() && self.server.passed()
    }
}

impl fmt::Display for Report {
    /// Summary per side followed by the mapping table of every counted
    /// operation.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "| side | measured | expected | hash delta | signature ops exact |")?;
        writeln!(f, "|---|---|---|---|---|")?;
        for s in self.sides() {
            writeln!(
                f,
                "| {} | {} | {} | {:+} | {} |",
                s.name,
                s.formula(),
                s.expected.formula,
                s.hash_delta(),
                if s.signature_ops_exact() { "yes" } else { "no" }
            )?;
        }
        writeln!(f)?;
        writeln!(f, "| side | role | operation | counted as | label |")?;
        writeln!(f, "|---|---|---|---|---|")?;
        for s in self.sides() {
            for r in &s.rows {
                writeln!(f, "| {} | {} | {} | {} | {} |", s.name, r.role, r.kind.as_str(), r.column(), r.label)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simnet::Deployment;

    #[test]
    fn every_logged_operation_appears_once_in_the_table() {
        let mut d = Deployment::new(21).unwrap();
        d.add_user("u", b"b", b"p", b"r", 1).unwrap();
        d.add_station("c", b"r").unwrap();
        let rec = d.run_session("u", "c", false).unwrap();
        let report = account(&rec.user_ops, &rec.cs_ops, &rec.usp_ops);
        let logged = rec.user_ops.log().len() + rec.cs_ops.log().len() + rec.usp_ops.log().len();
        assert_eq!(report.user.rows.len() + report.server.rows.len(), logged);
        let table = report.to_string();
        assert_eq!(table.lines().filter(|l| l.starts_with("| user device | user |") || l.starts_with("| CS/USP | cs |") || l.starts_with("| CS/USP | usp |")).count(), logged);
        assert_eq!(report.user.sign, 0);
        assert_eq!(report.server.sign, 1);
    }

    #[test]
    fn formula_rendering() {
        let mut m = Meter::new();
        m.hash("a", &[b"x"]);
        let r = account(&m, &Meter::new(), &Meter::new());
        assert_eq!(r.user.formula(), "1H");
        assert_eq!(r.user.hash_delta(), -5);
        assert!(!r.user.passed());
    }
}
