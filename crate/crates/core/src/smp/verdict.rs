use serde::{Deserialize, Serialize};

use crate::dist::Pmf;

/// Why a protocol declined to produce an answer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AbortReason {
    /// The centralized routine did not receive enough simulated samples.
    Inconclusive,
    /// A Las Vegas player stream hit its hard cap.
    PlayerCap,
    /// A simulation batch ended without declaring a symbol.
    NoDeclaration,
}

/// The referee's output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    AcceptUniform,
    Reject,
    Abort(AbortReason),
    Symbol(usize),
    Estimate(Pmf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub decision: Decision,
    pub diagnostics: Vec<(String, f64)>,
}

impl Verdict {
    pub fn new(decision: Decision) -> Self {
        Verdict {
            decision,
            diagnostics: Vec::new(),
        }
    }

    pub fn accept() -> Self {
        Verdict::new(Decision::AcceptUniform)
    }

    pub fn reject() -> Self {
        Verdict::new(Decision::Reject)
    }

    pub fn abort(reason: AbortReason) -> Self {
        Verdict::new(Decision::Abort(reason))
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.diagnostics.push((key.to_string(), value));
        self
    }

    pub fn diagnostic(&self, key: &str) -> Option<f64> {
        self.diagnostics
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| *v)
    }

    pub fn is_accept(&self) -> bool {
        self.decision == Decision::AcceptUniform
    }

    pub fn is_reject(&self) -> bool {
        self.decision == Decision::Reject
    }

    /// Short label used in CSV output.
    pub fn label(&self) -> String {
        match &self.decision {
            Decision::AcceptUniform => "accept".into(),
            Decision::Reject => "reject".into(),
            Decision::Abort(AbortReason::Inconclusive) => "abort-inconclusive".into(),
            Decision::Abort(AbortReason::PlayerCap) => "abort-player-cap".into(),
            Decision::Abort(AbortReason::NoDeclaration) => "abort-no-declaration".into(),
            Decision::Symbol(x) => format!("symbol:{x}"),
            Decision::Estimate(_) => "estimate".into(),
        }
    }
}
