//! Authentication of group members against the shared DPAN model, plus the
//! wire frames and a scripted in-process group simulation.

mod sim;

use serde::{Deserialize, Serialize};

use crate::classifiers::Prediction;
use crate::imgen::{self, Phenotype, PIXELS};
use crate::pipeline::TrainedAuthenticator;
use crate::{Error, Result};

pub use sim::{load_scenario, simulate, Event, LogEntry, Scenario};

pub const REQUEST_MAGIC: &[u8; 4] = b"DPRQ";
pub const DECISION_MAGIC: &[u8; 4] = b"DPRS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    UnknownUid,
    LabelMismatch,
    LowConfidence,
    NoConfidence,
}

impl RejectReason {
    const ALL: [RejectReason; 4] = [Self::UnknownUid, Self::LabelMismatch, Self::LowConfidence, Self::NoConfidence];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::UnknownUid => "unknown_uid",
            Self::LabelMismatch => "label_mismatch",
            Self::LowConfidence => "low_confidence",
            Self::NoConfidence => "no_confidence",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", content = "reason", rename_all = "snake_case")]
pub enum Outcome {
    Accepted,
    Rejected(RejectReason),
}

impl Outcome {
    pub fn is_accepted(self) -> bool {
        self == Outcome::Accepted
    }

    fn code(self) -> u8 {
        match self {
            Outcome::Accepted => 0,
            Outcome::Rejected(r) => 1 + RejectReason::ALL.iter().position(|&x| x == r).expect("listed") as u8,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Outcome::Accepted),
            c => RejectReason::ALL.get(usize::from(c) - 1).map(|&r| Outcome::Rejected(r)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthDecision {
    #[serde(flatten)]
    pub outcome: Outcome,
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuthRequest {
    pub uid: String,
    pub phenotype: Phenotype,
}

/// What authentication needs from a model.
pub trait Verifier {
    fn threshold(&self) -> Option<f64>;
    fn predict(&self, image: &Phenotype) -> Result<Prediction>;
}

impl Verifier for TrainedAuthenticator {
    fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    fn predict(&self, image: &Phenotype) -> Result<Prediction> {
        TrainedAuthenticator::predict(self, image)
    }
}

/// Linear scan of the uid list; stops at the first match.
pub fn check(uid: &str, uid_list: &[String]) -> bool {
    for entry in uid_list {
        if entry == uid {
            return true;
        }
    }
    false
}

/// Checks run in order and the first failure decides the reason: unknown
/// uid, then missing confidence, then the predicted label, then the threshold.
pub fn authenticate<V: Verifier + ?Sized>(model: &V, uid_list: &[String], req: &AuthRequest) -> Result<AuthDecision> {
    if !check(&req.uid, uid_list) {
        return Ok(AuthDecision { outcome: Outcome::Rejected(RejectReason::UnknownUid), confidence: None });
    }
    let Some(threshold) = model.threshold() else {
        return Ok(AuthDecision { outcome: Outcome::Rejected(RejectReason::NoConfidence), confidence: None });
    };
    let p = model.predict(&req.phenotype)?;
    let outcome = match p.confidence {
        None => Outcome::Rejected(RejectReason::NoConfidence),
        Some(_) if p.label != req.uid => Outcome::Rejected(RejectReason::LabelMismatch),
        Some(s) if s < threshold => Outcome::Rejected(RejectReason::LowConfidence),
        Some(_) => Outcome::Accepted,
    };
    Ok(AuthDecision { outcome, confidence: p.confidence })
}

pub fn encode_request(req: &AuthRequest) -> Result<Vec<u8>> {
    let uid = req.uid.as_bytes();
    let len = u16::try_from(uid.len()).map_err(|_| Error::Frame(format!("uid of {} bytes", uid.len())))?;
    let mut out = Vec::with_capacity(6 + uid.len() + PIXELS);
    out.extend_from_slice(REQUEST_MAGIC);
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(uid);
    out.extend_from_slice(&req.phenotype.to_bytes());
    Ok(out)
}

pub fn decode_request(frame: &[u8]) -> Result<AuthRequest> {
    let rest = frame.strip_prefix(REQUEST_MAGIC.as_slice()).ok_or_else(|| Error::Frame("missing DPRQ magic".into()))?;
    if rest.len() < 2 {
        return Err(Error::Frame("truncated uid length".into()));
    }
    let len = usize::from(u16::from_be_bytes([rest[0], rest[1]]));
    let rest = &rest[2..];
    if rest.len() != len + PIXELS {
        return Err(Error::Frame(format!("expected {} bytes after the uid length, got {}", len + PIXELS, rest.len())));
    }
    let uid = std::str::from_utf8(&rest[..len]).map_err(|e| Error::Frame(format!("uid: {e}")))?.to_string();
    Ok(AuthRequest { uid, phenotype: imgen::imgen(&rest[len..])? })
}

pub fn encode_decision(d: &AuthDecision) -> [u8; 9] {
    let mut out = [0u8; 9];
    out[..4].copy_from_slice(DECISION_MAGIC);
    out[4] = d.outcome.code();
    let conf = d.confidence.map_or(f32::NAN, |c| c as f32);
    out[5..].copy_from_slice(&conf.to_be_bytes());
    out
}

pub fn decode_decision(frame: &[u8]) -> Result<AuthDecision> {
    let rest = frame.strip_prefix(DECISION_MAGIC.as_slice()).ok_or_else(|| Error::Frame("missing DPRS magic".into()))?;
    if rest.len() != 5 {
        return Err(Error::Frame(format!("decision frame body of {} bytes", rest.len())));
    }
    let outcome = Outcome::from_code(rest[0]).ok_or_else(|| Error::Frame(format!("outcome byte {}", rest[0])))?;
    let conf = f32::from_be_bytes(rest[1..5].try_into().expect("four bytes"));
    Ok(AuthDecision { outcome, confidence: (!conf.is_nan()).then_some(f64::from(conf)) })
}
