use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{authenticate, decode_decision, decode_request, encode_decision, encode_request, AuthRequest, Outcome, Verifier};
use crate::dataset::DeviceEntry;
use crate::imgen::{self, PIXELS};
use crate::puf_sim::{apply_flips, measure, new_fingerprint, ChallengePattern, DeviceFingerprint, EnvCondition};
use crate::{seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    LegitAuth {
        device: String,
        #[serde(default = "default_pattern")]
        pattern: ChallengePattern,
        #[serde(default = "EnvCondition::ideal")]
        env: EnvCondition,
    },
    WrongUid {
        device: String,
        claimed_uid: String,
    },
    /// Uniform-random image; the claimed uid defaults to a seeded pick from
    /// the uid list.
    RandomAdversary {
        #[serde(default)]
        claimed_uid: Option<String>,
    },
    /// A fresh ideal-environment read of `device` with every bit further
    /// flipped with probability `extra_flip_fraction`, claiming `device`.
    NearMissAdversary {
        device: String,
        extra_flip_fraction: f64,
    },
}

fn default_pattern() -> ChallengePattern {
    ChallengePattern::Ff
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub devices: Vec<DeviceEntry>,
    pub uid_list: Vec<String>,
    pub model_path: PathBuf,
    /// Device answering every request; the first uid when absent.
    #[serde(default)]
    pub verifier: Option<String>,
    pub events: Vec<Event>,
}

impl Scenario {
    fn validate(&self) -> Result<()> {
        for (i, uid) in self.uid_list.iter().enumerate() {
            if self.uid_list[..i].contains(uid) {
                return Err(Error::Scenario(format!("uid {uid} listed twice")));
            }
        }
        for d in &self.devices {
            if d.fingerprint_seed.is_none() {
                return Err(Error::Scenario(format!("device {} has no fingerprint seed", d.id)));
            }
        }
        let known = |id: &str| self.devices.iter().any(|d| d.id == id);
        for (i, e) in self.events.iter().enumerate() {
            let device = match e {
                Event::LegitAuth { device, env, .. } => {
                    env.validate()?;
                    Some(device)
                }
                Event::WrongUid { device, .. } => Some(device),
                Event::NearMissAdversary { device, extra_flip_fraction } => {
                    if !(0.0..=1.0).contains(extra_flip_fraction) {
                        return Err(Error::Scenario(format!("event {i}: flip fraction {extra_flip_fraction}")));
                    }
                    Some(device)
                }
                Event::RandomAdversary { .. } => None,
            };
            if let Some(d) = device.filter(|d| !known(d)) {
                return Err(Error::Scenario(format!("event {i} references unknown device {d}")));
            }
        }
        if self.events.iter().any(|e| matches!(e, Event::RandomAdversary { claimed_uid: None })) && self.uid_list.is_empty() {
            return Err(Error::Scenario("random adversaries need a non-empty uid list".into()));
        }
        Ok(())
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub index: usize,
    pub event: &'static str,
    pub requester: String,
    pub verifier: String,
    pub claimed_uid: String,
    #[serde(flatten)]
    pub outcome: Outcome,
    pub confidence: Option<f64>,
}

struct Request {
    index: usize,
    event: &'static str,
    requester: String,
    frame: Vec<u8>,
}

fn fingerprint<'a>(fps: &'a [DeviceFingerprint], id: &str) -> &'a DeviceFingerprint {
    fps.iter().find(|f| f.device_id == id).expect("validated device")
}

/// Runs every scripted event through the request and decision frames and
/// returns the log in scenario order.
pub fn simulate<V: Verifier + ?Sized>(scenario: &Scenario, model: &V) -> Result<Vec<LogEntry>> {
    scenario.validate()?;
    let fps: Vec<DeviceFingerprint> = scenario
        .devices
        .iter()
        .map(|d| new_fingerprint(d.fingerprint_seed.expect("validated"), &d.id))
        .collect();
    let verifier = scenario
        .verifier
        .clone()
        .or_else(|| scenario.uid_list.first().cloned())
        .unwrap_or_else(|| "verifier".to_string());

    let mut queue = VecDeque::with_capacity(scenario.events.len());
    for (index, event) in scenario.events.iter().enumerate() {
        let event_seed = seed::derive(scenario.seed, &[0xE7, index as u64]);
        let (name, requester, uid, bytes) = match event {
            Event::LegitAuth { device, pattern, env } => {
                let r = measure(fingerprint(&fps, device), *pattern, env, event_seed)?;
                ("legit_auth", device.clone(), device.clone(), r.bytes)
            }
            Event::WrongUid { device, claimed_uid } => {
                let r = measure(fingerprint(&fps, device), default_pattern(), &EnvCondition::ideal(), event_seed)?;
                ("wrong_uid", device.clone(), claimed_uid.clone(), r.bytes)
            }
            Event::RandomAdversary { claimed_uid } => {
                let mut rng = seed::rng(event_seed, &[0xAD]);
                let mut bytes = vec![0u8; PIXELS];
                rng.fill(bytes.as_mut_slice());
                let uid = match claimed_uid {
                    Some(u) => u.clone(),
                    None => scenario.uid_list[rng.random_range(0..scenario.uid_list.len())].clone(),
                };
                ("random_adversary", "adversary".to_string(), uid, bytes)
            }
            Event::NearMissAdversary { device, extra_flip_fraction } => {
                let mut r = measure(fingerprint(&fps, device), default_pattern(), &EnvCondition::ideal(), event_seed)?;
                apply_flips(&mut r.bytes, *extra_flip_fraction, seed::derive(event_seed, &[0x4E]));
                ("near_miss_adversary", "adversary".to_string(), device.clone(), r.bytes)
            }
        };
        let req = AuthRequest { uid, phenotype: imgen::imgen(&bytes)? };
        queue.push_back(Request { index, event: name, requester, frame: encode_request(&req)? });
    }

    let mut log = Vec::with_capacity(queue.len());
    while let Some(msg) = queue.pop_front() {
        let req = decode_request(&msg.frame)?;
        let decision = authenticate(model, &scenario.uid_list, &req)?;
        let reply = decode_decision(&encode_decision(&decision))?;
        log.push(LogEntry {
            index: msg.index,
            event: msg.event,
            requester: msg.requester,
            verifier: verifier.clone(),
            claimed_uid: req.uid,
            outcome: reply.outcome,
            confidence: reply.confidence,
        });
    }
    Ok(log)
}

impl LogEntry {
    /// JSON lines, one entry per line.
    pub fn to_jsonl(entries: &[LogEntry]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for e in entries {
            serde_json::to_writer(&mut out, e)?;
            out.push(b'\n');
        }
        Ok(out)
    }
}
