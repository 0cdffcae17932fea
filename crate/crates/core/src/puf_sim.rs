//! Synthetic DRAM latency-PUF responses.
//!
//! A simulated device is a set of per-cell failure propensities, one per bit
//! position and challenge pattern. Cells whose propensity exceeds
//! [`FAIL_THRESHOLD`] fail on every read (the stable template); environmental
//! noise then flips each bit independently with a rate derived from the
//! operating temperature and voltage.
//!
//! Bits are packed most-significant first, so bit `i` lives in byte `i / 8`
//! at mask `0x80 >> (i % 8)`.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetManifest, DeviceEntry, LabeledPhenotype, ManifestRecord};
use crate::imgen;
use crate::seed;

pub const RESPONSE_BYTES: usize = 44_000;
pub const RESPONSE_BITS: usize = RESPONSE_BYTES * 8;

/// Propensity above which a cell fails on a `tRCD = 0` read.
pub const FAIL_THRESHOLD: f32 = 0.70;

/// Pairwise disagreement of repeated reads at 20 °C, 1.50 V.
pub const DISAGREEMENT_IDEAL: f64 = 0.0595;
/// Pairwise disagreement of repeated reads at 50 °C, 1.27 V (1 - 0.6309).
pub const DISAGREEMENT_EXTREME: f64 = 0.3691;

pub const TEMP_MIN_C: f64 = 20.0;
pub const TEMP_MAX_C: f64 = 50.0;
pub const VOLTAGE_NOMINAL: f64 = 1.50;
pub const VOLTAGE_REDUCED: f64 = 1.27;

/// Labels used when no explicit label list is supplied.
pub const DEFAULT_LABELS: [&str; 5] = ["Alpha", "Beta", "Delta", "Gamma", "Epsilon"];

/// Correlation between the latent per-pattern propensities of one cell.
const PATTERN_CORRELATION: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("temperature {0} °C outside [20, 50]")]
    Temperature(f64),
    #[error("voltage {0} V is not one of 1.50 or 1.27")]
    Voltage(f64),
    #[error("disagreement {0} must lie in [0, 0.5)")]
    Disagreement(f64),
    #[error("response lengths differ: {0} vs {1} bytes")]
    LengthMismatch(usize, usize),
    #[error("group authentication needs at least 2 devices, got {0}")]
    TooFewDevices(usize),
    #[error("{requested} devices requested but only {available} labels available")]
    NotEnoughLabels { requested: usize, available: usize },
    #[error("at least one environmental condition and one repeat are required")]
    EmptyDataset,
}

/// The three challenge patterns written before each read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ChallengePattern {
    #[serde(rename = "P_FF")]
    Ff,
    #[serde(rename = "P_00")]
    Zero,
    #[serde(rename = "P_55")]
    Alt55,
}

impl ChallengePattern {
    pub const ALL: [ChallengePattern; 3] = [Self::Ff, Self::Zero, Self::Alt55];

    /// Byte value written to every cell of the block.
    pub fn base_byte(self) -> u8 {
        match self {
            Self::Ff => 0xFF,
            Self::Zero => 0x00,
            Self::Alt55 => 0x55,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Self::Ff => 0,
            Self::Zero => 1,
            Self::Alt55 => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Ff => "P_FF",
            Self::Zero => "P_00",
            Self::Alt55 => "P_55",
        }
    }

    /// Accepts `P_FF`, `FF`, `0xFF` and the equivalents for the other patterns.
    pub fn parse(s: &str) -> Option<Self> {
        let t = s.trim();
        let t = t.strip_prefix("P_").or_else(|| t.strip_prefix("p_")).unwrap_or(t);
        let t = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")).unwrap_or(t);
        match t.to_ascii_uppercase().as_str() {
            "FF" => Some(Self::Ff),
            "00" => Some(Self::Zero),
            "55" => Some(Self::Alt55),
            _ => None,
        }
    }
}

impl fmt::Display for ChallengePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Operating temperature and DRAM supply voltage of a measurement.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct EnvCondition {
    pub temp_c: f64,
    pub voltage_v: f64,
}

impl EnvCondition {
    pub fn new(temp_c: f64, voltage_v: f64) -> Result<Self, SimError> {
        let env = Self { temp_c, voltage_v };
        env.validate()?;
        Ok(env)
    }

    pub const fn ideal() -> Self {
        Self { temp_c: 20.0, voltage_v: VOLTAGE_NOMINAL }
    }

    pub const fn extreme() -> Self {
        Self { temp_c: 50.0, voltage_v: VOLTAGE_REDUCED }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(TEMP_MIN_C..=TEMP_MAX_C).contains(&self.temp_c) {
            return Err(SimError::Temperature(self.temp_c));
        }
        if !is_voltage(self.voltage_v, VOLTAGE_NOMINAL) && !is_voltage(self.voltage_v, VOLTAGE_REDUCED) {
            return Err(SimError::Voltage(self.voltage_v));
        }
        Ok(())
    }

    fn reduced_voltage(&self) -> bool {
        is_voltage(self.voltage_v, VOLTAGE_REDUCED)
    }
}

fn is_voltage(v: f64, level: f64) -> bool {
    (v - level).abs() < 1e-6
}

/// The measured grid: 20, 30, 40, 50 °C at each of 1.50 V and 1.27 V.
pub fn default_conditions() -> Vec<EnvCondition> {
    let mut out = Vec::with_capacity(8);
    for voltage_v in [VOLTAGE_NOMINAL, VOLTAGE_REDUCED] {
        for temp_c in [20.0, 30.0, 40.0, 50.0] {
            out.push(EnvCondition { temp_c, voltage_v });
        }
    }
    out
}

/// Latent identity of a simulated device.
#[derive(Clone, PartialEq)]
pub struct DeviceFingerprint {
    pub device_id: String,
    pub seed: u64,
    /// `theta[pattern.index()][bit]`, each in `[0, 1]`.
    pub theta: [Vec<f32>; 3],
}

impl fmt::Debug for DeviceFingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DeviceFingerprint")
            .field("device_id", &self.device_id)
            .field("seed", &self.seed)
            .field("bits", &self.theta[0].len())
            .finish()
    }
}

/// Build the fingerprint for `seed`.
///
/// Each cell draws a shared latent normal and one private normal per pattern;
/// the per-pattern latents are mixed to correlation 0.5 and pushed through the
/// normal CDF, so every propensity is marginally uniform on `[0, 1]` and the
/// stable failure density is `1 - FAIL_THRESHOLD = 0.30`.
pub fn new_fingerprint(seed: u64, device_id: &str) -> DeviceFingerprint {
    let mut rng = seed::rng(seed, &[0xF1]);
    let shared_w = PATTERN_CORRELATION.sqrt();
    let own_w = (1.0 - PATTERN_CORRELATION).sqrt();
    let mut theta = [
        Vec::with_capacity(RESPONSE_BITS),
        Vec::with_capacity(RESPONSE_BITS),
        Vec::with_capacity(RESPONSE_BITS),
    ];
    for _ in 0..RESPONSE_BITS {
        let shared: f64 = rng.sample(StandardNormal);
        for t in theta.iter_mut() {
            let own: f64 = rng.sample(StandardNormal);
            let z = shared_w * shared + own_w * own;
            t.push(normal_cdf(z).clamp(0.0, 1.0) as f32);
        }
    }
    DeviceFingerprint { device_id: device_id.to_string(), seed, theta }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

impl DeviceFingerprint {
    /// Noise-free response to `pattern`.
    pub fn stable_template(&self, pattern: ChallengePattern) -> Vec<u8> {
        let theta = &self.theta[pattern.index()];
        let base = pattern.base_byte();
        theta
            .chunks_exact(8)
            .map(|cells| {
                let fails = cells
                    .iter()
                    .enumerate()
                    .fold(0u8, |acc, (k, &t)| if t > FAIL_THRESHOLD { acc | (0x80 >> k) } else { acc });
                base ^ fails
            })
            .collect()
    }
}

/// Expected disagreement between two repeated reads under `env`.
///
/// Bilinear in normalized temperature `s = (T - 20) / 30` and voltage
/// `v ∈ {0 (1.50 V), 1 (1.27 V)}` with no cross term: temperature and voltage
/// each account for half of the ideal-to-extreme spread.
pub fn disagreement_target(env: &EnvCondition) -> Result<f64, SimError> {
    env.validate()?;
    let s = (env.temp_c - TEMP_MIN_C) / (TEMP_MAX_C - TEMP_MIN_C);
    let v = if env.reduced_voltage() { 1.0 } else { 0.0 };
    let u = 0.5 * s + 0.5 * v;
    Ok(DISAGREEMENT_IDEAL + (DISAGREEMENT_EXTREME - DISAGREEMENT_IDEAL) * u)
}

/// Per-read flip probability `f` with `2 f (1 - f) = d`.
pub fn flip_prob(d: f64) -> Result<f64, SimError> {
    if !(0.0..0.5).contains(&d) {
        return Err(SimError::Disagreement(d));
    }
    Ok((1.0 - (1.0 - 2.0 * d).sqrt()) / 2.0)
}

/// Provenance of a single read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseMeta {
    pub device_id: String,
    pub pattern: ChallengePattern,
    pub env: EnvCondition,
    pub repeat: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawResponse {
    pub bytes: Vec<u8>,
    pub meta: ResponseMeta,
}

/// One read of `fp` under `pattern` and `env`.
pub fn measure(
    fp: &DeviceFingerprint,
    pattern: ChallengePattern,
    env: &EnvCondition,
    noise_seed: u64,
) -> Result<RawResponse, SimError> {
    let f = flip_prob(disagreement_target(env)?)?;
    let mut bytes = fp.stable_template(pattern);
    apply_flips(&mut bytes, f, noise_seed);
    Ok(RawResponse {
        bytes,
        meta: ResponseMeta { device_id: fp.device_id.clone(), pattern, env: *env, repeat: 0 },
    })
}

/// Flip every bit of `bytes` independently with probability `f`.
///
/// For a fixed seed the flipped set grows monotonically with `f`.
pub fn apply_flips(bytes: &mut [u8], f: f64, noise_seed: u64) {
    if f <= 0.0 {
        return;
    }
    let mut rng = seed::rng(noise_seed, &[0xF2]);
    for b in bytes.iter_mut() {
        let mut mask = 0u8;
        for k in 0..8 {
            if rng.random::<f64>() < f {
                mask |= 0x80 >> k;
            }
        }
        *b ^= mask;
    }
}

/// Fraction of differing bits between two equal-length responses.
pub fn pairwise_disagreement(a: &[u8], b: &[u8]) -> Result<f64, SimError> {
    if a.len() != b.len() {
        return Err(SimError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let diff: u64 = a.iter().zip(b).map(|(x, y)| u64::from((x ^ y).count_ones())).sum();
    Ok(diff as f64 / (a.len() * 8) as f64)
}

/// Seed of the fingerprint for device `index` in a dataset generated from `seed`.
pub fn device_seed(dataset_seed: u64, index: usize) -> u64 {
    seed::derive(dataset_seed, &[0xD0, index as u64])
}

/// Seed of the noise stream for one dataset read.
pub fn read_seed(dataset_seed: u64, device: usize, pattern: ChallengePattern, condition: usize, repeat: u32) -> u64 {
    seed::derive(dataset_seed, &[0xE0, device as u64, pattern.index() as u64, condition as u64, u64::from(repeat)])
}

/// Output of [`generate_dataset`]: the manifest and the rendered phenotypes,
/// aligned index for index.
#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub manifest: DatasetManifest,
    pub images: Vec<LabeledPhenotype>,
}

/// Simulate the full enrollment dataset.
///
/// Records are ordered by device, pattern, condition (in the order given) and
/// repeat. `labels` overrides [`DEFAULT_LABELS`].
pub fn generate_dataset(
    devices: usize,
    conditions: &[EnvCondition],
    repeats: u32,
    seed: u64,
    labels: Option<&[String]>,
) -> Result<GeneratedDataset, SimError> {
    if devices < 2 {
        return Err(SimError::TooFewDevices(devices));
    }
    if conditions.is_empty() || repeats == 0 {
        return Err(SimError::EmptyDataset);
    }
    for env in conditions {
        env.validate()?;
    }
    let names: Vec<String> = match labels {
        Some(l) => l.to_vec(),
        None => DEFAULT_LABELS.iter().map(|s| s.to_string()).collect(),
    };
    if devices > names.len() {
        return Err(SimError::NotEnoughLabels { requested: devices, available: names.len() });
    }

    use rayon::prelude::*;
    let per_device: Vec<Vec<(ManifestRecord, LabeledPhenotype)>> = (0..devices)
        .into_par_iter()
        .map(|d| {
            let name = &names[d];
            let fp = new_fingerprint(device_seed(seed, d), name);
            let mut out = Vec::new();
            for pattern in ChallengePattern::ALL {
                for (c, env) in conditions.iter().enumerate() {
                    for r in 0..repeats {
                        let mut resp = measure(&fp, pattern, env, read_seed(seed, d, pattern, c, r))
                            .expect("conditions validated above");
                        resp.meta.repeat = r;
                        let record = ManifestRecord::new(&resp.meta);
                        let mut image = imgen::imgen(&resp.bytes).expect("response length is fixed");
                        image.label = Some(name.clone());
                        image.meta = Some(resp.meta);
                        out.push((record, LabeledPhenotype { label: name.clone(), image }));
                    }
                }
            }
            out
        })
        .collect();

    let mut records = Vec::new();
    let mut images = Vec::new();
    for (record, image) in per_device.into_iter().flatten() {
        records.push(record);
        images.push(image);
    }
    let device_entries = (0..devices)
        .map(|d| DeviceEntry { id: names[d].clone(), fingerprint_seed: Some(device_seed(seed, d)) })
        .collect();
    Ok(GeneratedDataset {
        manifest: DatasetManifest { seed: Some(seed), devices: device_entries, records },
        images,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Solve 2 f (1 - f) = d by bisection on [0, 0.5].
    fn flip_oracle(d: f64) -> f64 {
        let (mut lo, mut hi) = (0.0f64, 0.5f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if 2.0 * mid * (1.0 - mid) < d {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn flip_prob_matches_bisection() {
        assert_eq!(flip_prob(0.0).unwrap(), 0.0);
        // bisection gives 0.030692 and 0.244168
        for (d, expected) in [(0.0595, 0.030692), (0.3691, 0.244168)] {
            let f = flip_prob(d).unwrap();
            assert!((f - flip_oracle(d)).abs() < 1e-12);
            assert!((f - expected).abs() < 1e-6, "{f}");
        }
        assert!(flip_prob(0.5).is_err());
        assert!(flip_prob(-0.1).is_err());
    }

    #[test]
    fn disagreement_anchors() {
        let ideal = disagreement_target(&EnvCondition::ideal()).unwrap();
        let extreme = disagreement_target(&EnvCondition::extreme()).unwrap();
        assert!((ideal - 0.0595).abs() < 1e-12);
        assert!((extreme - 0.3691).abs() < 1e-12);
        assert_eq!(ideal, disagreement_target(&EnvCondition::ideal()).unwrap());
        let mid = disagreement_target(&EnvCondition { temp_c: 50.0, voltage_v: 1.50 }).unwrap();
        assert!(mid > ideal && mid < extreme);
    }

    #[test]
    fn env_validation() {
        assert_eq!(EnvCondition::new(19.0, 1.5), Err(SimError::Temperature(19.0)));
        assert_eq!(EnvCondition::new(30.0, 1.4), Err(SimError::Voltage(1.4)));
        assert!(EnvCondition::new(35.0, 1.27).is_ok());
        assert_eq!(default_conditions().len(), 8);
    }

    #[test]
    fn pattern_bytes_and_parsing() {
        assert_eq!(ChallengePattern::Alt55.base_byte(), 0b0101_0101);
        for p in ChallengePattern::ALL {
            assert_eq!(ChallengePattern::parse(p.name()), Some(p));
        }
        assert_eq!(ChallengePattern::parse("0xff"), Some(ChallengePattern::Ff));
        assert_eq!(ChallengePattern::parse("AA"), None);
    }

    #[test]
    fn fingerprint_is_deterministic_and_bounded() {
        let a = new_fingerprint(7, "Alpha");
        let b = new_fingerprint(7, "Alpha");
        assert_eq!(a, b);
        for t in &a.theta {
            assert_eq!(t.len(), RESPONSE_BITS);
            assert!(t.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let density = a.theta[0].iter().filter(|&&t| t > FAIL_THRESHOLD).count() as f64 / RESPONSE_BITS as f64;
        assert!((density - 0.30).abs() < 0.005, "{density}");
    }

    #[test]
    fn distinct_seeds_disagree() {
        let a = new_fingerprint(7, "Alpha");
        let b = new_fingerprint(8, "Beta");
        for p in ChallengePattern::ALL {
            let d = pairwise_disagreement(&a.stable_template(p), &b.stable_template(p)).unwrap();
            assert!(d >= 0.20, "{d}");
            assert!((d - 0.42).abs() < 0.01, "{d}");
        }
    }

    #[test]
    fn patterns_are_mutually_distinct() {
        let fp = new_fingerprint(3, "Alpha");
        let t: Vec<_> = ChallengePattern::ALL.iter().map(|&p| fp.stable_template(p)).collect();
        for i in 0..3 {
            for j in i + 1..3 {
                assert!(pairwise_disagreement(&t[i], &t[j]).unwrap() >= 0.10);
            }
        }
    }

    #[test]
    fn disagreement_definition() {
        let fp = new_fingerprint(1, "Alpha");
        let r = fp.stable_template(ChallengePattern::Alt55);
        assert_eq!(pairwise_disagreement(&r, &r).unwrap(), 0.0);
        let mut one = r.clone();
        one[100] ^= 0x04;
        assert_eq!(pairwise_disagreement(&r, &one).unwrap(), 1.0 / RESPONSE_BITS as f64);
        let inv: Vec<u8> = r.iter().map(|b| !b).collect();
        assert_eq!(pairwise_disagreement(&r, &inv).unwrap(), 1.0);
        assert!(pairwise_disagreement(&r, &r[1..]).is_err());
    }

    #[test]
    fn measure_is_deterministic() {
        let fp = new_fingerprint(5, "Gamma");
        let env = EnvCondition::new(30.0, 1.27).unwrap();
        let a = measure(&fp, ChallengePattern::Ff, &env, 99).unwrap();
        let b = measure(&fp, ChallengePattern::Ff, &env, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.bytes.len(), RESPONSE_BYTES);
    }

    #[test]
    fn dataset_shape_and_errors() {
        assert_eq!(generate_dataset(1, &default_conditions(), 1, 0, None).unwrap_err(), SimError::TooFewDevices(1));
        assert!(matches!(
            generate_dataset(6, &default_conditions(), 1, 0, None),
            Err(SimError::NotEnoughLabels { requested: 6, available: 5 })
        ));
        let ds = generate_dataset(2, &[EnvCondition::ideal()], 2, 4, None).unwrap();
        assert_eq!(ds.manifest.records.len(), 2 * 3 * 2);
        assert_eq!(ds.images.len(), ds.manifest.records.len());
        assert_eq!(ds.manifest.records[0].device_id, "Alpha");
        assert_eq!(ds.manifest.records.last().unwrap().device_id, "Beta");
    }
}
