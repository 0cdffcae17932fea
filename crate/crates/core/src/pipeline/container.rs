//! `DPAN1` model files: magic, u32 LE header length, JSON header, then the
//! declared sections back to back as little-endian f32.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Provenance, TrainedAuthenticator, TuningSummary};
use crate::classifiers::{ClassifierKind, ClassifierModel, Hyperparams, Section, Standardizer};
use crate::features::{layer_shapes, ConvLayer, ExtractorConfig, WeightSet};
use crate::{Error, Result};

pub const CONTAINER_MAGIC: &[u8; 5] = b"DPAN1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct SectionEntry {
    name: String,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: ClassifierKind,
    labels: Vec<String>,
    dim: usize,
    hyperparams: Hyperparams,
    #[serde(default)]
    classifier_extra: serde_json::Value,
    threshold: Option<f64>,
    provenance: Provenance,
    tuning: TuningSummary,
    extractor: ExtractorConfig,
    weights_seed: Option<u64>,
    sections: Vec<SectionEntry>,
}

fn f64s_to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

pub fn encode_model(model: &TrainedAuthenticator) -> Result<Vec<u8>> {
    let (extra, classifier_sections) = model.classifier.encode();
    let mut sections = vec![
        Section { name: "standardizer.mean".into(), values: f64s_to_f32(&model.standardizer.mean) },
        Section { name: "standardizer.std".into(), values: f64s_to_f32(&model.standardizer.std) },
    ];
    sections.extend(classifier_sections.into_iter().map(|s| Section { name: format!("classifier.{}", s.name), values: s.values }));
    for (i, layer) in model.weights.layers.iter().enumerate() {
        sections.push(Section { name: format!("extractor.conv{i}"), values: layer.weights.clone() });
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        kind: model.kind(),
        labels: model.classifier.labels.clone(),
        dim: model.classifier.dim,
        hyperparams: model.classifier.hyperparams.clone(),
        classifier_extra: extra,
        threshold: model.threshold,
        provenance: model.provenance.clone(),
        tuning: model.tuning,
        extractor: model.extractor.clone(),
        weights_seed: model.weights.seed,
        sections: sections.iter().map(|s| SectionEntry { name: s.name.clone(), len: s.values.len() }).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let payload: usize = sections.iter().map(|s| s.values.len() * 4).sum();
    let mut out = Vec::with_capacity(CONTAINER_MAGIC.len() + 4 + json.len() + payload);
    out.extend_from_slice(CONTAINER_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for s in &sections {
        for v in &s.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_model(data: &[u8]) -> Result<TrainedAuthenticator> {
    let bad = |m: &str| Error::Container(m.to_string());
    let rest = data.strip_prefix(CONTAINER_MAGIC.as_slice()).ok_or_else(|| bad("missing DPAN1 magic"))?;
    if rest.len() < 4 {
        return Err(bad("truncated header length"));
    }
    let hlen = u32::from_le_bytes(rest[..4].try_into().expect("four bytes")) as usize;
    let rest = &rest[4..];
    if rest.len() < hlen {
        return Err(bad("truncated header"));
    }
    let header: Header = serde_json::from_slice(&rest[..hlen])?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Container(format!("format version {} (expected {FORMAT_VERSION})", header.format_version)));
    }
    let mut body = &rest[hlen..];
    let mut sections = Vec::with_capacity(header.sections.len());
    for entry in &header.sections {
        let bytes = entry.len.checked_mul(4).filter(|&n| n <= body.len()).ok_or_else(|| {
            Error::Container(format!("section {} declares {} values past the end", entry.name, entry.len))
        })?;
        let values = body[..bytes].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("chunk"))).collect();
        sections.push(Section { name: entry.name.clone(), values });
        body = &body[bytes..];
    }
    if !body.is_empty() {
        return Err(Error::Container(format!("{} trailing bytes", body.len())));
    }
    let take = |name: &str| -> Result<Vec<f64>> {
        sections
            .iter()
            .find(|s| s.name == name)
            .map(|s| s.values.iter().map(|&v| f64::from(v)).collect())
            .ok_or_else(|| Error::Container(format!("missing section {name}")))
    };
    let standardizer = Standardizer { mean: take("standardizer.mean")?, std: take("standardizer.std")? };
    let classifier_sections: Vec<Section> = sections
        .iter()
        .filter_map(|s| s.name.strip_prefix("classifier.").map(|n| Section { name: n.to_string(), values: s.values.clone() }))
        .collect();
    let classifier = ClassifierModel::decode(
        header.hyperparams,
        header.labels,
        header.dim,
        &header.classifier_extra,
        &classifier_sections,
    )?;
    if classifier.kind() != header.kind {
        return Err(bad("kind disagrees with hyperparameters"));
    }
    let scale = header.extractor.width_scale;
    let mut layers = Vec::new();
    for (i, (cin, cout)) in layer_shapes(scale).into_iter().enumerate() {
        let name = format!("extractor.conv{i}");
        let s = sections.iter().find(|s| s.name == name).ok_or_else(|| Error::Container(format!("missing section {name}")))?;
        if s.values.len() != 9 * cin * cout {
            return Err(Error::Container(format!("{name} has {} values, expected {}", s.values.len(), 9 * cin * cout)));
        }
        layers.push(ConvLayer { in_channels: cin, out_channels: cout, weights: s.values.clone() });
    }
    if standardizer.dim() != classifier.dim || scale.output_len() != classifier.dim {
        return Err(bad("feature dimension disagrees with the extractor"));
    }
    if header.threshold.is_none() && header.kind.has_confidence() {
        return Err(bad("threshold missing"));
    }
    Ok(TrainedAuthenticator {
        extractor: header.extractor,
        weights: WeightSet { width_scale: scale, seed: header.weights_seed, layers },
        standardizer,
        classifier,
        threshold: header.threshold,
        provenance: header.provenance,
        tuning: header.tuning,
    })
}

pub fn write_model(model: &TrainedAuthenticator, path: &Path) -> Result<()> {
    let bytes = encode_model(model)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_model(path: &Path) -> Result<TrainedAuthenticator> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}
