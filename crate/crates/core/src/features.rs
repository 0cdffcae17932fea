//! VGG16-shaped convolutional feature extractor.
//!
//! Thirteen 3×3 convolutions in five blocks of `[2, 2, 3, 3, 3]`, each block
//! closed by a 2×2 stride-2 max pool. The dense head is gone: the 6×6×C map
//! left after the fifth pool is flattened as the feature vector. There are no
//! biases and no normalization layers, so an all-zero input maps to an
//! all-zero feature vector.
//!
//! Tensors are stored height × width × channel, and filters as
//! `[ky][kx][in][out]` so the innermost accumulation runs over contiguous
//! output channels.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgen::{Phenotype, HEIGHT, WIDTH};
use crate::seed;

pub const BLOCK_WIDTHS: [usize; 5] = [64, 128, 256, 512, 512];
pub const BLOCK_DEPTHS: [usize; 5] = [2, 2, 3, 3, 3];
pub const INPUT_CHANNELS: usize = 3;
pub const KERNEL: usize = 3;
/// Spatial side of the final map for a 200×220 input.
pub const OUTPUT_SIDE: usize = 6;

const WEIGHTS_MAGIC: &[u8; 6] = b"DPANW1";
const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("input tensor is {0}x{1}x{2}, expected 200x220x3")]
    Shape(usize, usize, usize),
    #[error("non-finite activation after conv layer {0}")]
    NonFinite(usize),
    #[error("weight file: {0}")]
    WeightFormat(String),
    #[error("weight file version {0}, expected 1")]
    Version(u32),
    #[error("weights do not match config: {0}")]
    ConfigMismatch(String),
    #[error("unknown width scale {0:?}")]
    WidthScale(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

/// Multiplier on the VGG16 channel widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum WidthScale {
    #[default]
    #[serde(rename = "1/8")]
    Eighth,
    #[serde(rename = "1/4")]
    Quarter,
    #[serde(rename = "1/2")]
    Half,
    #[serde(rename = "1")]
    Full,
}

impl WidthScale {
    pub fn divisor(self) -> usize {
        match self {
            Self::Eighth => 8,
            Self::Quarter => 4,
            Self::Half => 2,
            Self::Full => 1,
        }
    }

    pub fn factor(self) -> f64 {
        1.0 / self.divisor() as f64
    }

    pub fn block_widths(self) -> [usize; 5] {
        BLOCK_WIDTHS.map(|w| w / self.divisor())
    }

    pub fn output_len(self) -> usize {
        OUTPUT_SIDE * OUTPUT_SIDE * self.block_widths()[4]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Eighth => "1/8",
            Self::Quarter => "1/4",
            Self::Half => "1/2",
            Self::Full => "1",
        }
    }

    pub fn parse(s: &str) -> Result<Self, FeatureError> {
        match s.trim() {
            "1/8" | "0.125" => Ok(Self::Eighth),
            "1/4" | "0.25" => Ok(Self::Quarter),
            "1/2" | "0.5" => Ok(Self::Half),
            "1" | "1.0" | "1/1" => Ok(Self::Full),
            other => Err(FeatureError::WidthScale(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightSource {
    SeededRandom { seed: u64 },
    Imported { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub width_scale: WidthScale,
    pub weight_source: WeightSource,
}

impl ExtractorConfig {
    pub fn seeded(width_scale: WidthScale, seed: u64) -> Self {
        Self { width_scale, weight_source: WeightSource::SeededRandom { seed } }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `[ky][kx][in][out]`
    pub weights: Vec<f32>,
}

impl ConvLayer {
    pub fn fan_in(&self) -> usize {
        KERNEL * KERNEL * self.in_channels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub width_scale: WidthScale,
    pub seed: Option<u64>,
    pub layers: Vec<ConvLayer>,
}

/// `(in, out)` channel pairs of the 13 conv layers.
pub fn layer_shapes(scale: WidthScale) -> Vec<(usize, usize)> {
    let widths = scale.block_widths();
    let mut shapes = Vec::with_capacity(13);
    let mut cin = INPUT_CHANNELS;
    for (block, &depth) in BLOCK_DEPTHS.iter().enumerate() {
        for _ in 0..depth {
            shapes.push((cin, widths[block]));
            cin = widths[block];
        }
    }
    shapes
}

/// He scaling: standard deviation `sqrt(2 / fan_in)`.
pub fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

pub fn init_weights(cfg: &ExtractorConfig) -> Result<WeightSet, FeatureError> {
    match &cfg.weight_source {
        WeightSource::SeededRandom { seed } => Ok(seeded_weights(cfg.width_scale, *seed)),
        WeightSource::Imported { path } => {
            let ws = import_weights(path)?;
            if ws.width_scale != cfg.width_scale {
                return Err(FeatureError::ConfigMismatch(format!(
                    "file has width scale {}, config wants {}",
                    ws.width_scale.as_str(),
                    cfg.width_scale.as_str()
                )));
            }
            Ok(ws)
        }
    }
}

fn seeded_weights(scale: WidthScale, seed: u64) -> WeightSet {
    let layers = layer_shapes(scale)
        .into_iter()
        .enumerate()
        .map(|(i, (cin, cout))| {
            let fan_in = KERNEL * KERNEL * cin;
            let dist = Normal::new(0.0f64, he_std(fan_in)).expect("positive std");
            let mut rng = seed::rng(seed, &[0xC0, i as u64]);
            let weights = (0..fan_in * cout).map(|_| rng.sample(dist) as f32).collect();
            ConvLayer { in_channels: cin, out_channels: cout, weights }
        })
        .collect();
    WeightSet { width_scale: scale, seed: Some(seed), layers }
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightsHeader {
    format_version: u32,
    width_scale: WidthScale,
    block_widths: Vec<usize>,
    #[serde(default)]
    seed: Option<u64>,
    layers: Vec<LayerHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerHeader {
    in_channels: usize,
    out_channels: usize,
    kernel: [usize; 2],
    len: usize,
}

impl WeightSet {
    /// `DPANW1`, u32 LE header length, JSON header, then every layer's
    /// filters as little-endian f32 in layer order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = WeightsHeader {
            format_version: WEIGHTS_VERSION,
            width_scale: self.width_scale,
            block_widths: self.width_scale.block_widths().to_vec(),
            seed: self.seed,
            layers: self
                .layers
                .iter()
                .map(|l| LayerHeader {
                    in_channels: l.in_channels,
                    out_channels: l.out_channels,
                    kernel: [KERNEL, KERNEL],
                    len: l.weights.len(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let total: usize = self.layers.iter().map(|l| l.weights.len() * 4).sum();
        let mut out = Vec::with_capacity(WEIGHTS_MAGIC.len() + 4 + json.len() + total);
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for l in &self.layers {
            for w in &l.weights {
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, FeatureError> {
        let bad = |m: &str| FeatureError::WeightFormat(m.to_string());
        if data.len() < WEIGHTS_MAGIC.len() + 4 || &data[..WEIGHTS_MAGIC.len()] != WEIGHTS_MAGIC {
            return Err(bad("missing DPANW1 magic"));
        }
        let mut pos = WEIGHTS_MAGIC.len();
        let hlen = u32::from_le_bytes(data[pos..pos + 4].try_into().expect("4 bytes")) as usize;
        pos += 4;
        let json = data.get(pos..pos + hlen).ok_or_else(|| bad("truncated header"))?;
        pos += hlen;
        let header: WeightsHeader =
            serde_json::from_slice(json).map_err(|e| FeatureError::WeightFormat(e.to_string()))?;
        if header.format_version != WEIGHTS_VERSION {
            return Err(FeatureError::Version(header.format_version));
        }
        let expected = layer_shapes(header.width_scale);
        if header.layers.len() != expected.len() {
            return Err(FeatureError::ConfigMismatch(format!("{} layers, expected 13", header.layers.len())));
        }
        let mut layers = Vec::with_capacity(expected.len());
        for (i, (lh, &(cin, cout))) in header.layers.iter().zip(&expected).enumerate() {
            if lh.in_channels != cin || lh.out_channels != cout || lh.len != KERNEL * KERNEL * cin * cout {
                return Err(FeatureError::ConfigMismatch(format!(
                    "layer {i}: {}x{} ({} values), expected {cin}x{cout}",
                    lh.in_channels, lh.out_channels, lh.len
                )));
            }
            let bytes = data.get(pos..pos + lh.len * 4).ok_or_else(|| bad("truncated weights"))?;
            pos += lh.len * 4;
            let weights = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            layers.push(ConvLayer { in_channels: cin, out_channels: cout, weights });
        }
        if pos != data.len() {
            return Err(bad("trailing bytes after weights"));
        }
        Ok(WeightSet { width_scale: header.width_scale, seed: header.seed, layers })
    }
}

pub fn export_weights(ws: &WeightSet, path: &Path) -> Result<(), FeatureError> {
    fs::write(path, ws.to_bytes()).map_err(|source| FeatureError::Io { path: path.to_path_buf(), source })
}

pub fn import_weights(path: &Path) -> Result<WeightSet, FeatureError> {
    let data = fs::read(path).map_err(|source| FeatureError::Io { path: path.to_path_buf(), source })?;
    WeightSet::from_bytes(&data)
}

/// Height × width × channel activations.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }
}

/// Scale intensities to `[0, 1]` and replicate into three channels.
pub fn preprocess(p: &Phenotype) -> Tensor {
    let mut data = Vec::with_capacity(p.pixels.len() * INPUT_CHANNELS);
    for &px in &p.pixels {
        let v = f32::from(px) / 255.0;
        data.extend_from_slice(&[v, v, v]);
    }
    Tensor { height: HEIGHT, width: WIDTH, channels: INPUT_CHANNELS, data }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f32>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| f64::from(v)).collect()
    }
}

/// Spatial size after each of the five pools for an `h`×`w` input.
pub fn spatial_trajectory(h: usize, w: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(6);
    let (mut h, mut w) = (h, w);
    out.push((h, w));
    for _ in 0..BLOCK_DEPTHS.len() {
        h /= 2;
        w /= 2;
        out.push((h, w));
    }
    out
}

pub fn extract(weights: &WeightSet, t: &Tensor) -> Result<FeatureVector, FeatureError> {
    extract_traced(weights, t).map(|(fv, _)| fv)
}

/// [`extract`], also returning the `(h, w, c)` shape after every pool.
pub fn extract_traced(
    weights: &WeightSet,
    t: &Tensor,
) -> Result<(FeatureVector, Vec<(usize, usize, usize)>), FeatureError> {
    if t.shape() != (HEIGHT, WIDTH, INPUT_CHANNELS) || t.data.len() != HEIGHT * WIDTH * INPUT_CHANNELS {
        return Err(FeatureError::Shape(t.height, t.width, t.channels));
    }
    let mut shapes = Vec::with_capacity(5);
    let mut layers = weights.layers.iter().enumerate();
    let mut x = t.clone();
    for &depth in &BLOCK_DEPTHS {
        for _ in 0..depth {
            let (i, layer) = layers
                .next()
                .ok_or_else(|| FeatureError::ConfigMismatch("fewer than 13 conv layers".into()))?;
            if layer.in_channels != x.channels {
                return Err(FeatureError::ConfigMismatch(format!(
                    "layer {i} expects {} channels, got {}",
                    layer.in_channels, x.channels
                )));
            }
            x = conv3x3_relu(&x, layer);
            if x.data.iter().any(|v| !v.is_finite()) {
                return Err(FeatureError::NonFinite(i));
            }
        }
        x = max_pool2(&x);
        shapes.push(x.shape());
    }
    // the 1×1 average pool over the 6×6 map is an identity; flatten (row, col, channel)
    Ok((FeatureVector { values: x.data }, shapes))
}

/// Same-padded 3×3 convolution, stride 1, followed by ReLU.
fn conv3x3_relu(input: &Tensor, layer: &ConvLayer) -> Tensor {
    let (h, w, cin) = input.shape();
    let cout = layer.out_channels;
    let pw = w + 2;
    let mut padded = vec![0.0f32; (h + 2) * pw * cin];
    for y in 0..h {
        let src = &input.data[y * w * cin..(y + 1) * w * cin];
        let dst = ((y + 1) * pw + 1) * cin;
        padded[dst..dst + w * cin].copy_from_slice(src);
    }
    let mut out = Tensor::zeros(h, w, cout);
    let mut acc = vec![0.0f32; cout];
    for y in 0..h {
        for x in 0..w {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for ky in 0..KERNEL {
                let row = (y + ky) * pw + x;
                for kx in 0..KERNEL {
                    let px = &padded[(row + kx) * cin..(row + kx + 1) * cin];
                    let wbase = (ky * KERNEL + kx) * cin * cout;
                    for (ci, &v) in px.iter().enumerate() {
                        if v == 0.0 {
                            continue;
                        }
                        let wrow = &layer.weights[wbase + ci * cout..wbase + (ci + 1) * cout];
                        for (a, &wt) in acc.iter_mut().zip(wrow) {
                            *a += v * wt;
                        }
                    }
                }
            }
            let o = (y * w + x) * cout;
            for (dst, &a) in out.data[o..o + cout].iter_mut().zip(&acc) {
                *dst = a.max(0.0);
            }
        }
    }
    out
}

/// 2×2 max pool, stride 2, trailing odd row/column dropped.
fn max_pool2(input: &Tensor) -> Tensor {
    let (h, w, c) = input.shape();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(oh, ow, c);
    for y in 0..oh {
        for x in 0..ow {
            let o = (y * ow + x) * c;
            for ch in 0..c {
                let m = input
                    .at(2 * y, 2 * x, ch)
                    .max(input.at(2 * y, 2 * x + 1, ch))
                    .max(input.at(2 * y + 1, 2 * x, ch))
                    .max(input.at(2 * y + 1, 2 * x + 1, ch));
                out.data[o + ch] = m;
            }
        }
    }
    out
}

/// Preprocess and extract every image; parallel across images, ordered output.
pub fn extract_batch(weights: &WeightSet, images: &[&Phenotype]) -> Result<Vec<FeatureVector>, FeatureError> {
    images.par_iter().map(|p| extract(weights, &preprocess(p))).collect()
}
