//! The `dpan` command line: dataset generation and ingestion, enrollment,
//! evaluation, authentication, group simulation and timing.

pub mod layout;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use dpan::authd::{self, AuthRequest, LogEntry, Outcome};
use dpan::classifiers::ClassifierKind;
use dpan::dataset::{self, DatasetManifest, DeviceEntry, LabeledPhenotype, LoadedDataset, ManifestRecord};
use dpan::features::WidthScale;
use dpan::imgen::{self, Phenotype};
use dpan::pipeline::{self, EvalReport, Seeds, TrainOptions};
use dpan::puf_sim::{self, EnvCondition};
use dpan::{seed, Error, Result};

use layout::Layout;

/// Template matching the hex files written by `gen --export-hex`.
pub const EXPORT_LAYOUT: &str = "{device}_{pattern}_{temp}C_{voltage}V_r{repeat}.txt";

pub const EXIT_ACCEPTED: i32 = 0;
pub const EXIT_REJECTED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FAILURE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "dpan", version, about = "DRAM PUF phenotype authentication network")]
pub struct Cli {
    /// Master seed for every random stage.
    #[arg(long, global = true, env = "DPAN_SEED", default_value_t = 42)]
    pub seed: u64,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate devices and write a labelled phenotype dataset.
    Gen(GenArgs),
    /// Convert a directory of hex response files into a dataset.
    Ingest(IngestArgs),
    /// Enroll: extract features, fit a classifier and tune its threshold.
    Train(TrainArgs),
    /// Re-tune a model's threshold against fresh adversaries.
    Tune(TuneArgs),
    /// Evaluate a model on its held-out test split.
    Eval(EvalArgs),
    /// Authenticate one phenotype against a model.
    Auth(AuthArgs),
    /// Run a scripted group scenario.
    Simulate(SimulateArgs),
    /// Time repeated authentications.
    Bench(BenchArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u32).range(2..))]
    pub devices: u32,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..))]
    pub repeats: u32,
    /// `default` or a comma list of `temp:voltage` pairs, e.g. `20:1.50,50:1.27`.
    #[arg(long, default_value = "default")]
    pub conditions: String,
    /// Comma-separated device labels; the five default names otherwise.
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<String>>,
    /// Also write each raw response as a hex DWORD file under `hex/`.
    #[arg(long)]
    pub export_hex: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Path template relative to `--in`, using {device} {pattern} {temp} {voltage} {repeat}.
    #[arg(long, default_value = EXPORT_LAYOUT)]
    pub layout: String,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset manifest.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "lr")]
    pub classifier: String,
    #[arg(long, default_value = "1/8")]
    pub width: String,
    /// Extractor weights file; seeded random filters otherwise.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = pipeline::DEFAULT_SEARCH_BUDGET)]
    pub budget: usize,
    /// Fit the default hyperparameters without searching.
    #[arg(long)]
    pub no_search: bool,
    #[arg(long, default_value_t = pipeline::DEFAULT_TEST_FRACTION)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0.2)]
    pub validation_fraction: f64,
    #[arg(long, default_value_t = pipeline::DEFAULT_ADVERSARIES)]
    pub adversaries: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct TuneArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = pipeline::DEFAULT_ADVERSARIES as u64, value_parser = clap::value_parser!(u64).range(1..))]
    pub adversaries: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = pipeline::DEFAULT_ADVERSARIES)]
    pub adversaries: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct AuthArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub uid: String,
    /// PGM image or hex response file.
    #[arg(long)]
    pub image: PathBuf,
    /// Comma-separated uid list; the model's labels otherwise.
    #[arg(long, value_delimiter = ',')]
    pub uids: Option<Vec<String>>,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub iters: u64,
}

/// Everything needed to rerun a command with identical output.
#[derive(Debug, Serialize)]
pub struct Provenance<'a, A: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub args: &'a A,
    /// SHA-256 of every input file, keyed by path as given.
    pub inputs: BTreeMap<String, String>,
}

impl<'a, A: Serialize> Provenance<'a, A> {
    fn new(command: &'static str, seed: u64, args: &'a A, inputs: &[&Path]) -> Result<Self> {
        let mut hashes = BTreeMap::new();
        for p in inputs {
            hashes.insert(p.display().to_string(), dataset::sha256_hex(&read(p)?));
        }
        Ok(Self { tool: "dpan", version: env!("CARGO_PKG_VERSION"), command, seed, args, inputs: hashes })
    }

    fn write(&self, path: &Path) -> Result<()> {
        write(path, &pretty(self)?)
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| Error::Io { path: parent.to_path_buf(), source })?;
    }
    fs::write(path, bytes).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn pretty<T: Serialize + ?Sized>(v: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(v)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// `<path>.provenance.json` next to a file output.
fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".provenance.json");
    path.with_file_name(name)
}

pub fn parse_conditions(list: &str) -> Result<Vec<EnvCondition>> {
    if list.trim() == "default" {
        return Ok(puf_sim::default_conditions());
    }
    list.split(',')
        .map(|pair| {
            let (t, v) = pair
                .trim()
                .split_once(':')
                .ok_or_else(|| Error::Dataset(format!("condition {pair:?} is not temp:voltage")))?;
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| Error::Dataset(format!("condition {pair:?}")));
            Ok(EnvCondition::new(num(t)?, num(v)?)?)
        })
        .collect()
}

/// Reads a PGM, or a hex DWORD response when the file is not PGM.
pub fn load_phenotype(path: &Path) -> Result<Phenotype> {
    let bytes = read(path)?;
    if bytes.starts_with(b"P5") {
        return Ok(imgen::from_pgm(&bytes)?);
    }
    let text = String::from_utf8(bytes).map_err(|_| Error::Dataset(format!("{}: neither PGM nor hex text", path.display())))?;
    let raw = imgen::parse_hex_response(&text).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    Ok(imgen::imgen(&raw)?)
}

pub fn cmd_gen(args: &GenArgs, seed: u64, out: &Path) -> Result<PathBuf> {
    let conditions = parse_conditions(&args.conditions)?;
    let generated =
        puf_sim::generate_dataset(args.devices as usize, &conditions, args.repeats, seed, args.labels.as_deref())?;
    let manifest_path = dataset::write_dataset(out, &generated.manifest, &generated.images)?;
    if args.export_hex {
        for (rec, img) in generated.manifest.records.iter().zip(&generated.images) {
            let name = rec.image_path.strip_suffix(".pgm").unwrap_or(&rec.image_path);
            write(&out.join("hex").join(format!("{name}.txt")), imgen::to_hex(&img.image.to_bytes()).as_bytes())?;
        }
    }
    Provenance::new("gen", seed, args, &[])?.write(&out.join("provenance.json"))?;
    log::info!("wrote {} images to {}", generated.images.len(), out.display());
    Ok(manifest_path)
}

pub fn cmd_ingest(args: &IngestArgs, seed: u64, out: &Path) -> Result<PathBuf> {
    let layout = Layout::parse(&args.layout)?;
    let mut found = Vec::new();
    for entry in walkdir::WalkDir::new(&args.input).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Dataset(format!("walking {}: {e}", args.input.display())))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(&args.input).expect("walk stays under the root");
        let rel_str = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        let meta = layout
            .match_path(&rel_str)?
            .ok_or_else(|| Error::Dataset(format!("{rel_str} does not match layout {:?}", args.layout)))?;
        let text = String::from_utf8(read(entry.path())?)
            .map_err(|_| Error::Dataset(format!("{rel_str}: not UTF-8 text")))?;
        let raw = imgen::parse_hex_response(&text).map_err(|e| Error::Dataset(format!("{rel_str}: {e}")))?;
        found.push((meta, raw));
    }
    if found.is_empty() {
        return Err(Error::Dataset(format!("no response files under {}", args.input.display())));
    }
    found.sort_by(|(a, _), (b, _)| {
        a.device_id
            .cmp(&b.device_id)
            .then(a.pattern.index().cmp(&b.pattern.index()))
            .then(a.env.temp_c.total_cmp(&b.env.temp_c))
            .then(a.env.voltage_v.total_cmp(&b.env.voltage_v))
            .then(a.repeat.cmp(&b.repeat))
    });
    let mut records = Vec::with_capacity(found.len());
    let mut images = Vec::with_capacity(found.len());
    for (meta, raw) in found {
        let rec = ManifestRecord::new(&meta);
        if records.iter().any(|r: &ManifestRecord| r.image_path == rec.image_path) {
            return Err(Error::Dataset(format!("two files map to {}", rec.image_path)));
        }
        let mut image = imgen::imgen(&raw)?;
        image.label = Some(meta.device_id.clone());
        image.meta = Some(meta.clone());
        images.push(LabeledPhenotype { label: meta.device_id.clone(), image });
        records.push(rec);
    }
    let mut ids: Vec<String> = records.iter().map(|r| r.device_id.clone()).collect();
    ids.dedup();
    let manifest = DatasetManifest {
        seed: None,
        devices: ids.into_iter().map(|id| DeviceEntry { id, fingerprint_seed: None }).collect(),
        records,
    };
    let manifest_path = dataset::write_dataset(out, &manifest, &images)?;
    Provenance::new("ingest", seed, args, &[])?.write(&out.join("provenance.json"))?;
    Ok(manifest_path)
}

#[derive(Debug, Serialize)]
struct TrainSummary<'a> {
    model: String,
    classifier: &'static str,
    hyperparams: &'a dpan::classifiers::Hyperparams,
    threshold: Option<f64>,
    cv_mean: f64,
    cv_std: f64,
}

pub fn cmd_train(args: &TrainArgs, seed: u64, out: &Path) -> Result<()> {
    let kind = ClassifierKind::parse(&args.classifier)?;
    let data = dataset::load_dataset(&args.data)?;
    let opts = TrainOptions {
        test_fraction: args.test_fraction,
        validation_fraction: args.validation_fraction,
        width_scale: WidthScale::parse(&args.width)?,
        weights_path: args.weights.clone(),
        hyperparams: None,
        search_budget: (!args.no_search).then_some(args.budget),
        folds: pipeline::DEFAULT_FOLDS,
        adversaries: args.adversaries,
    };
    let model = pipeline::train_dpan(&data, kind, &opts, Seeds::from_master(seed))?;
    pipeline::write_model(&model, out)?;
    let mut inputs = vec![args.data.as_path()];
    inputs.extend(args.weights.as_deref());
    Provenance::new("train", seed, args, &inputs)?.write(&sidecar(out))?;
    let summary = TrainSummary {
        model: out.display().to_string(),
        classifier: kind.heading(),
        hyperparams: &model.classifier.hyperparams,
        threshold: model.threshold,
        cv_mean: model.tuning.cv.mean,
        cv_std: model.tuning.cv.std,
    };
    print!("{}", String::from_utf8(pretty(&summary)?).expect("json is UTF-8"));
    Ok(())
}

pub fn cmd_tune(args: &TuneArgs, seed: u64, out: &Path) -> Result<()> {
    let mut model = pipeline::read_model(&args.model)?;
    let data = dataset::load_dataset(&args.data)?;
    let t = model.retune(&data, args.adversaries as usize, seed::derive(seed, &[0x7E]))?;
    let inputs = [args.model.as_path(), args.data.as_path()];
    let prov = Provenance::new("tune", seed, args, &inputs)?;
    pipeline::write_model(&model, out)?;
    prov.write(&sidecar(out))?;
    print!("{}", String::from_utf8(pretty(&t)?).expect("json is UTF-8"));
    Ok(())
}

pub fn evaluate_on(model: &pipeline::TrainedAuthenticator, data: &LoadedDataset, adversaries: usize, seed: u64) -> Result<EvalReport> {
    let (y, part) = model.partition_of(data)?;
    let test: Vec<&Phenotype> = part.test.iter().map(|&i| &data.images[i].image).collect();
    let test_y: Vec<usize> = part.test.iter().map(|&i| y[i]).collect();
    let adv = pipeline::gen_adversary(adversaries, seed::derive(seed, &[0xEA]));
    pipeline::evaluate(model, &test, &test_y, &adv.iter().collect::<Vec<_>>())
}

pub fn cmd_eval(args: &EvalArgs, seed: u64, out: &Path) -> Result<()> {
    let model = pipeline::read_model(&args.model)?;
    let data = dataset::load_dataset(&args.data)?;
    let report = evaluate_on(&model, &data, args.adversaries, seed)?;
    write(out, &report.to_json()?)?;
    Provenance::new("eval", seed, args, &[args.model.as_path(), args.data.as_path()])?.write(&sidecar(out))?;
    print!("{}", EvalReport::table(std::slice::from_ref(&report)));
    Ok(())
}

#[derive(Debug, Serialize)]
struct AuthOutput<'a, A: Serialize> {
    uid: &'a str,
    #[serde(flatten)]
    decision: &'a authd::AuthDecision,
    provenance: Provenance<'a, A>,
}

/// Returns the process exit code: 0 accepted, 1 rejected.
pub fn cmd_auth(args: &AuthArgs, seed: u64) -> Result<i32> {
    let model = pipeline::read_model(&args.model)?;
    let uids = args.uids.clone().unwrap_or_else(|| model.labels().to_vec());
    let req = AuthRequest { uid: args.uid.clone(), phenotype: load_phenotype(&args.image)? };
    let decision = authd::authenticate(&model, &uids, &req)?;
    let out = AuthOutput {
        uid: &args.uid,
        decision: &decision,
        provenance: Provenance::new("auth", seed, args, &[args.model.as_path(), args.image.as_path()])?,
    };
    println!("{}", serde_json::to_string(&out)?);
    Ok(if decision.outcome.is_accepted() { EXIT_ACCEPTED } else { EXIT_REJECTED })
}

pub fn cmd_simulate(args: &SimulateArgs, seed: u64, out: &Path) -> Result<Vec<LogEntry>> {
    let scenario = authd::load_scenario(&args.scenario)?;
    let model_path = args.scenario.parent().unwrap_or(Path::new(".")).join(&scenario.model_path);
    let model = pipeline::read_model(&model_path)?;
    let log = authd::simulate(&scenario, &model)?;
    write(out, &LogEntry::to_jsonl(&log)?)?;
    Provenance::new("simulate", seed, args, &[args.scenario.as_path(), model_path.as_path()])?.write(&sidecar(out))?;
    let accepted = log.iter().filter(|e| e.outcome == Outcome::Accepted).count();
    println!("{} events, {accepted} accepted, {} rejected", log.len(), log.len() - accepted);
    Ok(log)
}

#[derive(Debug, Serialize)]
pub struct BenchReport {
    pub iters: u64,
    pub mean_s: f64,
    pub min_s: f64,
    pub max_s: f64,
}

pub fn cmd_bench(args: &BenchArgs, seed: u64) -> Result<BenchReport> {
    let model = pipeline::read_model(&args.model)?;
    let image = load_phenotype(&args.image)?;
    let uids = model.labels().to_vec();
    let mut times = Vec::with_capacity(args.iters as usize);
    for _ in 0..args.iters {
        let start = Instant::now();
        let p = model.predict(&image)?;
        let req = AuthRequest { uid: p.label, phenotype: image.clone() };
        std::hint::black_box(authd::authenticate(&model, &uids, &req)?);
        times.push(start.elapsed().as_secs_f64());
    }
    let report = BenchReport {
        iters: args.iters,
        mean_s: times.iter().sum::<f64>() / times.len() as f64,
        min_s: times.iter().copied().fold(f64::INFINITY, f64::min),
        max_s: times.iter().copied().fold(0.0, f64::max),
    };
    #[derive(Serialize)]
    struct Out<'a> {
        #[serde(flatten)]
        report: &'a BenchReport,
        provenance: Provenance<'a, BenchArgs>,
    }
    let prov = Provenance::new("bench", seed, args, &[args.model.as_path(), args.image.as_path()])?;
    print!("{}", String::from_utf8(pretty(&Out { report: &report, provenance: prov })?).expect("json is UTF-8"));
    Ok(report)
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> Result<i32> {
    let out = |default: &str| cli.out.clone().unwrap_or_else(|| PathBuf::from(default));
    match &cli.command {
        Command::Gen(a) => cmd_gen(a, cli.seed, &out("dataset")).map(|_| 0),
        Command::Ingest(a) => cmd_ingest(a, cli.seed, &out("dataset")).map(|_| 0),
        Command::Train(a) => cmd_train(a, cli.seed, &out("model.dpan")).map(|_| 0),
        Command::Tune(a) => cmd_tune(a, cli.seed, &cli.out.clone().unwrap_or_else(|| a.model.clone())).map(|_| 0),
        Command::Eval(a) => cmd_eval(a, cli.seed, &out("report.json")).map(|_| 0),
        Command::Auth(a) => cmd_auth(a, cli.seed),
        Command::Simulate(a) => cmd_simulate(a, cli.seed, &out("events.jsonl")).map(|_| 0),
        Command::Bench(a) => cmd_bench(a, cli.seed).map(|_| 0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn condition_lists() {
        assert_eq!(parse_conditions("default").unwrap().len(), 8);
        let c = parse_conditions("20:1.50, 50:1.27").unwrap();
        assert_eq!(c, vec![EnvCondition::ideal(), EnvCondition::extreme()]);
        assert!(parse_conditions("20").is_err());
        assert!(parse_conditions("60:1.50").is_err());
    }

    #[test]
    fn sidecar_names() {
        assert_eq!(sidecar(Path::new("out/model.dpan")), PathBuf::from("out/model.dpan.provenance.json"));
    }

    #[test]
    fn usage_errors() {
        assert!(Cli::try_parse_from(["dpan", "gen", "--devices", "1"]).is_err());
        assert!(Cli::try_parse_from(["dpan", "bench", "--model", "m", "--image", "i", "--iters", "0"]).is_err());
        let cli = Cli::try_parse_from(["dpan", "--seed", "9", "gen", "--labels", "A,B"]).unwrap();
        assert_eq!(cli.seed, 9);
    }
}
