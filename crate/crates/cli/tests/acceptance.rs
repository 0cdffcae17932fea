//! Acceptance suite: one PASS/FAIL line per criterion. Every criterion runs
//! even when an earlier one fails; the process exits non-zero if any fail.

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dpan::authd::{self, AuthRequest, Outcome, RejectReason, Verifier};
use dpan::classifiers::{lr_gradient, softmax, ClassifierKind, Hyperparams, KnnParams, LinearParams, Matrix, Prediction};
use dpan::dataset::LoadedDataset;
use dpan::features::{self, ExtractorConfig, WidthScale};
use dpan::imgen::{self, Phenotype, PIXELS};
use dpan::pipeline::{self, Seeds, TrainOptions, TrainedAuthenticator};
use dpan::puf_sim::{self, ChallengePattern, EnvCondition};
use dpan_cli::{run, Cli};
use clap::Parser;

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok { Ok(detail) } else { Err(detail) }
}

fn synthetic() -> &'static LoadedDataset {
    static DATA: OnceLock<LoadedDataset> = OnceLock::new();
    DATA.get_or_init(|| {
        let g = puf_sim::generate_dataset(5, &puf_sim::default_conditions(), 3, 42, None).expect("default dataset");
        LoadedDataset { manifest: g.manifest, images: g.images, manifest_hash: "in-memory".into() }
    })
}

fn criterion_1() -> Verdict {
    let ws = features::init_weights(&ExtractorConfig::seeded(WidthScale::Full, 1)).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let bytes: Vec<u8> = (0..PIXELS).map(|_| rng.random()).collect();
    let t = features::preprocess(&imgen::imgen(&bytes).unwrap());
    let start = Instant::now();
    let (fv, shapes) = features::extract_traced(&ws, &t).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let sides: Vec<(usize, usize)> = shapes.iter().map(|&(h, w, _)| (h, w)).collect();
    let want = vec![(100, 110), (50, 55), (25, 27), (12, 13), (6, 6)];
    check(
        fv.len() == 18_432 && t.shape() == (200, 220, 3) && sides == want && elapsed < Duration::from_secs(60),
        format!("{} values, trajectory {:?}, {:.2}s", fv.len(), sides, elapsed.as_secs_f64()),
    )
}

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut exact = 0;
    for _ in 0..100 {
        let bytes: Vec<u8> = (0..PIXELS).map(|_| rng.random()).collect();
        let img = imgen::imgen(&imgen::parse_hex_response(&imgen::to_hex(&bytes)).unwrap()).unwrap();
        let back = imgen::from_pgm(&imgen::to_pgm(&img)).unwrap();
        if back.to_bytes() == bytes {
            exact += 1;
        }
    }
    let mut text = String::from("FFFA3F6C\n");
    text.push_str(&"00000000\n".repeat(10_999));
    let first = imgen::imgen(&imgen::parse_hex_response(&text).unwrap()).unwrap();
    let px = [first.pixel(0, 0), first.pixel(0, 1), first.pixel(0, 2), first.pixel(0, 3)];
    check(exact == 100 && px == [255, 250, 63, 108], format!("{exact}/100 bit-exact round trips, FFFA3F6C -> {px:?}"))
}

fn criterion_3() -> Verdict {
    let fp = puf_sim::new_fingerprint(7, "Alpha");
    let mean_d = |env: EnvCondition, tag: u64| {
        (0..50u64)
            .map(|i| {
                let a = puf_sim::measure(&fp, ChallengePattern::Ff, &env, tag * 1000 + 2 * i).unwrap();
                let b = puf_sim::measure(&fp, ChallengePattern::Ff, &env, tag * 1000 + 2 * i + 1).unwrap();
                puf_sim::pairwise_disagreement(&a.bytes, &b.bytes).unwrap()
            })
            .sum::<f64>()
            / 50.0
    };
    let ideal = mean_d(EnvCondition::ideal(), 1);
    let extreme = mean_d(EnvCondition::extreme(), 2);
    check(
        (ideal - 0.0595).abs() <= 0.01 && (extreme - 0.3691).abs() <= 0.02,
        format!("ideal {ideal:.4} (0.0595 +/- 0.01), extreme {extreme:.4} (0.3691 +/- 0.02)"),
    )
}

fn test_split(model: &TrainedAuthenticator, data: &LoadedDataset) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let (y, part) = model.partition_of(data).unwrap();
    let mut train = part.fit.clone();
    train.extend(&part.validation);
    train.sort_unstable();
    (y, train, part.test)
}

fn criterion_4() -> Verdict {
    let start = Instant::now();
    let data = synthetic();
    let model = pipeline::train_dpan(data, ClassifierKind::Lr, &TrainOptions::default(), Seeds::from_master(42))
        .map_err(|e| e.to_string())?;
    let (y, train, test) = test_split(&model, data);
    let imgs = |idx: &[usize]| idx.iter().map(|&i| &data.images[i].image).collect::<Vec<_>>();
    let labels = |idx: &[usize]| idx.iter().map(|&i| y[i]).collect::<Vec<_>>();
    let report = pipeline::evaluate(&model, &imgs(&test), &labels(&test), &[]).map_err(|e| e.to_string())?;
    let oracle = pipeline::centroid_oracle(&imgs(&train), &labels(&train), &imgs(&test), &labels(&test))
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    check(
        report.accuracy >= 0.95 && report.accuracy >= oracle - 0.05 && elapsed < Duration::from_secs(600),
        format!(
            "LR test accuracy {:.3} (need >= 0.95), pixel centroid oracle {:.3}, search picked {:?}, {:.0}s",
            report.accuracy,
            oracle,
            model.classifier.hyperparams,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_5() -> Verdict {
    let data = synthetic();
    let fresh = pipeline::gen_adversary(100, 0xF5E5);
    let mut ok = true;
    let mut parts = Vec::new();
    for kind in [ClassifierKind::Svm, ClassifierKind::Rf] {
        let model = pipeline::train_dpan(data, kind, &TrainOptions::default(), Seeds::from_master(42))
            .map_err(|e| e.to_string())?;
        let uids = model.labels().to_vec();
        // the adversary may claim any uid; count an image once if any claim passes
        let mut accepted = 0;
        for adv in &fresh {
            let any = uids.iter().any(|uid| {
                let req = AuthRequest { uid: uid.clone(), phenotype: adv.clone() };
                authd::authenticate(&model, &uids, &req).unwrap().outcome.is_accepted()
            });
            accepted += usize::from(any);
        }
        let (y, _, test) = test_split(&model, data);
        let imgs: Vec<&Phenotype> = test.iter().map(|&i| &data.images[i].image).collect();
        let ty: Vec<usize> = test.iter().map(|&i| y[i]).collect();
        let report = pipeline::evaluate(&model, &imgs, &ty, &[]).map_err(|e| e.to_string())?;
        let fn_rate = report.fn_rate.unwrap_or(1.0);
        ok &= accepted == 0 && fn_rate <= 0.15;
        parts.push(format!(
            "{}: {accepted}/100 adversaries accepted, FN {:.1}% (threshold {:.4})",
            kind.heading(),
            fn_rate * 100.0,
            model.threshold.unwrap_or(f64::NAN)
        ));
    }
    check(ok, parts.join("; "))
}

fn criterion_6() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (n, d, k, l2) = (20, 8, 3, 0.01);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let x = Matrix::from_rows(&rows);
    let y: Vec<usize> = (0..n).map(|i| i % k).collect();
    let mut p = LinearParams::zeros(k, d);
    p.weights.iter_mut().for_each(|w| *w = rng.random_range(-0.5..0.5));
    p.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
    // mean cross-entropy plus l2 * |W|^2, written out independently
    let loss = |p: &LinearParams| {
        let mut total = 0.0;
        for (i, row) in rows.iter().enumerate() {
            let z: Vec<f64> = (0..k).map(|c| p.bias[c] + (0..d).map(|j| p.weights[c * d + j] * row[j]).sum::<f64>()).collect();
            total -= softmax(&z)[y[i]].ln();
        }
        total / n as f64 + l2 * p.weights.iter().map(|w| w * w).sum::<f64>()
    };
    let g = lr_gradient(&p, &x, &y, l2);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let analytic: Vec<f64> = g.weights.iter().chain(&g.bias).copied().collect();
    for (idx, a) in analytic.iter().enumerate() {
        let bump = |delta: f64| {
            let mut q = p.clone();
            if idx < k * d { q.weights[idx] += delta } else { q.bias[idx - k * d] += delta }
            loss(&q)
        };
        let numeric = (bump(h) - bump(-h)) / (2.0 * h);
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8));
    }
    check(worst <= 1e-4, format!("max relative error {worst:.2e} over {} parameters", analytic.len()))
}

fn criterion_7() -> Verdict {
    let y: Vec<usize> = (0..360).map(|i| i / 72).collect();
    let s = pipeline::split(&y, 0.2, 7).map_err(|e| e.to_string())?;
    let mut all: Vec<usize> = s.folds.iter().flatten().copied().collect();
    let total = all.len();
    all.sort_unstable();
    all.dedup();
    let disjoint_exhaustive = total == all.len() && all == s.train;
    let stratified = s.folds.iter().all(|f| {
        (0..5).all(|c| {
            let n = f.iter().filter(|&&i| y[i] == c).count();
            let share = s.train.iter().filter(|&&i| y[i] == c).count() as f64 / 5.0;
            (n as f64 - share).abs() <= 1.0
        })
    });
    // 1-NN on a line with hand-picked folds; accuracies worked out by hand as 1, 1/2, 3/4
    let xs = [0.0, 1.0, 2.0, 5.2, 4.0, 6.0, 7.0, 8.0];
    let ty = [0, 0, 0, 0, 1, 1, 1, 1];
    let folds = vec![vec![0, 7], vec![1, 4], vec![2, 3, 5, 6]];
    let x = Matrix::from_rows(&xs.iter().map(|&v| vec![v]).collect::<Vec<_>>());
    let labels = vec!["a".to_string(), "b".to_string()];
    let acc = pipeline::fold_accuracies(&Hyperparams::Knn(KnnParams { k: 1 }), &x, &ty, &labels, &folds, 0)
        .map_err(|e| e.to_string())?;
    let cv = pipeline::CvScore::from_accuracies(&acc);
    let hand = acc == [1.0, 0.5, 0.75] && cv.mean == 0.75 && cv.std == (0.125f64 / 3.0).sqrt();
    check(
        disjoint_exhaustive && stratified && hand,
        format!("disjoint+exhaustive {disjoint_exhaustive}, stratified {stratified}, toy folds {acc:?} mean {} std {:.6}", cv.mean, cv.std),
    )
}

struct Counting<'a> {
    inner: &'a TrainedAuthenticator,
    calls: std::cell::Cell<usize>,
}

impl Verifier for Counting<'_> {
    fn threshold(&self) -> Option<f64> {
        self.inner.threshold
    }

    fn predict(&self, image: &Phenotype) -> dpan::Result<Prediction> {
        self.calls.set(self.calls.get() + 1);
        self.inner.predict(image)
    }
}

fn small_dataset() -> LoadedDataset {
    let conds = [EnvCondition::ideal(), EnvCondition::extreme()];
    let g = puf_sim::generate_dataset(3, &conds, 3, 8, None).unwrap();
    LoadedDataset { manifest: g.manifest, images: g.images, manifest_hash: "small".into() }
}

fn criterion_8() -> Verdict {
    let data = small_dataset();
    let opts = TrainOptions { search_budget: None, ..TrainOptions::default() };
    let lr = pipeline::train_dpan(&data, ClassifierKind::Lr, &opts, Seeds::from_master(8)).map_err(|e| e.to_string())?;
    let uids = lr.labels().to_vec();
    let counting = Counting { inner: &lr, calls: 0.into() };
    let img = &data.images[0];
    let unknown = authd::authenticate(&counting, &uids, &AuthRequest { uid: "Zeta".into(), phenotype: img.image.clone() })
        .map_err(|e| e.to_string())?;
    let skipped = unknown.outcome == Outcome::Rejected(RejectReason::UnknownUid) && counting.calls.get() == 0;

    // every rejection names the first failing check
    let mut first_failed = true;
    for l in &data.images {
        for uid in &uids {
            let p = lr.predict(&l.image).unwrap();
            let expect = if p.label != *uid {
                Outcome::Rejected(RejectReason::LabelMismatch)
            } else if p.confidence.unwrap() < lr.threshold.unwrap() {
                Outcome::Rejected(RejectReason::LowConfidence)
            } else {
                Outcome::Accepted
            };
            let got = authd::authenticate(&lr, &uids, &AuthRequest { uid: uid.clone(), phenotype: l.image.clone() }).unwrap();
            first_failed &= got.outcome == expect;
        }
    }

    let dt = pipeline::train_dpan(&data, ClassifierKind::Dt, &opts, Seeds::from_master(8)).map_err(|e| e.to_string())?;
    let dt_all = data.images.iter().all(|l| {
        authd::authenticate(&dt, &uids, &AuthRequest { uid: l.label.clone(), phenotype: l.image.clone() })
            .unwrap()
            .outcome
            == Outcome::Rejected(RejectReason::NoConfidence)
    });
    check(
        skipped && first_failed && dt_all && dt.threshold.is_none(),
        format!("unknown uid without model call {skipped}, first failed check {first_failed}, DT rejects all with no_confidence {dt_all}"),
    )
}

fn full_run(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let p = |name: &str| dir.join(name).display().to_string();
    let exec = |args: &[&str]| {
        let mut argv = vec!["dpan", "--seed", "9"];
        argv.extend_from_slice(args);
        assert_eq!(run(&Cli::parse_from(argv)).unwrap(), 0, "{args:?}");
    };
    exec(&["--out", &p("ds"), "gen", "--devices", "3", "--repeats", "3", "--conditions", "20:1.50,50:1.27"]);
    let manifest = p("ds/manifest.json");
    exec(&["--out", &p("model.dpan"), "train", "--data", &manifest, "--classifier", "svm", "--budget", "2"]);
    exec(&["--out", &p("report.json"), "eval", "--model", &p("model.dpan"), "--data", &manifest]);

    let m: dpan::dataset::DatasetManifest = serde_json::from_slice(&std::fs::read(&manifest).unwrap()).unwrap();
    let ids: Vec<String> = m.devices.iter().map(|d| d.id.clone()).collect();
    let scenario = serde_json::json!({
        "seed": 5,
        "devices": m.devices,
        "uid_list": ids,
        "model_path": "model.dpan",
        "events": [
            {"kind": "legit_auth", "device": ids[0]},
            {"kind": "legit_auth", "device": ids[1], "pattern": "P_55", "env": {"temp_c": 40.0, "voltage_v": 1.27}},
            {"kind": "wrong_uid", "device": ids[2], "claimed_uid": ids[0]},
            {"kind": "random_adversary"},
            {"kind": "near_miss_adversary", "device": ids[1], "extra_flip_fraction": 0.1}
        ]
    });
    std::fs::write(dir.join("scenario.json"), serde_json::to_vec_pretty(&scenario).unwrap()).unwrap();
    exec(&["--out", &p("events.jsonl"), "simulate", "--scenario", &p("scenario.json")]);
    ["ds/manifest.json", "model.dpan", "report.json", "events.jsonl"]
        .iter()
        .map(|f| (f.to_string(), std::fs::read(dir.join(f)).unwrap()))
        .collect()
}

fn criterion_9() -> Verdict {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = full_run(a.path());
    let second = full_run(b.path());
    let differing: Vec<&str> = first.iter().zip(&second).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0.as_str()).collect();
    let sizes: Vec<String> = first.iter().map(|(n, b)| format!("{n} {}B", b.len())).collect();
    check(differing.is_empty(), format!("identical: {}; differing: {differing:?}", sizes.join(", ")))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("shape fidelity", criterion_1),
        ("IMGEN exactness", criterion_2),
        ("simulator calibration", criterion_3),
        ("end-to-end accuracy", criterion_4),
        ("zero false positives", criterion_5),
        ("gradient correctness", criterion_6),
        ("CV correctness", criterion_7),
        ("check ordering", criterion_8),
        ("determinism", criterion_9),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let verdict = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match verdict {
            Ok(detail) => println!("criterion {n} PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} FAIL {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
