use std::path::Path;
use std::process::{Command, Output};

fn dpan(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpan"))
        .current_dir(dir)
        .env_remove("DPAN_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn sorted_files(dir: &Path, ext: &str) -> Vec<std::path::PathBuf> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    v.sort();
    v
}

#[test]
fn exported_hex_ingests_to_identical_images() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let gen = dpan(d, &["--out", "ds", "gen", "--devices", "2", "--repeats", "2", "--conditions", "20:1.5", "--export-hex"]);
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    let ing = dpan(d, &["--out", "ingested", "ingest", "--in", "ds/hex"]);
    assert!(ing.status.success(), "{}", String::from_utf8_lossy(&ing.stderr));

    let a = sorted_files(&d.join("ds"), "pgm");
    let b = sorted_files(&d.join("ingested"), "pgm");
    assert_eq!(a.len(), 2 * 3 * 2);
    let names = |v: &[std::path::PathBuf]| v.iter().map(|p| p.file_name().unwrap().to_owned()).collect::<Vec<_>>();
    assert_eq!(names(&a), names(&b));
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{}", x.display());
    }
    assert!(d.join("ingested/provenance.json").exists());
}

#[test]
fn ingest_rejects_a_short_response() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::create_dir(d.join("raw")).unwrap();
    std::fs::write(d.join("raw/Alpha_P_FF_20C_1.50V_r0.txt"), "FFFFFFFF\n".repeat(10_999)).unwrap();
    let out = dpan(d, &["--out", "ds", "ingest", "--in", "raw"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(dpan(tmp.path(), &["gen", "--devices", "1"]).status.code(), Some(2));
    assert_eq!(dpan(tmp.path(), &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn auth_exit_codes_follow_the_decision() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let run = |args: &[&str]| {
        let o = dpan(d, args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    run(&["--out", "ds", "gen", "--devices", "2", "--repeats", "3", "--conditions", "20:1.5,50:1.27"]);
    run(&["--out", "dt.dpan", "train", "--data", "ds/manifest.json", "--classifier", "dt", "--no-search"]);

    let image = sorted_files(&d.join("ds"), "pgm").remove(0);
    let image = image.to_str().unwrap();
    let unknown = dpan(d, &["auth", "--model", "dt.dpan", "--uid", "Nobody", "--image", image]);
    assert_eq!(unknown.status.code(), Some(1));
    let body: serde_json::Value = serde_json::from_slice(&unknown.stdout).unwrap();
    assert_eq!(body["reason"], "unknown_uid");

    let no_conf = dpan(d, &["auth", "--model", "dt.dpan", "--uid", "Alpha", "--image", image]);
    assert_eq!(no_conf.status.code(), Some(1));
    let body: serde_json::Value = serde_json::from_slice(&no_conf.stdout).unwrap();
    assert_eq!(body["reason"], "no_confidence");

    let missing = dpan(d, &["auth", "--model", "absent.dpan", "--uid", "Alpha", "--image", image]);
    assert_eq!(missing.status.code(), Some(3));
}
