use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use polyfhe::pipeline::{load_gallery, read_dataset_csv, Mode, ParamsStore, Pipeline, PipelineConfig};
use polyfhe::polyprotect::PolyProtectParams;

fn polyfhe(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polyfhe"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "stderr: {}", stderr(&o));
    o
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["--frobnicate", "bench-sum"],
        vec!["nope"],
        vec!["bench-sum", "--sizes", "8..2"],
        vec!["ablation", "--param", "degree", "--values", "1"],
        vec!["eval-leakage", "--variants", "FHE-only"],
        vec!["identify"],
    ] {
        let o = polyfhe(dir.path(), &args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(stderr(&o).contains("Usage") || stderr(&o).contains("invalid value"), "{args:?}");
    }
}

#[test]
fn data_errors_exit_1_with_error_name() {
    let dir = tempfile::tempdir().unwrap();
    let o = polyfhe(dir.path(), &["gen-params", "--m", "5", "--c-range", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("InfeasibleParams"), "{}", stderr(&o));

    let o = polyfhe(
        dir.path(),
        &["identify", "--gallery", "missing", "--params-store", "missing.json", "--probes", "x.csv"],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.json"), "{}", stderr(&o));

    fs::write(dir.path().join("bad.toml"), "[ctx]\nslots = 4\n").unwrap();
    let o = polyfhe(dir.path(), &["--config", "bad.toml", "gen-params"]);
    assert_eq!(o.status.code(), Some(1));
}

fn csv_without_wall(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect()
}

#[test]
fn bench_sum_layout_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        ok(polyfhe(
            dir.path(),
            &["bench-sum", "--sizes", "2..64", "--repeats", "1", "--seed", "4", "--out-dir", out],
        ));
    }
    let a = csv_without_wall(&dir.path().join("a/bench_sum.csv"));
    assert_eq!(a, csv_without_wall(&dir.path().join("b/bench_sum.csv")));
    assert_eq!(a[0], "n,method,rotations,mults");
    assert_eq!(a.len(), 1 + 6 * 3);
    for method in ["naive", "dft", "fold"] {
        assert_eq!(a.iter().filter(|l| l.split(',').nth(1) == Some(method)).count(), 6);
    }
    assert!(a.contains(&"64,fold,6,0".to_string()));
    assert!(a.contains(&"64,naive,63,0".to_string()));

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("a/run-manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "bench-sum");
    assert_eq!(manifest["seed"], 4);
    assert_eq!(manifest["outputs"][0], "bench_sum.csv");
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert!(dir.path().join("a/config.toml").exists());
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), "seed = 11\n[polyprotect]\nm = 6\noverlap = 2\n").unwrap();
    ok(polyfhe(dir.path(), &["--config", "run.toml", "gen-params", "--out-dir", "x"]));
    let p = PolyProtectParams::from_json(&fs::read_to_string(dir.path().join("x/params.json")).unwrap()).unwrap();
    assert_eq!((p.m(), p.overlap(), p.seed()), (6, 2, 11));

    ok(polyfhe(
        dir.path(),
        &["--config", "run.toml", "--seed", "12", "gen-params", "--overlap", "5", "--out-dir", "y"],
    ));
    let q = PolyProtectParams::from_json(&fs::read_to_string(dir.path().join("y/params.json")).unwrap()).unwrap();
    assert_eq!((q.m(), q.overlap(), q.seed()), (6, 5, 12));
    let persisted = fs::read_to_string(dir.path().join("y/config.toml")).unwrap();
    assert!(persisted.contains("seed = 12"));
    assert!(persisted.contains("overlap = 5"));
}

#[test]
fn enroll_identify_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(polyfhe(d, &["gen-data", "--num-ids", "5", "--samples-per-id", "2", "--dim", "96", "--out-dir", "data"]));
    ok(polyfhe(d, &["enroll", "--data", "data/dataset.csv", "--out-dir", "enr"]));
    assert!(d.join("enr/gallery/manifest.json").exists());
    assert!(d.join("enr/gallery/blobs").is_dir());
    let o = ok(polyfhe(
        d,
        &[
            "identify",
            "--gallery",
            "enr/gallery",
            "--params-store",
            "enr/params_store.json",
            "--probes",
            "data/dataset.csv",
            "--out-dir",
            "id",
        ],
    ));
    let out = stdout(&o);
    let rank1: Vec<u32> = out
        .lines()
        .filter(|l| l.starts_with("probe "))
        .map(|l| l.split_whitespace().nth(4).unwrap().parse().unwrap())
        .collect();
    assert_eq!(rank1.len(), 10);
    let ranking = fs::read_to_string(d.join("id/ranking.csv")).unwrap();
    assert!(ranking.starts_with("probe,true_id,rank,subject_id,score\n"));
    assert_eq!(ranking.lines().count(), 1 + 10 * 5);

    let pipe = Pipeline::new(PipelineConfig::default()).unwrap();
    let params: Vec<PolyProtectParams> =
        serde_json::from_str(&fs::read_to_string(d.join("enr/params_store.json")).unwrap()).unwrap();
    let store: ParamsStore = params.into_iter().collect();
    let gallery = load_gallery(&d.join("enr/gallery"), &pipe.ctx, &store).unwrap();
    let probes = read_dataset_csv(fs::File::open(d.join("data/dataset.csv")).unwrap()).unwrap();
    for (p, &cli_top) in probes.iter().zip(&rank1) {
        let lib = pipe.identify(p, &gallery, &store, Mode::Encrypted).unwrap();
        assert_eq!(lib[0].0, cli_top);
    }
}

#[test]
fn fit_invsqrt_outputs() {
    let dir = tempfile::tempdir().unwrap();
    ok(polyfhe(dir.path(), &["fit-invsqrt", "--degree", "6", "--points", "50"]));
    let fit: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/invsqrt.json")).unwrap()).unwrap();
    assert_eq!(fit["degree"], 6);
    assert_eq!(fit["domain"][0], 1e-3);
    assert_eq!(fit["coeffs"].as_array().unwrap().len(), 7);
    let curve = fs::read_to_string(dir.path().join("out/invsqrt_curve.csv")).unwrap();
    assert!(curve.starts_with("x,p_x,rel_err\n"));
    assert_eq!(curve.lines().count(), 51);
}

#[test]
fn leakage_and_ablation_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(polyfhe(d, &["gen-data", "--num-ids", "20", "--samples-per-id", "3", "--dim", "64", "--out-dir", "data"]));
    ok(polyfhe(
        d,
        &["eval-leakage", "--data", "data/dataset.csv", "--variants", "None,MRL+FHE", "--out-dir", "leak"],
    ));
    let csv = fs::read_to_string(d.join("leak/leakage.csv")).unwrap();
    assert!(csv.starts_with("attribute,variant,a_o,a_p,pg_x100,sr,chance\n"));
    assert_eq!(csv.lines().count(), 1 + 2 * 3);

    ok(polyfhe(
        d,
        &["ablation", "--data", "data/dataset.csv", "--param", "c_range", "--values", "2,50", "--out-dir", "abl"],
    ));
    let csv = fs::read_to_string(d.join("abl/ablation_c_range.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "param,value,attribute,accuracy,chance,error");
    assert_eq!(lines.len(), 1 + 2 * 3);
    assert!(lines[1].contains("InfeasibleParams"));
    assert!(lines[4].ends_with(','));
}
