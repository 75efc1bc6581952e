use std::path::Path;
use std::process::{Command, Output};
use std::sync::OnceLock;

use proto_ocl_client::Client;
use proto_ocl_core::api::{ClassifyRequest, CreateLearnerRequest, SessionRequest};
use proto_ocl_core::harness::{BaseTrainReport, RunReport};
use serde_json::json;

/// One server for the whole test binary, on its own runtime thread.
fn server() -> &'static str {
    static URL: OnceLock<String> = OnceLock::new();
    URL.get_or_init(|| {
        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            let rt = tokio::runtime::Runtime::new().unwrap();
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                tx.send(format!("http://{}", listener.local_addr().unwrap())).unwrap();
                proto_ocl_server::serve(listener, std::future::pending()).await.unwrap();
            });
        });
        rx.recv().unwrap()
    })
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_proto-ocl"))
        .arg("--server")
        .arg(server())
        .args(args)
        .env_remove("PROTO_OCL_THREADS")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_config(dir: &Path, train: Option<&Path>, test: Option<&Path>) -> String {
    let mut cfg = json!({
        "partition": "60+20x2",
        "base": {"epochs": 2},
        "projection": {"d_hyper": 32, "hidden": [16]},
        "online": {"iterations": 3, "k_per_class": 4},
        "seed": 5
    });
    match (train, test) {
        (Some(tr), Some(te)) => {
            cfg["train"] = json!(tr);
            cfg["test"] = json!(te);
        }
        _ => {
            cfg["synthetic"] = json!({"classes": 10, "dim": 12, "train_per_class": 20, "test_per_class": 8, "separation": 5.0, "seed": 2});
        }
    }
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn gen_data_counts_determinism_and_usage() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = cli(&[
            "gen-data", "--classes", "10", "--dim", "64", "--train-per-class", "100", "--test-per-class", "50", "--seed", "7",
            "--out", out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(report["train_count"], 1000);
        assert_eq!(report["test_count"], 500);
    }
    for f in ["train.fvec", "test.fvec"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
    assert!(a.join("train.meta.json").exists());

    let o = cli(&["gen-data", "--classes", "10"]);
    assert_eq!(o.status.code(), Some(1));
    let o = cli(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    let o = cli(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn run_reports_are_deterministic_and_split_runs_match() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), None, None);
    let r1 = dir.path().join("r1.json");
    let r2 = dir.path().join("r2.json");
    for r in [&r1, &r2] {
        let o = cli(&["run", "--config", &cfg, "--report", r.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(String::from_utf8_lossy(&o.stdout).contains("over 2 sessions"));
    }
    let load = |p: &Path| -> RunReport { serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap() };
    let (mut a, mut b) = (load(&r1), load(&r2));
    a.config.report = None;
    b.config.report = None;
    assert_eq!(a.canonical(), b.canonical());
    assert_eq!(a.config.calibration.lambda, 0.5);

    let ckpt = dir.path().join("base.ckpt");
    let o = cli(&["base-train", "--config", &cfg, "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let base: BaseTrainReport = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(base.base.checkpoint_bytes, std::fs::metadata(&ckpt).unwrap().len());
    let o = cli(&["online-run", "--config", &cfg, "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let online: RunReport = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(online.final_metrics, a.final_metrics);
    assert_eq!(online.canonical().sessions, a.canonical().sessions);

    let o = cli(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--test", "/nonexistent.fvec"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn sweep_rows_and_parameter_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), None, None);
    let o = cli(&["sweep", "--config", &cfg, "--param", "lambda", "--values", "0.25,0.5,1.0,2.0", "--parallel", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "value,acc_all,acc_base,acc_novel,hm,time_ms,state_bytes");
    assert_eq!(lines.len(), 5);

    let out = dir.path().join("dh.csv");
    let o = cli(&["sweep", "--config", &cfg, "--param", "dh", "--values", "16,32", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 3);

    let o = cli(&["sweep", "--config", &cfg, "--param", "gamma", "--values", "1"]);
    assert_eq!(o.status.code(), Some(1));
    let o = cli(&["run", "--config", &cfg, "--partition", "65+20x2"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn data_and_numeric_failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("d");
    let o = cli(&["gen-data", "--classes", "10", "--dim", "12", "--train-per-class", "20", "--test-per-class", "5", "--out", gen.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let train = gen.join("train.fvec");
    let test = gen.join("test.fvec");

    let bytes = std::fs::read(&train).unwrap();
    let truncated = dir.path().join("trunc.fvec");
    std::fs::write(&truncated, &bytes[..bytes.len() - 3]).unwrap();
    let cfg = small_config(dir.path(), Some(&truncated), Some(&test));
    let o = cli(&["run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("fvec_truncated"), "{}", stderr(&o));

    let mut bad = bytes.clone();
    bad[0] = b'X';
    let bad_magic = dir.path().join("magic.fvec");
    std::fs::write(&bad_magic, bad).unwrap();
    let cfg = small_config(dir.path(), Some(&bad_magic), Some(&test));
    let o = cli(&["run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("fvec_bad_magic"));

    let cfg = small_config(dir.path(), Some(&train), Some(&test));
    let o = cli(&["run", "--config", &cfg, "--lr", "1e300"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("non_finite"));

    let o = Command::new(env!("CARGO_BIN_EXE_proto-ocl"))
        .args(["--server", "http://127.0.0.1:9", "run", "--synthetic"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("server_unreachable"));
}

#[tokio::test]
async fn client_drives_a_learner() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), None, None);
    let ckpt = dir.path().join("base.ckpt");
    let o = cli(&["base-train", "--config", &cfg, "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let base: BaseTrainReport = serde_json::from_slice(&o.stdout).unwrap();

    let client = Client::new(server());
    assert_eq!(client.health().await.unwrap().status, "ok");
    let info = client
        .create_learner(&CreateLearnerRequest { checkpoint: ckpt.clone(), seed: 1 })
        .await
        .unwrap();
    assert_eq!(info.classes.len(), 6);

    let data = proto_ocl_core::dataio::gen_synthetic(10, 12, 20, 8, 5.0, 2).unwrap();
    let novel = &base.partition.sessions[0];
    let samples = data.train.into_iter().filter(|s| novel.contains(&s.label)).collect();
    let resp = client
        .run_session(&info.id, &SessionRequest { samples, fvec: None, classes: None, online: Default::default() })
        .await
        .unwrap();
    assert_eq!(resp.new_classes.len(), 2);
    assert_eq!(resp.loss_trace.len(), 21);

    let queries: Vec<Vec<f64>> = data.test.iter().take(5).map(|s| s.features.clone()).collect();
    let labels = client.classify(&info.id, &ClassifyRequest { features: queries }).await.unwrap().labels;
    assert_eq!(labels.len(), 5);

    client.delete_learner(&info.id).await.unwrap();
    let err = client.learner(&info.id).await.unwrap_err();
    assert_eq!(err.code(), "learner_not_found");
    assert_eq!(err.exit_code(), 1);
}
