use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const CONFIG: &str = r#"
task = "regression"
methods = ["mcd"]
seeds = [2]
samples = 4
hidden = [12]

[dataset]
source = "synthetic"
size = 240

[train]
epochs = 3

[train.sghmc]
pretrain_epochs = 1
burn_in = 10
thinning = 2
samples = 4

[qat]
epochs = 1
"#;

fn qbnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qbnn")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = qbnn(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    (dir, cfg)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn train_then_eval_reproduces_float_rows() {
    let (dir, cfg) = setup();
    let (a, model) = (dir.path().join("train.csv"), dir.path().join("model.json"));
    ok(&["train", "--config", s(&cfg), "--out", s(&a), "--save", s(&model)]);
    let b = dir.path().join("eval.csv");
    ok(&["eval", "--config", s(&cfg), "--mode", "float", "--model", s(&model), "--out", s(&b)]);
    assert_eq!(read(&a), read(&b));
    assert!(read(&a).starts_with("method,mode,bits_w,bits_a,seed,dataset,split,metric,value\nmcd,float,32,32,2,synthetic,test,rmse,"));
}

#[test]
fn qat_then_eval_reproduces_quantised_rows() {
    let (dir, cfg) = setup();
    let (a, q) = (dir.path().join("qat.csv"), dir.path().join("q.json"));
    ok(&["qat", "--config", s(&cfg), "--bits-w", "6", "--bits-a", "4", "--out", s(&a), "--save", s(&q)]);
    let text = read(&a);
    assert!(text.contains("mcd,simulated,6,4,2,") && text.contains("mcd,integer,6,4,2,"));
    assert!(!text.contains(",float,"));
    let b = dir.path().join("eval.csv");
    ok(&["eval", "--config", s(&cfg), "--mode", "integer", "--quantised", s(&q), "--out", s(&b)]);
    let integer_rows: String = text.lines().filter(|l| l.contains(",integer,")).map(|l| format!("{l}\n")).collect();
    assert_eq!(read(&b).lines().skip(1).map(|l| format!("{l}\n")).collect::<String>(), integer_rows);
}

#[test]
fn repeated_invocations_are_byte_identical() {
    let (dir, cfg) = setup();
    for cmd in ["train", "qat", "sweep"] {
        let a = dir.path().join(format!("{cmd}-a.csv"));
        let b = dir.path().join(format!("{cmd}-b.csv"));
        ok(&[cmd, "--config", s(&cfg), "--seed", "7", "--out", s(&a)]);
        ok(&[cmd, "--config", s(&cfg), "--seed", "7", "--out", s(&b)]);
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap(), "{cmd}");
    }
    let c = dir.path().join("other-seed.csv");
    ok(&["train", "--config", s(&cfg), "--seed", "8", "--out", s(&c)]);
    assert_ne!(read(&c), read(&dir.path().join("train-a.csv")));
}

#[test]
fn sweep_and_plot_data() {
    let (dir, cfg) = setup();
    let csv = dir.path().join("sweep.csv");
    ok(&["sweep", "--config", s(&cfg), "--method", "pointwise", "--out", s(&csv)]);
    let tables = dir.path().join("tables");
    let listed = ok(&["plot-data", "--input", s(&csv), "--out", s(&tables)]);
    assert_eq!(listed.lines().count(), 2);
    assert!(tables.join("synthetic__test__rmse.csv").exists());
    assert!(tables.join("synthetic__test__nll.csv").exists());
}

#[test]
fn bad_input_fails_cleanly() {
    let (dir, cfg) = setup();
    let out = dir.path().join("x.csv");
    let r = qbnn(&["train", "--config", s(&cfg), "--mode", "fixed", "--out", s(&out)]);
    assert!(!r.status.success());

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, format!("{CONFIG}\nsurprise = 1\n").replace("[dataset]", "colour = 1\n[dataset]")).unwrap();
    let r = qbnn(&["train", "--config", s(&bad), "--out", s(&out)]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("unknown field"));

    let r = qbnn(&["qat", "--config", s(&cfg), "--bits-w", "4", "--bits-a", "7", "--out", s(&out)]);
    assert!(!r.status.success());
    let r = qbnn(&["eval", "--config", s(&cfg), "--out", s(&out)]);
    assert!(!r.status.success(), "eval without a single mode must fail");
}
