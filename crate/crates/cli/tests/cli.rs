use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use seqset::data::load_orders_into;
use seqset::eval::{l1_to_distribution, planted_universe};
use seqset::models::Checkpoint;
use seqset::sizebias::{biased_sizes, largest_remainder};
use seqset::{load_orders, ItemSet, ItemUniverse};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqset"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("failed to spawn seqset")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn field(report: &str, key: &str) -> f64 {
    report
        .lines()
        .find_map(|l| l.strip_prefix(key).filter(|rest| rest.starts_with(' ')))
        .unwrap_or_else(|| panic!("no {key} in {report}"))
        .trim()
        .parse()
        .unwrap()
}

const TOY: &str = "a,b\na\nb,c\na,b,c\nc\na,b\nb\na,c\nb,c\na\n";

fn trained(dir: &Path, model: &str) {
    fs::write(dir.join("toy.txt"), TOY).unwrap();
    let out = ok(
        dir,
        &["train", "--model", model, "--train", "toy.txt", "--epochs", "50", "--seed", "7", "--out", "m.ckpt"],
    );
    assert_eq!(out.lines().count(), 50);
}

#[test]
fn train_smoke() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path(), "setnn");
    let ckpt = Checkpoint::load(dir.path().join("m.ckpt")).unwrap();
    assert_eq!(ckpt.d, 10);
    assert_eq!(ckpt.training.as_ref().unwrap().n_train, 10);
    ckpt.to_model().unwrap();
    let last = ok(dir.path(), &["train", "--model", "setnn", "--train", "toy.txt", "--epochs", "1", "--out", "n.ckpt"]);
    let nll: f64 = last.split_whitespace().nth(3).unwrap().parse().unwrap();
    assert!(nll.is_finite());
    assert!(dir.path().join("m.ckpt.manifest.json").exists());
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("toy.txt"), TOY).unwrap();
    let out = run(dir.path(), &["train", "--model", "xyz", "--train", "toy.txt", "--out", "m.ckpt"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("possible values: gru2set, setnn, mrw"));
    let out = run(
        dir.path(),
        &["generate", "--model", "m.ckpt", "--count", "3", "--size-bias", "--size-dist", "s.tsv", "--out", "g.txt"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["evaluate", "--test", "missing.txt", "--pred", "missing.txt"]);
    assert_eq!(out.status.code(), Some(1));
    trained(dir.path(), "gru2set");
    let out = run(
        dir.path(),
        &["train", "--model", "gru2set", "--train", "toy.txt", "--dim", "4", "--resume", "m.ckpt", "--out", "r.ckpt"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimension mismatch"));
}

#[test]
fn resume_continues_training() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path(), "mrw");
    ok(
        dir.path(),
        &["train", "--model", "mrw", "--train", "toy.txt", "--epochs", "2", "--resume", "m.ckpt", "--out", "r.ckpt"],
    );
    let a = Checkpoint::load(dir.path().join("m.ckpt")).unwrap();
    let b = Checkpoint::load(dir.path().join("r.ckpt")).unwrap();
    assert_eq!(a.graph_edges, b.graph_edges);
    assert_ne!(a.parameters, b.parameters);
}

#[test]
fn generate_counts_and_size_files() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path(), "setnn");
    ok(dir.path(), &["generate", "--model", "m.ckpt", "--count", "1000", "--workers", "3", "--out", "g.txt"]);
    assert_eq!(fs::read_to_string(dir.path().join("g.txt")).unwrap().lines().count(), 1000);

    fs::write(dir.path().join("one.tsv"), "1\t1.0\n").unwrap();
    ok(dir.path(), &["generate", "--model", "m.ckpt", "--count", "200", "--size-dist", "one.tsv", "--out", "s.txt"]);
    let text = fs::read_to_string(dir.path().join("s.txt")).unwrap();
    assert_eq!(text.lines().count(), 200);
    assert!(text.lines().all(|l| !l.contains(',')));
}

#[test]
fn size_bias_follows_largest_remainder_counts() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path(), "setnn");
    ok(dir.path(), &["generate", "--model", "m.ckpt", "--count", "500", "--size-bias", "--out", "b.txt"]);
    let ckpt = Checkpoint::load(dir.path().join("m.ckpt")).unwrap();
    let stats = ckpt.training.unwrap();
    let plan = biased_sizes(&stats.size_distribution().unwrap(), ckpt.n, stats.n_train).unwrap();
    let expected = largest_remainder(plan.biased.probs(), 500);
    let generated = load_orders(dir.path().join("b.txt")).unwrap().orders;
    let mut counts = generated.size_counts();
    counts.resize(expected.len(), 0);
    assert_eq!(counts, expected);
}

#[test]
fn hybrid_takes_singletons_from_training_data() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path(), "setnn");
    fs::write(dir.path().join("hist.txt"), "a\na\na\n").unwrap();
    ok(dir.path(), &["generate", "--model", "m.ckpt", "--count", "300", "--hybrid", "hist.txt", "--out", "h.txt"]);
    let text = fs::read_to_string(dir.path().join("h.txt")).unwrap();
    assert_eq!(text.lines().count(), 300);
    let singles: Vec<&str> = text.lines().filter(|l| !l.contains(',')).collect();
    assert!(!singles.is_empty());
    assert!(singles.iter().all(|l| *l == "a"));
}

#[test]
fn evaluate_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("t.txt"), "a,b\na\nc\n").unwrap();
    fs::write(d.join("x.txt"), "x\ny,z\n").unwrap();
    let same = ok(d, &["evaluate", "--test", "t.txt", "--pred", "t.txt"]);
    assert_eq!(field(&same, "l1"), 0.0);
    assert_eq!(field(&same, "overlap"), 1.0);
    let disjoint = ok(d, &["evaluate", "--test", "t.txt", "--pred", "x.txt"]);
    assert_eq!(field(&disjoint, "l1"), 2.0);
    // 21 shared and 19 disjoint lines out of 40
    fs::write(d.join("p.txt"), "a\n".repeat(21) + &"b\n".repeat(19)).unwrap();
    fs::write(d.join("q.txt"), "a\n".repeat(21) + &"c\n".repeat(19)).unwrap();
    let fixture = ok(d, &["evaluate", "--test", "p.txt", "--pred", "q.txt"]);
    assert!((field(&fixture, "l1") - 0.95).abs() < 1e-6);
    assert!((field(&fixture, "overlap") - 0.525).abs() < 1e-6);
    let json = ok(d, &["evaluate", "--test", "p.txt", "--pred", "q.txt", "--json", "--out", "r.json"]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    for key in ["l1", "overlap", "sizewise_overlap", "sizes_pred", "sizes_test", "n_test", "n_pred"] {
        assert!(v.get(key).is_some(), "{key}");
    }
    assert!(d.join("r.json.manifest.json").exists());
}

#[test]
fn oracle_cross_checks() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path(), "setnn");
    let single = ok(dir.path(), &["oracle", "--model", "m.ckpt", "--set", "b"]);
    assert_eq!(field(&single, "exact_logp"), field(&single, "is_logp"));
    let triple = ok(dir.path(), &["oracle", "--model", "m.ckpt", "--set", "a,b,c", "--samples", "200"]);
    assert!(field(&triple, "recursion_diff") <= 1e-10);
    assert!(field(&triple, "max_residual") <= 1e-10);
    assert!((field(&triple, "exact_logp") - field(&triple, "is_logp")).abs() < 5.0 * field(&triple, "is_stderr_log") + 1e-9);
}

#[test]
fn oracle_on_unreachable_and_oversized_sets() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("pairs.txt"), "a,b\nc,d\n").unwrap();
    ok(d, &["train", "--model", "gru2set", "--train", "pairs.txt", "--epochs", "1", "--out", "m.ckpt"]);
    let out = ok(d, &["oracle", "--model", "m.ckpt", "--set", "a,c"]);
    assert!(out.contains("-inf") && out.contains("unreachable"));

    let labels: Vec<String> = (0..9).map(|i| format!("x{i}")).collect();
    fs::write(d.join("big.txt"), labels.join(",") + "\n").unwrap();
    ok(d, &["train", "--model", "setnn", "--train", "big.txt", "--epochs", "1", "--out", "b.ckpt"]);
    let out = run(d, &["oracle", "--model", "b.ckpt", "--set", &labels.join(",")]);
    assert_eq!(out.status.code(), Some(1));
}

fn read_truth(path: &Path, universe: &ItemUniverse) -> BTreeMap<ItemSet, f64> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let (set, p) = l.split_once('\t').unwrap();
            (universe.parse_set(set).unwrap(), p.parse().unwrap())
        })
        .collect()
}

#[test]
fn plant_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = |test: &'static str, out: &'static str| {
        ["plant", "--items", "4", "--train", "100", "--test", test, "--seed", "5", "--out", out]
    };
    ok(d, &args("1000", "a"));
    ok(d, &args("1000", "b"));
    for suffix in [".train.txt", ".test.txt", ".truth.tsv"] {
        assert_eq!(
            fs::read(d.join(format!("a{suffix}"))).unwrap(),
            fs::read(d.join(format!("b{suffix}"))).unwrap()
        );
    }
    let mut universe = planted_universe(4);
    let truth = read_truth(&d.join("a.truth.tsv"), &universe);
    assert!((truth.values().sum::<f64>() - 1.0).abs() <= 1e-9);

    ok(d, &args("100000", "c"));
    let small = load_orders_into(d.join("a.test.txt"), &mut universe).unwrap().0;
    let large = load_orders_into(d.join("c.test.txt"), &mut universe).unwrap().0;
    assert_eq!(universe.len(), 4);
    assert!(l1_to_distribution(&large, &truth) < l1_to_distribution(&small, &truth));
}
