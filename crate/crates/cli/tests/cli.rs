use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rarpinn::oracle::{sample_grid, GridSpec, OneSoliton, OneSolitonSpec};
use rarpinn_cli::io::read_dataset;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rarpinn"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stderr),
        String::from_utf8_lossy(&out.stdout)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &str = r#"
[grid]
nx = 30
nt = 11

[network]
hidden_layers = 1
hidden_width = 6

[sampling]
n0 = 6
nb = 5
nf = 30

[rar]
m = 3
epsilon0 = 1e-12
max_rounds = 2
candidate_pool = 60
refit_iterations = 5

[adam]
iterations = 15

[lbfgs]
max_iters = 5
"#;

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn summary_value(text: &str, key: &str) -> toml::Value {
    let t: toml::Table = toml::from_str(text).unwrap();
    t.get(key).unwrap_or_else(|| panic!("no `{key}` in {text}")).clone()
}

#[test]
fn generate_writes_full_grid_with_exact_values() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gen");
    let summary = ok(&["generate", "--preset", "one-soliton", "--out", s(&out)]);
    assert_eq!(summary_value(&summary, "rows").as_integer(), Some(60300));

    let text = std::fs::read_to_string(out.join("dataset.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("x,t,u1,v1,u2,v2"));
    assert_eq!(text.lines().count(), 60301);

    let rows = read_dataset(&out.join("dataset.csv")).unwrap();
    let grid = GridSpec::new(-10.0, 10.0, -2.0, 2.0, 300, 201).unwrap();
    let exact = sample_grid(&OneSoliton::new(OneSolitonSpec::preset()).unwrap(), &grid).unwrap();
    assert_eq!(rows, exact, "round trip must be bit-exact");

    let manifest: toml::Table = toml::from_str(&std::fs::read_to_string(out.join("manifest.toml")).unwrap()).unwrap();
    assert_eq!(manifest["run"]["mode"].as_str(), Some("generate"));
    assert!(manifest["config"]["grid"]["nx"].as_integer() == Some(300));
    assert!(manifest["seeds"].get("init").is_some());
}

#[test]
fn evaluate_identical_files_reports_zero() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    let cfg = write_config(dir.path(), "g.toml", "[grid]\nnx = 40\nnt = 9\n");
    ok(&["generate", "--config", s(&cfg), "--out", s(&gen)]);
    let data = gen.join("dataset.csv");
    let eval_cfg = write_config(
        dir.path(),
        "e.toml",
        &format!("[paths]\nprediction = {:?}\nreference = {:?}\n", s(&data), s(&data)),
    );
    let summary = ok(&["evaluate", "--config", s(&eval_cfg), "--out", s(&dir.path().join("ev"))]);
    assert_eq!(summary_value(&summary, "rel_l2_h1").as_float(), Some(0.0));
    assert_eq!(summary_value(&summary, "rel_l2_h2").as_float(), Some(0.0));
}

fn point_set(dir: &Path, set: &str) -> Vec<String> {
    std::fs::read_to_string(dir.join("points.csv"))
        .unwrap()
        .lines()
        .filter(|l| l.starts_with(&format!("{set},")))
        .map(str::to_owned)
        .collect()
}

#[test]
fn forward_rar_and_no_refinement_share_initial_and_boundary_sets() {
    let dir = tempfile::tempdir().unwrap();
    let rar_cfg = write_config(dir.path(), "rar.toml", TINY);
    let base_cfg = write_config(dir.path(), "base.toml", &TINY.replace("max_rounds = 2", "max_rounds = 0"));
    let (a, b) = (dir.path().join("rar"), dir.path().join("base"));
    let sa = ok(&["train-forward", "--config", s(&rar_cfg), "--seed", "11", "--out", s(&a)]);
    let sb = ok(&["train-forward", "--config", s(&base_cfg), "--seed", "11", "--out", s(&b)]);

    for set in ["initial", "boundary"] {
        let pa = point_set(&a, set);
        assert!(!pa.is_empty());
        assert_eq!(pa, point_set(&b, set), "{set} sets differ");
    }
    assert_eq!(point_set(&a, "refined").len(), 6);
    assert!(point_set(&b, "refined").is_empty());
    assert_eq!(summary_value(&sa, "points_added").as_integer(), Some(6));
    assert_eq!(summary_value(&sb, "points_added").as_integer(), Some(0));

    for f in ["manifest.toml", "losses.csv", "prediction.csv", "exact.csv", "error.csv", "residual.csv", "params.txt"] {
        assert!(a.join(f).is_file(), "missing {f}");
    }
    let losses = std::fs::read_to_string(a.join("losses.csv")).unwrap();
    assert_eq!(losses.lines().next(), Some("phase,iteration,loss0,lossb,lossf,total"));
    assert!(losses.contains("\nrefit1,") && losses.contains("\nlbfgs,"));
    let residual = std::fs::read_to_string(a.join("residual.csv")).unwrap();
    assert_eq!(residual.lines().next(), Some("x,t,score"));
    assert_eq!(residual.lines().count(), 30 * 11 + 1);

    let manifest = std::fs::read_to_string(a.join("manifest.toml")).unwrap();
    assert!(manifest.contains("grid_note"), "11 snapshots on [-2, 2] disagree with the quoted spacing");
}

#[test]
fn forward_runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", TINY);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let sa = ok(&["train-forward", "--config", s(&cfg), "--seed", "3", "--single-thread", "--out", s(&a)]);
    let sb = ok(&["train-forward", "--config", s(&cfg), "--seed", "3", "--single-thread", "--out", s(&b)]);
    assert_eq!(sa, sb);
    for f in ["params.txt", "losses.csv", "points.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let manifest: toml::Table = toml::from_str(&std::fs::read_to_string(a.join("manifest.toml")).unwrap()).unwrap();
    assert_eq!(manifest["run"]["single_thread"].as_bool(), Some(true));
    assert_eq!(manifest["run"]["seed"].as_str(), Some("3"));
}

#[test]
fn inverse_reports_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &format!("{TINY}\n[inverse]\nn_u = 40\nrefine = true\nm = 2\nepsilon0 = 1e-12\nmax_rounds = 1\ncandidate_pool = 50\n"));
    let out = dir.path().join("inv");
    let summary = ok(&["train-inverse", "--config", s(&cfg), "--out", s(&out)]);
    let lam = summary_value(&summary, "lambda_hat");
    assert_eq!(lam.as_array().unwrap().len(), 4);
    assert!(summary_value(&summary, "equation").as_str().unwrap().contains("h1_xx"));
    assert_eq!(summary_value(&summary, "n_u").as_integer(), Some(42));
}

#[test]
fn ingest_preset_trains_from_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let grid = "[domain]\nx_min = -6.0\nx_max = 6.0\nt_min = -0.8\nt_max = 0.8\n\n[grid]\nnx = 25\nnt = 9\n";
    let gen_cfg = write_config(dir.path(), "g.toml", grid);
    let gen = dir.path().join("gen");
    ok(&["generate", "--config", s(&gen_cfg), "--out", s(&gen)]);

    let body = format!(
        "preset = \"three-soliton-ingest\"\n{}\n[paths]\ndataset = \"gen/dataset.csv\"\n",
        TINY.replace("nx = 30\nnt = 11", "nx = 25\nnt = 9")
    );
    let cfg = write_config(dir.path(), "ingest.toml", &body);
    let summary = ok(&["train-forward", "--config", s(&cfg), "--out", s(&dir.path().join("fit"))]);
    assert!(summary_value(&summary, "rel_l2_h1").as_float().unwrap().is_finite());

    // Same dataset on the wrong grid is rejected with the offending line.
    let bad = write_config(dir.path(), "bad.toml", &body.replace("nt = 9", "nt = 8"));
    let out = run(&["train-forward", "--config", s(&bad), "--out", s(&dir.path().join("bad"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("rows") && err.contains("dataset.csv"), "{err}");
}

#[test]
fn errors_carry_context_and_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();

    let cfg = write_config(dir.path(), "typo.toml", "[adam]\nlearning_rat = 0.1\n");
    let out = run(&["train-forward", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("learning_rat") && err.contains("typo.toml"), "{err}");

    let out = run(&["generate", "--preset", "four-soliton", "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown preset"));

    // Output directory holding the input dataset under an output name.
    let gen = dir.path().join("gen");
    ok(&[
        "generate",
        "--config",
        s(&write_config(dir.path(), "g.toml", "[grid]\nnx = 10\nnt = 5\n")),
        "--out",
        s(&gen),
    ]);
    let data = gen.join("dataset.csv");
    let pred = gen.join("error.csv");
    std::fs::copy(&data, &pred).unwrap();
    let cfg = write_config(
        dir.path(),
        "e.toml",
        &format!("[paths]\nprediction = {:?}\nreference = {:?}\n", s(&pred), s(&data)),
    );
    let out = run(&["evaluate", "--config", s(&cfg), "--out", s(&gen)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("overwritten"));
}
