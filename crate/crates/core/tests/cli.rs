//! End-to-end checks of the `ivtlab` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const CONFIG: &str = r#"
# Small two-task run.
name = "tiny"
seeds = [0, 1, 2]

[dataset]
kind = "gaussian"
dim = 2
classes = 4
separation = 4.0
train_per_class = 20
test_per_class = 20
seed = 3

[stream]
base_classes = 2
num_tasks = 2

[method]
archetype = "quad_reg"
use_ivt = true

[method.model]
hidden_dims = [8]
activation = "tanh"

[method.train]
epochs = 4
batch_size = 8
learning_rate = 0.1
ivt_interval = 2
regularizer_strength = 10.0
"#;

fn ivtlab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ivtlab"))
        .args(args)
        .current_dir(cwd)
        .env_remove("IVTLAB_OUTPUT_ROOT")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn run_bundle(dir: &Path, cfg: &str, out: &str) -> serde_json::Value {
    let o = ivtlab(&["run", cfg, "--out", out], dir);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    json(&dir.join(out).join("manifest.json"))
}

#[test]
fn run_writes_a_bundle_and_guards_overwrites() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_config(dir, "tiny.toml", CONFIG);
    let manifest = run_bundle(dir, "tiny.toml", "b");
    let digest = manifest["config_digest"].as_str().unwrap().to_string();
    assert_eq!(manifest["seeds"], serde_json::json!([0, 1, 2]));

    let metrics = json(&dir.join("b/metrics.json"));
    assert_eq!(metrics["seeds"].as_array().unwrap().len(), 3);
    assert_eq!(metrics["aggregate"]["runs"], 3);
    let table = fs::read_to_string(dir.join("b/table.txt")).unwrap();
    let (aa, la, fm) = (
        table.find("AA↑").unwrap(),
        table.find("LA↑").unwrap(),
        table.find("FM↓").unwrap(),
    );
    assert!(aa < la && la < fm);

    for seed in 0..3 {
        let sd = dir.join(format!("b/seed-{seed}"));
        for t in 1..=2 {
            assert!(sd.join(format!("checkpoints/task{t}.ckpt")).is_file());
        }
        for f in ["accuracy.csv", "ivt_log.csv"] {
            let text = fs::read_to_string(sd.join(f)).unwrap();
            assert!(text.lines().skip(1).all(|l| l.starts_with(&digest)), "{f}");
        }
        for f in ["stream.json", "timing.json"] {
            assert_eq!(json(&sd.join(f))["config_digest"].as_str().unwrap(), digest);
        }
    }
    assert!(fs::read_to_string(dir.join("b/config.toml"))
        .unwrap()
        .contains(&digest));

    let before = fs::read(dir.join("b/seed-1/accuracy.csv")).unwrap();
    let again = ivtlab(&["run", "tiny.toml", "--out", "b"], dir);
    assert_eq!(code(&again), 1);
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    let forced = ivtlab(&["run", "tiny.toml", "--out", "b", "--force"], dir);
    assert_eq!(code(&forced), 0);
    assert_eq!(fs::read(dir.join("b/seed-1/accuracy.csv")).unwrap(), before);
}

#[test]
fn comments_do_not_change_the_digest_but_seeds_do() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_config(dir, "a.toml", CONFIG);
    write_config(
        dir,
        "b.toml",
        &CONFIG.replace("# Small two-task run.", "# Another comment\n# entirely"),
    );
    let a = run_bundle(dir, "a.toml", "a");
    let b = run_bundle(dir, "b.toml", "b");
    assert_eq!(a["config_digest"], b["config_digest"]);
    let o = ivtlab(&["run", "a.toml", "--out", "c", "--seed", "9"], dir);
    assert_eq!(code(&o), 0);
    let c = json(&dir.join("c/manifest.json"));
    assert_eq!(c["seeds"], serde_json::json!([9]));
    assert_ne!(a["config_digest"], c["config_digest"]);
    assert_eq!(a["dataset_digest"], c["dataset_digest"]);
}

#[test]
fn output_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_config(
        dir,
        "tiny.toml",
        &CONFIG.replace("seeds = [0, 1, 2]", "seeds = [0]"),
    );
    let o = Command::new(env!("CARGO_BIN_EXE_ivtlab"))
        .args(["run", "tiny.toml"])
        .current_dir(dir)
        .env("IVTLAB_OUTPUT_ROOT", dir.join("root"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let entries: Vec<_> = fs::read_dir(dir.join("root")).unwrap().collect();
    assert_eq!(entries.len(), 1);
}

#[test]
fn config_errors_exit_with_usage_code() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_config(
        dir,
        "bad.toml",
        &CONFIG.replace("num_tasks = 2", "num_tasks = "),
    );
    let o = ivtlab(&["run", "bad.toml"], dir);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line"));
    assert_eq!(code(&ivtlab(&["no-such-command"], dir)), 1);
    assert_eq!(code(&ivtlab(&["run", "missing.toml"], dir)), 1);
}

#[test]
fn diverging_seed_leaves_a_partial_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_config(
        dir,
        "boom.toml",
        &CONFIG
            .replace("learning_rate = 0.1", "learning_rate = 1e300")
            .replace("seeds = [0, 1, 2]", "seeds = [0]"),
    );
    let o = ivtlab(&["run", "boom.toml", "--out", "b"], dir);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("partial run"));
    let m = json(&dir.join("b/manifest.json"));
    assert_eq!(m["complete"], false);
    assert_eq!(m["failures"].as_array().unwrap().len(), 1);
}

fn eval_rows(dir: &Path, ck: &str) -> Vec<Vec<String>> {
    let o = ivtlab(&["eval", "tiny.toml", ck], dir);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn lmc_and_eval_agree_at_the_endpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_config(dir, "tiny.toml", CONFIG);
    run_bundle(dir, "tiny.toml", "b");
    let a = "b/seed-0/checkpoints/task2.ckpt";
    let b = "b/seed-1/checkpoints/task2.ckpt";

    let same = ivtlab(&["lmc", "tiny.toml", a, a, "--out", "same"], dir);
    assert_eq!(code(&same), 1);
    assert!(String::from_utf8_lossy(&same.stderr).contains("zero displacement"));

    let o = ivtlab(&["lmc", "tiny.toml", a, b, "--out", "scan"], dir);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = json(&dir.join("scan/manifest.json"));
    let grid = manifest["grid_size"].as_u64().unwrap() as usize;
    let scopes = manifest["scopes"].as_array().unwrap().len();
    assert_eq!(scopes, 3);
    let csv = fs::read_to_string(dir.join("scan/scan.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), grid * scopes);

    let lambda_hat = manifest["lambda_hat"].as_f64().unwrap();
    for (ck, lambda) in [(a, 0.0), (b, lambda_hat)] {
        for e in eval_rows(dir, ck) {
            let hit = rows
                .iter()
                .find(|r| r[1].parse::<f64>().unwrap() == lambda && r[2] == e[1])
                .expect("endpoint row");
            assert_eq!(
                (hit[3], hit[4]),
                (e[2].as_str(), e[3].as_str()),
                "{ck} {}",
                e[1]
            );
        }
    }

    let exported = ivtlab(&["eval", "tiny.toml", a, "--export", "a.json"], dir);
    assert_eq!(code(&exported), 0);
    let text = fs::read_to_string(dir.join("a.json")).unwrap();
    let back = ivtlab::checkpoint::Checkpoint::from_json_text(&text).unwrap();
    assert_eq!(
        back,
        ivtlab::checkpoint::Checkpoint::read(&dir.join(a)).unwrap()
    );
}

#[test]
fn landscape_grid_shape_and_projections() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_config(dir, "tiny.toml", CONFIG);
    run_bundle(dir, "tiny.toml", "b");
    let origin = "b/seed-0/checkpoints/task2.ckpt";
    let o = ivtlab(
        &[
            "landscape",
            "tiny.toml",
            origin,
            "b/seed-1/checkpoints/task2.ckpt",
            "b/seed-2/checkpoints/task2.ckpt",
            "--steps",
            "3",
            "--extent",
            "1",
            "--project",
            "first=b/seed-0/checkpoints/task1.ckpt",
            "--out",
            "land",
        ],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.join("land/grid.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 9);
    let centre = rows
        .iter()
        .find(|r| r[1] == "0.0" && r[2] == "0.0")
        .unwrap();
    let seen = eval_rows(dir, origin)
        .into_iter()
        .find(|r| r[1] == "seen")
        .unwrap();
    assert_eq!((centre[3], centre[4]), (seen[2].as_str(), seen[3].as_str()));

    let manifest = json(&dir.join("land/manifest.json"));
    let proj = manifest["projections"].as_object().unwrap();
    for name in ["origin", "a", "b", "first"] {
        assert!(proj[name]["residual"].is_number(), "{name}");
    }
    assert_eq!(proj["origin"]["a"], 0.0);
    assert_eq!(proj["origin"]["b"], 0.0);

    let parallel = ivtlab(
        &[
            "landscape",
            "tiny.toml",
            origin,
            origin,
            origin,
            "--out",
            "flat",
        ],
        dir,
    );
    assert_eq!(code(&parallel), 1);
}

#[test]
fn quadcheck_passes_by_default_and_flags_corruption() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let o = ivtlab(&["quadcheck", "--out", "qc"], dir);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&dir.join("qc/report.json"));
    assert!(report["exactness"]["max"].as_f64().unwrap() <= 1e-10);
    let csv = dir.join(report["trials_csv"].as_str().unwrap());
    assert!(csv.is_file());
    let header = fs::read_to_string(&csv).unwrap();
    assert!(header.starts_with("config_digest,trial,t,dim,gap_full,gap_diag"));

    let bad = ivtlab(&["quadcheck", "--corrupt", "--out", "qc-bad"], dir);
    assert_eq!(code(&bad), 2);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("precondition failed"));
}

#[test]
fn report_tables_and_pairing_rules() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_config(dir, "tiny.toml", CONFIG);
    run_bundle(dir, "tiny.toml", "x");
    run_bundle(dir, "tiny.toml", "y");

    let one = ivtlab(&["report", "x"], dir);
    assert_eq!(code(&one), 0);
    let text = String::from_utf8(one.stdout).unwrap();
    assert!(text.contains("tiny") && !text.contains("Avg. Imp."));

    let paired = ivtlab(&["report", "x", "y", "--pair", "1=2"], dir);
    assert_eq!(code(&paired), 0);
    let text = String::from_utf8(paired.stdout).unwrap();
    let imp = text.lines().find(|l| l.starts_with("Avg. Imp.")).unwrap();
    assert_eq!(imp.matches("+0.00").count(), 3, "{imp}");

    write_config(dir, "other.toml", &CONFIG.replace("seed = 3", "seed = 4"));
    run_bundle(dir, "other.toml", "z");
    let mixed = ivtlab(&["report", "x", "z"], dir);
    assert_eq!(code(&mixed), 1);
    assert!(String::from_utf8_lossy(&mixed.stderr).contains("dataset"));

    let o = ivtlab(&["run", "tiny.toml", "--out", "w", "--seed", "5"], dir);
    assert_eq!(code(&o), 0);
    let unpaired = ivtlab(&["report", "x", "w", "--pair", "1=2"], dir);
    assert_eq!(code(&unpaired), 1);
    assert!(String::from_utf8_lossy(&unpaired.stderr).contains("cannot pair"));
}
