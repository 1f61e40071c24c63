use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use detnas::checkpoint;
use detnas::config::RunConfig;
use detnas_core::supernet::Phase;
use detnas_core::SearchSpace;

const QUICK: &str = "\
pretrain.iterations = 12
pretrain.batch_size = 8
finetune.iterations = 12
finetune.batch_size = 8
task.classification_train = 64
task.classification_validation = 32
task.localization_train = 64
task.search_validation = 32
task.test = 32
task.bn_calibration = 16
evolution.population_size = 4
evolution.parent_size = 2
evolution.iterations = 3
eval.batch_size = 16
";

fn detnas(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_detnas"))
        .current_dir(dir)
        .env_remove("DETNAS_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn workdir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("quick.txt"), QUICK).unwrap();
    dir
}

fn pipeline(dir: &Path, out: &str) -> PathBuf {
    let o = dir.join(out);
    ok(detnas(dir, &["--config", "quick.txt", "--output", out, "pretrain"]));
    let pre = o.join("pretrained.ckpt");
    ok(detnas(dir, &["--config", "quick.txt", "--output", out, "finetune", "--checkpoint", pre.to_str().unwrap()]));
    let fine = o.join("finetuned.ckpt");
    ok(detnas(dir, &["--config", "quick.txt", "--output", out, "search", "--checkpoint", fine.to_str().unwrap(), "--controller", "both"]));
    o
}

#[test]
fn full_pipeline_writes_tagged_checkpoints_logs_and_curves() {
    let dir = workdir();
    let o = pipeline(dir.path(), "run");
    let space = SearchSpace::tiny();
    let pre = checkpoint::load(&o.join("pretrained.ckpt"), &space, 4).unwrap();
    assert_eq!(pre.phase, Phase::Pretrained);
    let fine = checkpoint::load(&o.join("finetuned.ckpt"), &space, 4).unwrap();
    assert_eq!(fine.phase, Phase::Finetuned);
    assert_eq!(fine.step, 24);

    for name in ["search_evolution.csv", "search_random.csv"] {
        let log = fs::read_to_string(o.join(name)).unwrap();
        let mut lines = log.lines();
        assert_eq!(lines.next().unwrap(), "iteration,index,architecture,flops,fitness,best_so_far,memo_hit");
        assert_eq!(lines.count(), 12);
    }
    let svg = fs::read_to_string(o.join("search_curve.svg")).unwrap();
    assert!(svg.contains("evolution") && svg.contains("random"));
    let summary = fs::read_to_string(o.join("search_result.txt")).unwrap();
    assert!(summary.contains("best_architecture_symbolic = "));
    assert!(summary.contains("wall_time_seconds"));
    assert_eq!(fs::read_to_string(o.join("pretrain_loss.csv")).unwrap().lines().count(), 13);
    let resolved = RunConfig::load(&o.join("config.txt")).unwrap();
    assert_eq!(resolved.pretrain.iterations, 12);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = workdir();
    let a = pipeline(dir.path(), "a");
    let b = pipeline(dir.path(), "b");
    for name in [
        "pretrained.ckpt",
        "finetuned.ckpt",
        "pretrain_loss.csv",
        "finetune_loss.csv",
        "search_evolution.csv",
        "search_random.csv",
        "search_curve.svg",
    ] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn resolved_config_reproduces_the_run() {
    let dir = workdir();
    ok(detnas(dir.path(), &["--config", "quick.txt", "--seed", "5", "--output", "first", "pretrain"]));
    let resolved = dir.path().join("first/config.txt");
    ok(detnas(
        dir.path(),
        &["--config", resolved.to_str().unwrap(), "--output", "second", "pretrain"],
    ));
    let a = fs::read(dir.path().join("first/pretrained.ckpt")).unwrap();
    let b = fs::read(dir.path().join("second/pretrained.ckpt")).unwrap();
    assert_eq!(a, b);
    let decoded = checkpoint::decode(&a).unwrap();
    assert_eq!(decoded.seed, 5);
}

#[test]
fn seed_environment_variable_overrides_the_file() {
    let dir = workdir();
    let out = Command::new(env!("CARGO_BIN_EXE_detnas"))
        .current_dir(dir.path())
        .env("DETNAS_SEED", "99")
        .args(["--config", "quick.txt", "--output", "env", "pretrain"])
        .output()
        .unwrap();
    ok(out);
    let bytes = fs::read(dir.path().join("env/pretrained.ckpt")).unwrap();
    assert_eq!(checkpoint::decode(&bytes).unwrap().seed, 99);
    let cfg = RunConfig::load(&dir.path().join("env/config.txt")).unwrap();
    assert_eq!(cfg.seed, 99);
}

#[test]
fn phase_order_violations_exit_with_code_two() {
    let dir = workdir();
    let o = pipeline(dir.path(), "run");
    let fine = o.join("finetuned.ckpt");
    let out = detnas(dir.path(), &["--config", "quick.txt", "--output", "x", "finetune", "--checkpoint", fine.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("phase"));
    let pre = o.join("pretrained.ckpt");
    let out = detnas(dir.path(), &["--config", "quick.txt", "--output", "x", "search", "--checkpoint", pre.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn scratch_finetuning_doubles_iterations() {
    let dir = workdir();
    ok(detnas(dir.path(), &["--config", "quick.txt", "--output", "s", "finetune", "--from-scratch"]));
    let w = checkpoint::load(&dir.path().join("s/finetuned.ckpt"), &SearchSpace::tiny(), 4).unwrap();
    assert_eq!(w.phase, Phase::Finetuned);
    assert_eq!(w.step, 24);
    assert_eq!(fs::read_to_string(dir.path().join("s/finetune_loss.csv")).unwrap().lines().count(), 25);
}

#[test]
fn infeasible_budget_fails_before_any_evaluation() {
    let dir = workdir();
    let o = pipeline(dir.path(), "run");
    let fine = o.join("finetuned.ckpt");
    let out = detnas(
        dir.path(),
        &["--config", "quick.txt", "--set", "evolution.max_flops=10", "--output", "tight", "search", "--checkpoint", fine.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cheapest path"));
    let log = fs::read_to_string(dir.path().join("tight/search_evolution.csv")).unwrap_or_default();
    assert!(log.lines().count() <= 1);
}

#[test]
fn retrain_reports_schema_and_warns_on_budget() {
    let dir = workdir();
    let arch = "0,0,0,0,0,0,0,0";
    let report = ok(detnas(dir.path(), &["--config", "quick.txt", "--output", "r1", "retrain", "--arch", arch]));
    for field in ["flops = ", "final_accuracy = ", "final_iou = "] {
        assert!(report.contains(field), "{report}");
    }
    let again = ok(detnas(dir.path(), &["--config", "quick.txt", "--output", "r2", "retrain", "--arch", arch]));
    assert_eq!(report, again);
    let out = detnas(
        dir.path(),
        &["--config", "quick.txt", "--set", "evolution.max_flops=1000", "--output", "r3", "retrain", "--arch", "7x7,7x7,7x7,7x7,7x7,7x7,7x7,7x7"],
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    assert!(ok(out).contains("within_constraint = false"));
}

#[test]
fn flops_command_examples() {
    let dir = workdir();
    let text = ok(detnas(dir.path(), &["--output", "f", "--space", "small", "flops"]));
    assert!(text.contains("cardinality = 4^20 ≈ 1.100e12"), "{text}");
    assert!(dir.path().join("f/flops_histogram.csv").exists());
    let all3 = vec!["0"; 20].join(",");
    let text = ok(detnas(dir.path(), &["--output", "f", "--space", "small", "flops", "--arch", &all3]));
    let macs: u64 = text
        .lines()
        .find_map(|l| l.strip_prefix("macs_224 = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((240_000_000..=360_000_000).contains(&macs), "{macs}");
    let bad = detnas(dir.path(), &["--output", "f", "--space", "small", "flops", "--arch", "0,1"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn custom_space_file_is_accepted() {
    let dir = workdir();
    fs::write(dir.path().join("toy.txt"), "stem_channels = 8\nresolution = 32\nstage = 16, 1\nstage = 32, 1\nstage = 64, 1\n").unwrap();
    let text = ok(detnas(dir.path(), &["--output", "t", "--space-file", "toy.txt", "flops"]));
    assert!(text.contains("cardinality_exact = 64"), "{text}");
}

#[test]
fn pattern_report_from_a_list_of_architectures() {
    let dir = workdir();
    fs::write(dir.path().join("archs.txt"), "# best paths\n7x7,7x7,7x7,7x7,7x7,7x7,7x7,7x7\n2,2,2,2,2,2,2,2\n").unwrap();
    let text = ok(detnas(dir.path(), &["--output", "p", "report-patterns", "--input", "archs.txt"]));
    assert!(text.contains("100.0%"), "{text}");
    let csv = fs::read_to_string(dir.path().join("p/patterns.csv")).unwrap();
    assert!(csv.contains("1,7x7,4,1"), "{csv}");
    fs::write(dir.path().join("empty.txt"), "\n").unwrap();
    let out = detnas(dir.path(), &["--output", "p", "report-patterns", "--input", "empty.txt"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = workdir();
    let out = detnas(dir.path(), &["--set", "pretrain.epochs=3", "--output", "u", "pretrain"]);
    assert_eq!(out.status.code(), Some(2));
    let out = detnas(dir.path(), &["--set", "pretrain.iterations=0", "--output", "u", "pretrain"]);
    assert_eq!(out.status.code(), Some(2));
}
