use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use mckean_cli::experiment::TestFunction;
use mckean_cli::experiments;
use mckean_cli::{ConfigDoc, ExperimentConfig};

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn mckean(args: &[&str], workers: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mckean"));
    cmd.args(args);
    match workers {
        Some(w) => cmd.env(experiments::WORKERS_ENV, w),
        None => cmd.env_remove(experiments::WORKERS_ENV),
    };
    cmd.output().expect("spawn mckean")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn smoke_pipeline_is_fast_and_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("smoke.cfg");
    let start = Instant::now();
    let out = mckean(&["-c", cfg.to_str().unwrap(), "-o", dir.path().to_str().unwrap(), "full-pipeline"], None);
    let elapsed = start.elapsed();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(elapsed < Duration::from_secs(10), "smoke run took {elapsed:?}");
    for f in ["trajectories.mkv", "density.ndjson", "drift.ndjson", "interaction.ndjson", "interaction_field.csv", "pipeline.ndjson"] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let pipeline = std::fs::read_to_string(dir.path().join("pipeline.ndjson")).unwrap();
    for line in pipeline.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("kind").is_some(), "{line}");
    }
}

#[test]
fn reruns_are_byte_identical_for_any_worker_count() {
    let cfg = configs().join("smoke.cfg");
    let run = |workers: &str| {
        let dir = tempfile::tempdir().unwrap();
        let out = mckean(&["-c", cfg.to_str().unwrap(), "-o", dir.path().to_str().unwrap(), "full-pipeline"], Some(workers));
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        ["pipeline.ndjson", "interaction_field.csv", "trajectories.mkv"].map(|f| std::fs::read(dir.path().join(f)).unwrap())
    };
    let one = run("1");
    assert_eq!(one, run("1"));
    assert_eq!(one, run("4"));
}

#[test]
fn estimators_accept_a_saved_trajectory_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("smoke.cfg");
    let (c, o) = (cfg.to_str().unwrap(), dir.path().to_str().unwrap());
    assert!(mckean(&["-c", c, "-o", o, "simulate"], None).status.success());
    let traj = dir.path().join("trajectories.mkv");
    let out = mckean(&["-c", c, "-o", o, "estimate-density", "--traj", traj.to_str().unwrap()], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("mu_hat = "));
}

#[test]
fn bench_rates_rejects_short_schedules() {
    let dir = tempfile::tempdir().unwrap();
    let base = std::fs::read_to_string(configs().join("mfou.cfg")).unwrap();
    write(dir.path(), "mfou.cfg", &base);
    let cfg = write(dir.path(), "short.cfg", "include \"mfou.cfg\"\n[replication]\nreplicates = 2\nn_schedule = 512, 1024, 1024\n");
    let out = mckean(&["-c", cfg.to_str().unwrap(), "-o", dir.path().join("out").to_str().unwrap(), "bench-rates"], None);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("need ≥3 distinct N"));
}

#[test]
fn failed_replicate_is_named_with_its_n_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "blowup.cfg",
        "[model]\ndrift = vlasov\nconfinement = -1e6\ninteraction = none\n\
         [sim]\nt_end = 2\nsteps = 200\n\
         [replication]\nreplicates = 2\nbase_seed = 5\nn_schedule = 64, 128, 256\n",
    );
    let out = mckean(&["-c", cfg.to_str().unwrap(), "-o", dir.path().join("out").to_str().unwrap(), "interaction-consistency"], None);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    let seed = mckean::rng::replicate_seed(5, 64, 0);
    assert!(err.contains(&format!("replicate 0 (N = 64, seed = {seed}) failed")), "{err}");
}

#[test]
fn config_round_trips_through_include_and_serialization() {
    let dir = tempfile::tempdir().unwrap();
    let base = std::fs::read_to_string(configs().join("interaction.cfg")).unwrap();
    write(dir.path(), "interaction.cfg", &base);
    let top = write(dir.path(), "top.cfg", "include \"interaction.cfg\"\n[sim]\nn = 300 # override\n[output]\ndir = \"out dir/with space\"\n");
    let cfg = ExperimentConfig::load(&top).unwrap();
    assert_eq!(cfg.sim.n, 300);
    assert_eq!(cfg.output_dir, PathBuf::from("out dir/with space"));

    let text = cfg.to_doc().serialize();
    let again = ExperimentConfig::from_doc(&ConfigDoc::parse_str(&text).unwrap()).unwrap();
    assert_eq!(again, cfg);

    let out = mckean(&["-c", top.to_str().unwrap(), "show-config"], None);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout), text);
}

#[test]
fn config_errors_name_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.cfg", "[sim]\nn = 10\nthis line has no equals sign\n");
    let out = mckean(&["-c", cfg.to_str().unwrap(), "show-config"], None);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.cfg:3:"));

    let cyc = write(dir.path(), "cycle.cfg", "include \"cycle.cfg\"\n");
    assert!(ExperimentConfig::load(&cyc).is_err());
}

#[test]
fn constant_test_function_has_degenerate_deviations() {
    let dir = tempfile::tempdir().unwrap();
    let base = std::fs::read_to_string(configs().join("mfou.cfg")).unwrap();
    write(dir.path(), "mfou.cfg", &base);
    let cfg = write(
        dir.path(),
        "const.cfg",
        "include \"mfou.cfg\"\n[sim]\nsteps = 20\n[concentration]\nfunctions = constant, cos\n\
         [replication]\nreplicates = 200\nn_schedule = 64, 128\n",
    );
    let rep = experiments::run_check_concentration(&ExperimentConfig::load(&cfg).unwrap()).unwrap();
    for e in &rep.entries {
        if e.function == TestFunction::Constant {
            assert!(e.envelope.degenerate && !e.envelope.valid);
            assert!(e.deviation_variance.abs() < 1e-24);
        } else {
            assert!(!e.envelope.degenerate);
        }
    }
}
