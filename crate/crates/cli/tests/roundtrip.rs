use std::path::{Path, PathBuf};
use std::process::Command;

use pftvp_cli::commands::{
    cmd_generate, cmd_replicate, cmd_run, cmd_summarize, load_dataset, DATA_FILE, RECORDS_FILE,
    REPLICATE_FILE, SUMMARY_FILE,
};
use pftvp_cli::config::ExperimentConfig;
use pftvp_cli::presets::{names, preset};
use pftvp_cli::records::read_records;
use pftvp_cli::CliError;
use pftvp_core::datagen::read_dataset;
use pftvp_core::filters::{DriftSpec, FilterKind};

fn small(name: &str, n: usize) -> ExperimentConfig {
    let mut cfg = preset(name).unwrap();
    cfg.filter.n_particles = n;
    cfg
}

fn round_trip(cfg: &ExperimentConfig, root: &Path) -> PathBuf {
    let dir = root.join(&cfg.name);
    let data = cmd_generate(cfg, &dir).unwrap();
    let out = cmd_run(cfg, &data, None, &dir).unwrap();
    let (obs, _) = read_dataset(&data).unwrap();
    let records = read_records(&dir.join(RECORDS_FILE)).unwrap();
    assert_eq!(records.records.len(), obs.len(), "{}", cfg.name);
    assert_eq!(out.summary.n_records, obs.len());
    assert!(dir.join(SUMMARY_FILE).exists());
    dir.join(RECORDS_FILE)
}

#[test]
fn every_preset_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for name in names() {
        files.push(round_trip(&small(name, 40), tmp.path()));
    }
    for base in ["fig1a", "fig1b", "fig1c", "fig1d"] {
        for sigma_e in [0.1, 1.0, 5.0] {
            let mut cfg = small(base, 40);
            cfg.name = format!("{base}-fixed-{sigma_e}");
            cfg.filter.kind = FilterKind::PfTvp;
            cfg.filter.drift = DriftSpec::Fixed { sigma_e };
            files.push(round_trip(&cfg, tmp.path()));
        }
    }
    let table = cmd_summarize(&files).unwrap();
    assert_eq!(table.rows.len(), files.len());
}

#[test]
fn preset_datasets_have_expected_sizes() {
    let tmp = tempfile::tempdir().unwrap();
    for (name, rows, model) in [("fig1a", 300, "logistic/sinusoid"), ("fig5b", 100, "oscillator/k-cos")] {
        let cfg = preset(name).unwrap();
        let path = cmd_generate(&cfg, tmp.path()).unwrap();
        let (obs, meta) = read_dataset(&path).unwrap();
        assert_eq!(obs.len(), rows);
        assert_eq!(meta.model, model);
    }
}

#[test]
fn generation_is_idempotent_and_noise_free_data_equals_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = preset("fig5a").unwrap();
    let a = std::fs::read(cmd_generate(&cfg, &tmp.path().join("a")).unwrap()).unwrap();
    let b = std::fs::read(cmd_generate(&cfg, &tmp.path().join("b")).unwrap()).unwrap();
    assert_eq!(a, b);

    let mut clean = cfg;
    clean.data.noise_fraction = 0.0;
    let (obs, _) = read_dataset(&cmd_generate(&clean, &tmp.path().join("c")).unwrap()).unwrap();
    assert_eq!(obs.values, obs.truth_states);
}

#[test]
fn fixed_drift_presets_sort_by_sigma() {
    let tmp = tempfile::tempdir().unwrap();
    let files: Vec<PathBuf> = ["fig2-sigma5", "fig2-sigma0.1", "fig2-sigma1"]
        .iter()
        .map(|n| round_trip(&small(n, 30), tmp.path()))
        .collect();
    let table = cmd_summarize(&files).unwrap();
    let order: Vec<&str> = table.rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(order, ["fig2-sigma0.1", "fig2-sigma1", "fig2-sigma5"]);

    let single = cmd_summarize(&files[..1]).unwrap();
    assert_eq!(single.rows.len(), 1);
    assert!(single.to_text().lines().count() == 2);
}

#[test]
fn small_drift_damps_the_parameter_trajectory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = preset("fig2-sigma0.1").unwrap();
    let data = cmd_generate(&cfg, tmp.path()).unwrap();
    let out = cmd_run(&cfg, &data, None, tmp.path()).unwrap();
    assert!(out.summary.theta_mean_std[0] < 0.5 * out.summary.theta_truth_std[0]);
}

#[test]
fn full_size_estimated_drift_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = preset("fig3").unwrap();
    let data = cmd_generate(&cfg, tmp.path()).unwrap();
    let out = cmd_run(&cfg, &data, None, tmp.path()).unwrap();
    assert_eq!(out.summary.n_records, 300);
    let s = out.summary.final_sigma[0];
    assert!(s.q025 <= s.mean && s.mean <= s.q975);
    assert!(s.q025 > 0.05 && s.q975 < 10.0);
}

#[test]
fn single_particle_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small("fig5b-case3-individual", 1);
    let dir = round_trip(&cfg, tmp.path());
    let rf = read_records(&dir).unwrap();
    for r in &rf.records {
        for (b, m) in r.theta_bands.iter().zip(&r.theta_mean) {
            assert_eq!((b.q025, b.q975), (*m, *m));
        }
    }
}

#[test]
fn replicates_are_reproducible_and_match_single_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small("fig5a-case2a", 60);
    let (report, summaries) = cmd_replicate(&cfg, 3, None, false, &tmp.path().join("r1")).unwrap();
    assert_eq!(summaries.len(), 3);
    assert!(report.aggregate.contains_key("sigma0_mean"));

    cmd_replicate(&cfg, 3, None, false, &tmp.path().join("r2")).unwrap();
    let read = |d: &str| std::fs::read(tmp.path().join(d).join(REPLICATE_FILE)).unwrap();
    assert_eq!(read("r1"), read("r2"));

    let data = tmp.path().join("r1").join(DATA_FILE);
    let single = cmd_run(&cfg, &data, None, &tmp.path().join("single")).unwrap();
    assert_eq!(single.summary.metrics(), summaries[0].metrics());

    let files: Vec<PathBuf> = (0..3)
        .map(|s| tmp.path().join("r1").join(format!("seed-{s}")).join(RECORDS_FILE))
        .collect();
    let table = cmd_summarize(&files).unwrap();
    assert_eq!(table.rows.len(), 5);
    assert_eq!(table.rows[3][0], "fig5a-case2a mean");
    assert_eq!(table.rows[4][0], "fig5a-case2a std");

    let (varied, _) = cmd_replicate(&cfg, 2, None, true, &tmp.path().join("r3")).unwrap();
    assert_ne!(varied.runs[0].data_seed, varied.runs[1].data_seed);
}

#[test]
fn dataset_model_mismatch_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = cmd_generate(&preset("fig5a").unwrap(), tmp.path()).unwrap();
    let err = load_dataset(&preset("fig5b").unwrap(), &data).err().unwrap();
    assert!(matches!(err, CliError::Config(_)));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn config_validation_messages_name_the_field() {
    let text = preset("fig3").unwrap().to_toml();
    let bad_step = text.replace("step = 0.25", "step = 0.3");
    let err = ExperimentConfig::from_toml(&bad_step).unwrap_err().to_string();
    assert!(err.contains("solver.step"), "{err}");
    let bad_model = text.replace("logistic/sinusoid", "logistic/nope");
    assert!(ExperimentConfig::from_toml(&bad_model).unwrap_err().to_string().contains("model"));
    let bad_drift = text.replace("delta = 0.96", "delta = 1.5");
    assert!(ExperimentConfig::from_toml(&bad_drift).is_err());
    assert!(ExperimentConfig::from_toml(&text.replace("n_particles", "particles")).is_err());
    let late = text.replace("burn_in = 20.0", "burn_in = 150.0");
    assert_ne!(late, text);
    assert!(ExperimentConfig::from_toml(&late).unwrap_err().to_string().contains("burn_in"));
    assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), preset("fig3").unwrap());
}

fn pftvp(root: &Path) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pftvp"));
    c.env("PFTVP_OUTPUT_ROOT", root).env("RUST_LOG", "off");
    c
}

#[test]
fn binary_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let ok = pftvp(root).args(["generate", "--preset", "fig5a"]).status().unwrap();
    assert_eq!(ok.code(), Some(0));
    let data = root.join("fig5a").join(DATA_FILE);
    assert!(data.exists());

    let cfg_path = root.join("small.toml");
    std::fs::write(&cfg_path, small("fig5a", 20).to_toml()).unwrap();
    let run = pftvp(root)
        .args(["run", "--config"])
        .arg(&cfg_path)
        .arg("--data")
        .arg(&data)
        .args(["--seed", "4"])
        .status()
        .unwrap();
    assert_eq!(run.code(), Some(0));
    let records = root.join("fig5a").join(RECORDS_FILE);
    assert_eq!(read_records(&records).unwrap().header.label.seed, 4);

    let summary = pftvp(root).arg("summarize").arg(&records).output().unwrap();
    assert_eq!(summary.status.code(), Some(0));
    assert!(root.join("summary.csv").exists());
    assert!(String::from_utf8_lossy(&summary.stdout).contains("fig5a"));

    let unknown = pftvp(root).args(["generate", "--preset", "fig99"]).status().unwrap();
    assert_eq!(unknown.code(), Some(2));

    let mismatch = pftvp(root)
        .args(["run", "--preset", "fig3", "--data"])
        .arg(&data)
        .status()
        .unwrap();
    assert_eq!(mismatch.code(), Some(2));

    // A state prior far below zero has no real implicit step: Newton fails.
    let mut doomed = small("fig3", 5);
    doomed.filter.priors.state = vec![pftvp_core::filters::FactorRange(-1000.0, -999.0)];
    let logistic_data = cmd_generate(&doomed, &root.join("doomed")).unwrap();
    std::fs::write(&cfg_path, doomed.to_toml()).unwrap();
    let failed = pftvp(root)
        .args(["run", "--config"])
        .arg(&cfg_path)
        .arg("--data")
        .arg(&logistic_data)
        .status()
        .unwrap();
    assert_eq!(failed.code(), Some(3));
}

#[test]
fn summarize_rejects_foreign_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let file = round_trip(&small("fig5a", 10), tmp.path());
    let text = std::fs::read_to_string(&file).unwrap();
    let other = tmp.path().join("other.csv");
    std::fs::write(&other, text.replace("pftvp.records/1", "pftvp.records/0")).unwrap();
    assert!(matches!(cmd_summarize(&[file, other]), Err(CliError::Config(_))));
}
