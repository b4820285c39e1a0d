use std::path::{Path, PathBuf};
use std::process::Command;

use proptest::prelude::*;

use sdelab_harness::bundle::{ReportBundle, Stage, StageStatus};
use sdelab_harness::config::{DomainAuditConfig, SdeVariant, StarConfig};
use sdelab_harness::run::check_stages;
use sdelab_harness::{run_experiment, run_stages, write_report, ExperimentConfig, HarnessError, ReportFormat, RunPlan, OUTSIDE_COND0};

fn corpus() -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

fn corpus_config(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)).unwrap()
}

fn position(b: &ReportBundle, s: Stage) -> Option<usize> {
    b.stages.iter().position(|r| r.stage == s)
}

#[test]
fn corpus_round_trips_and_validates() {
    let files = corpus();
    assert!(files.len() >= 4);
    for p in files {
        let cfg = ExperimentConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg, "{}", p.display());
    }
}

#[test]
fn minimal_config_passes_every_gate() {
    let b = run_experiment(&corpus_config("minimal.json")).unwrap();
    assert!(b.hash_matches());
    assert_eq!(b.cond0_tag, None);
    assert!(b.stages.iter().all(|s| s.status == StageStatus::Ok && s.tag.is_none()), "{:?}", b.stages);
    assert!(b.all_verdicts_pass(), "{:?}", b.acceptance);
    assert!(b.acceptance.iter().any(|v| v.id == "simulate.control_variance"));
    let adm = position(&b, Stage::Admissibility).unwrap();
    assert!(adm < position(&b, Stage::Resolvent).unwrap());
    assert!(adm < position(&b, Stage::Simulate).unwrap());
    assert!(check_stages(&b).is_ok());
}

#[test]
fn infeasible_config_runs_with_tags() {
    let b = run_experiment(&corpus_config("hardy_infeasible.json")).unwrap();
    let adm = b.admissibility.as_ref().unwrap();
    assert!(!adm.feasible);
    assert!((adm.effective_delta - 1.2).abs() < 1e-9);
    assert_eq!(b.cond0_tag.as_deref(), Some(OUTSIDE_COND0));
    for s in &b.stages {
        let downstream = !matches!(s.stage, Stage::Bounds | Stage::Admissibility);
        assert_eq!(s.tag.is_some(), downstream, "{:?}", s);
        assert_eq!(s.status, StageStatus::Ok);
    }
    assert!(b.resolvent.is_some() && b.simulation.is_some());
}

#[test]
fn stratonovich_config_uses_the_converted_scheme() {
    let b = run_experiment(&corpus_config("stratonovich_sine_log.json")).unwrap();
    assert!(b.failed_stages().is_empty(), "{:?}", b.stages);
    assert!(b.admissibility.as_ref().unwrap().feasible);
    let s = b.simulation.as_ref().unwrap();
    assert_eq!(s.scheme, sdelab_core::sde::Scheme::StratonovichConverted);
    assert!(b.all_verdicts_pass(), "{:?}", b.acceptance);
}

#[test]
fn failing_stage_is_isolated() {
    let mut cfg = corpus_config("minimal.json");
    // Two μ values cannot support a power-law fit.
    cfg.resolvent.as_mut().unwrap().star = Some(StarConfig { mu_list: vec![1.0, 2.0], centre: [0.0; 3], radius: 1.0, mu_ref: 1.0 });
    let b = run_experiment(&cfg).unwrap();
    let failed = b.failed_stages();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0].stage, Stage::Resolvent);
    assert!(b.resolvent.is_none());
    assert!(b.simulation.is_some());
    match check_stages(&b) {
        Err(HarnessError::StageFailed { stage, .. }) => assert_eq!(stage, "resolvent"),
        other => panic!("expected a stage failure, got {other:?}"),
    }
}

#[test]
fn repeated_runs_are_identical_modulo_timestamps() {
    let cfg = corpus_config("minimal.json");
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a.without_timestamps(), b.without_timestamps());
    let dir = tempfile::tempdir().unwrap();
    write_report(&a.without_timestamps(), &dir.path().join("a"), ReportFormat::Json).unwrap();
    write_report(&b.without_timestamps(), &dir.path().join("b"), ReportFormat::Json).unwrap();
    let read = |s: &str| std::fs::read(dir.path().join(s).join("bundle.json")).unwrap();
    assert_eq!(read("a"), read("b"));
}

#[test]
fn plan_stops_at_the_requested_stage() {
    let cfg = corpus_config("minimal.json");
    let b = run_stages(&cfg, RunPlan::until(Stage::Admissibility));
    let stages: Vec<Stage> = b.stages.iter().map(|s| s.stage).collect();
    assert_eq!(stages, vec![Stage::Bounds, Stage::Admissibility]);
    let b = run_stages(&cfg, RunPlan::until(Stage::Simulate));
    assert!(position(&b, Stage::Resolvent).is_none());
    assert!(position(&b, Stage::Simulate).is_some());
}

#[test]
fn domain_audit_compares_on_the_original_box() {
    let mut cfg = corpus_config("minimal.json");
    cfg.resolvent.as_mut().unwrap().domain = Some(DomainAuditConfig { mu: 10.0, factor: 1.5 });
    let b = run_stages(&cfg, RunPlan::until(Stage::Resolvent));
    let d = b.resolvent.unwrap().domain.unwrap();
    // 12 nodes on [-2, 2] widen by 3 cells per side.
    assert_eq!(d.nodes_wide, 18);
    assert!((d.extent_wide - 3.0).abs() < 1e-12);
    // Widening the Dirichlet box only raises the solution of a positive problem.
    assert!(d.rel_sup_diff > 0.0 && d.rel_sup_diff < 0.1, "{}", d.rel_sup_diff);
    cfg.resolvent.as_mut().unwrap().domain = Some(DomainAuditConfig { mu: 10.0, factor: 1.0 });
    assert!(matches!(cfg.validate(Path::new(".")), Err(HarnessError::ConfigInvalid(_))));
}

#[test]
fn empty_bundle_is_valid_json() {
    let b = ReportBundle::empty("empty", "{}".into());
    let dir = tempfile::tempdir().unwrap();
    let files = write_report(&b, dir.path(), ReportFormat::Both).unwrap();
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&files[0]).unwrap()).unwrap();
    assert_eq!(v["stages"], serde_json::json!([]));
    assert_eq!(v["acceptance"], serde_json::json!([]));
    let back: ReportBundle = serde_json::from_value(v).unwrap();
    assert_eq!(back, b);
}

#[test]
fn star_table_round_trips_through_csv() {
    let mut cfg = corpus_config("minimal.json");
    cfg.grid.nodes = 20;
    cfg.ensemble = None;
    let rc = cfg.resolvent.as_mut().unwrap();
    rc.q = Some(2.5);
    rc.star = Some(StarConfig { mu_list: vec![2.0, 4.0, 8.0, 16.0, 64.0], centre: [0.0; 3], radius: 1.2, mu_ref: 4.0 });
    let b = run_experiment(&cfg).unwrap();
    let star = &b.resolvent.as_ref().unwrap().star.as_ref().unwrap().rows;
    let dir = tempfile::tempdir().unwrap();
    write_report(&b, dir.path(), ReportFormat::CsvTables).unwrap();
    let mut rdr = csv::Reader::from_path(dir.path().join("star.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["mu", "grad_norm_q", "grad_norm_qj", "residual"]);
    let rows: Vec<(f64, f64, f64, f64)> = rdr.deserialize().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), star.len());
    for (r, s) in rows.iter().zip(star) {
        assert_eq!(*r, (s.mu, s.grad_norm_q, s.grad_norm_qj, s.residual));
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let base = corpus_config("minimal.json");
    let expect_invalid = |cfg: &ExperimentConfig| {
        assert!(matches!(cfg.validate(Path::new(".")), Err(HarnessError::ConfigInvalid(_))), "{}", cfg.to_json());
    };
    let mut c = base.clone();
    c.regularization.n_list = vec![8, 4];
    expect_invalid(&c);
    let mut c = base.clone();
    c.ensemble.as_mut().unwrap().schedule_n = Some(16);
    expect_invalid(&c);
    let mut c = base.clone();
    c.ensemble.as_mut().unwrap().times = vec![2.0];
    expect_invalid(&c);
    let mut c = base.clone();
    c.dispersion = serde_json::from_str(r#"{"d":3,"kind":"grid_sampled","path":"missing.json"}"#).unwrap();
    expect_invalid(&c);
    let mut c = base.clone();
    c.variant = SdeVariant::Stratonovich;
    c.dispersion = serde_json::from_str(r#"{"d":3,"kind":"grid_sampled"}"#).unwrap();
    c.bounds.dispersion = Some(sdelab_harness::config::DispersionBoundsInput { delta_a: 0.1, gamma: 0.1, a_dev: 0.1, delta_c: None });
    expect_invalid(&c);
    assert!(matches!(ExperimentConfig::from_json(r#"{"id":"x","drift":{"d":3,"kind":"zero"},"grid":{"extent":1,"nodes":8},"extra":1}"#), Err(HarnessError::ConfigInvalid(_))));
}

fn sdelab(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_sdelab")).args(args).env("SINGULAR_SDE_THREADS", "1").output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stdout).into_owned())
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfgs = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let out = dir.path().to_str().unwrap();

    let minimal = cfgs.join("minimal.json");
    let (code, stdout) = sdelab(&["admit", "--config", minimal.to_str().unwrap(), "--out", out]);
    assert_eq!(code, 0, "{stdout}");
    assert!(dir.path().join("bundle.json").is_file());

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"id": "bad"}"#).unwrap();
    assert_eq!(sdelab(&["bounds", "--config", bad.to_str().unwrap()]).0, 1);

    let mut cfg = corpus_config("minimal.json");
    cfg.resolvent.as_mut().unwrap().star = Some(StarConfig { mu_list: vec![1.0, 2.0], centre: [0.0; 3], radius: 1.0, mu_ref: 1.0 });
    let failing = dir.path().join("failing.json");
    std::fs::write(&failing, cfg.to_json()).unwrap();
    assert_eq!(sdelab(&["resolvent", "--config", failing.to_str().unwrap(), "--out", out]).0, 2);

    let mut cfg = corpus_config("hardy_infeasible.json");
    cfg.resolvent = None;
    // Clip levels far below |b| cannot saturate.
    cfg.ensemble.as_mut().unwrap().integrability_clips = vec![1e-4, 2e-4];
    let unsaturated = dir.path().join("unsaturated.json");
    std::fs::write(&unsaturated, cfg.to_json()).unwrap();
    let (code, stdout) = sdelab(&["check", "--config", unsaturated.to_str().unwrap(), "--out", out]);
    assert_eq!(code, 3, "{stdout}");
    assert!(stdout.contains("simulate.drift_integrability [FAIL]"));

    let (code, stdout) = sdelab(&["simulate", "--config", minimal.to_str().unwrap(), "--out", out, "--paths", "200", "--seed", "9"]);
    assert_eq!(code, 0, "{stdout}");
    let bundle: ReportBundle = serde_json::from_slice(&std::fs::read(dir.path().join("bundle.json")).unwrap()).unwrap();
    let summary = &bundle.simulation.unwrap().summary;
    assert_eq!((summary.paths, summary.seed), (200, 9));

    let (code, stdout) = sdelab(&["check", "--criteria", "2"]);
    assert_eq!(code, 0);
    assert!(stdout.contains("criterion  2 [PASS]"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_serialization_round_trips(
        seed in any::<u64>(),
        kappa in 0.0f64..2.0,
        extent in 0.5f64..8.0,
        nodes in 3usize..128,
        ns in proptest::collection::btree_set(1u32..64, 1..5),
        stratonovich in any::<bool>(),
        paths in 1usize..100_000,
    ) {
        let mut cfg = ExperimentConfig::minimal("prop");
        cfg.seed = seed;
        cfg.drift = sdelab_core::coefficients::FieldSpec::hardy(3, kappa, 1.0).unwrap();
        cfg.grid.extent = extent;
        cfg.grid.nodes = nodes;
        cfg.regularization.n_list = ns.into_iter().collect();
        cfg.variant = if stratonovich { SdeVariant::Stratonovich } else { SdeVariant::Ito };
        cfg.ensemble.as_mut().unwrap().paths = paths;
        let text = cfg.to_json();
        let back = ExperimentConfig::from_json(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_json(), text);
    }
}
