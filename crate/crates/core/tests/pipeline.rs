use std::path::{Path, PathBuf};

use gecm_hem::cv::{select_kappa0, CvPlan};
use gecm_hem::data::{generate_scenario, load_csv, ScenarioConfig, ScenarioId};
use gecm_hem::ecm::{EcmInit, HyperParams};
use gecm_hem::pipeline::*;
use gecm_hem::Error;

fn simulate(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        mode: Mode::Simulate,
        seed: 21,
        workers: 1,
        out_dir: dir.join("sim"),
        n: Some(120),
        p: Some(30),
        n_signals: Some(3),
        test_n: 200,
        ..RunConfig::default()
    };
    cmd_simulate(&cfg).unwrap();
    cfg.data = Some(cfg.out_dir.join(DATA_FILE));
    cfg.truth = Some(cfg.out_dir.join(TRUTH_FILE));
    cfg.test = Some(cfg.out_dir.join(TEST_FILE));
    cfg
}

fn fit_config(sim: &RunConfig, out: PathBuf) -> RunConfig {
    RunConfig {
        mode: Mode::Fit,
        out_dir: out,
        iters: 600,
        burnin: 100,
        kappa0_grid: vec![0.02, 0.05, 0.1, 0.2, 0.4],
        ..sim.clone()
    }
}

#[test]
fn simulate_fit_predict_evaluate_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path());
    let data = load_csv(sim.out_dir.join(DATA_FILE), "y").unwrap();
    assert_eq!((data.n(), data.p()), (120, 30));
    assert_eq!(load_csv(sim.out_dir.join(TEST_FILE), "y").unwrap().n(), 200);
    let (truth, _) = read_truth(&sim.out_dir.join(TRUTH_FILE)).unwrap();
    assert_eq!(truth.gamma_true.iter().filter(|g| **g).count(), 3);

    let fit_dir = dir.path().join("fit");
    let out = cmd_fit(&fit_config(&sim, fit_dir.clone())).unwrap();
    for f in [MANIFEST, CV_FILE, ECM_FILE, DRAWS_FILE, SUMMARY_FILE, STANDARDIZER_FILE] {
        assert!(fit_dir.join(f).exists(), "{f} missing");
    }
    assert_eq!(out.draws.as_ref().unwrap().len(), 500);
    let manifest = std::fs::read_to_string(fit_dir.join(MANIFEST)).unwrap();
    assert!(manifest.contains("eta_grid = 0.05,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1,2,5,10,20,50"));
    assert!(manifest.contains("# selected_kappa0 = "));

    let eval = RunConfig {
        mode: Mode::Evaluate,
        fit_dir: Some(fit_dir.clone()),
        out_dir: dir.path().join("eval"),
        ..sim.clone()
    };
    let report = cmd_evaluate(&eval).unwrap();
    assert_eq!(report.tpr, Some(1.0));
    assert!(report.coverage > 0.8);

    let predict = RunConfig {
        mode: Mode::Predict,
        fit_dir: Some(fit_dir),
        new_data: sim.test.clone(),
        out_dir: dir.path().join("pred"),
        level: 0.5,
        ..sim.clone()
    };
    let narrow = cmd_predict(&predict).unwrap();
    assert_eq!(narrow.len(), 200);
    let wide = gecm_hem::inference::PredictionResult::read_csv(dir.path().join("eval").join(PREDICTIONS_FILE), 0.9).unwrap();
    for i in 0..narrow.len() {
        assert!(narrow.upper[i] - narrow.lower[i] <= wide.upper[i] - wide.lower[i]);
    }

    let table = cmd_aggregate(&[dir.path().join("eval"), dir.path().join("eval")], &dir.path().join("agg")).unwrap();
    assert!(table.starts_with("metric,min,q1,median,q3,max,n"));
    assert!(dir.path().join("agg").join(AGGREGATE_FILE).exists());
}

#[test]
fn ecm_only_stops_before_sampling() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path());
    let fit_dir = dir.path().join("fit");
    let cfg = RunConfig {
        ecm_only: true,
        kappa0: Some(0.1),
        ..fit_config(&sim, fit_dir.clone())
    };
    let out = cmd_fit(&cfg).unwrap();
    assert!(out.draws.is_none());
    assert!(fit_dir.join(ECM_FILE).exists());
    assert!(!fit_dir.join(DRAWS_FILE).exists());
    assert!(!fit_dir.join(CV_FILE).exists());
    assert!(matches!(load_fit(&fit_dir), Err(Error::Config(_))));
}

#[test]
fn skip_screening_samples_every_column() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path());
    let cfg = RunConfig {
        skip_screening: true,
        iters: 50,
        burnin: 10,
        ..fit_config(&sim, dir.path().join("fit"))
    };
    let out = cmd_fit(&cfg).unwrap();
    assert!(out.ecm.is_none());
    assert_eq!(out.reduced_indices.len(), 30);
    assert_eq!(out.draws.unwrap().p(), 30);
}

#[test]
fn manifest_rerun_reproduces_outputs_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path());
    let first = dir.path().join("first");
    cmd_fit(&fit_config(&sim, first.clone())).unwrap();

    let mut again = RunConfig::from_file(first.join(MANIFEST)).unwrap();
    again.out_dir = dir.path().join("second");
    again.workers = 4;
    cmd_fit(&again).unwrap();
    for f in [DRAWS_FILE, CV_FILE, ECM_FILE, SUMMARY_FILE] {
        let a = std::fs::read(first.join(f)).unwrap();
        let b = std::fs::read(again.out_dir.join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }

    let sim_again = RunConfig {
        out_dir: dir.path().join("sim2"),
        ..RunConfig::from_file(sim.out_dir.join(MANIFEST)).unwrap()
    };
    cmd_simulate(&sim_again).unwrap();
    for f in [DATA_FILE, TEST_FILE, TRUTH_FILE] {
        assert!(std::fs::read(sim.out_dir.join(f)).unwrap() == std::fs::read(sim_again.out_dir.join(f)).unwrap());
    }
}

#[test]
fn changed_data_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path());
    let cfg = RunConfig {
        data_sha256: Some("0".repeat(64)),
        ..fit_config(&sim, dir.path().join("fit"))
    };
    assert!(matches!(cmd_fit(&cfg), Err(e) if e.is_data()));
}

#[test]
fn cross_validation_ignores_worker_count() {
    let cfg = ScenarioConfig {
        n: 150,
        p: 40,
        n_signals: 4,
        ..ScenarioConfig::preset(ScenarioId::I, 8)
    };
    let (d, _) = generate_scenario(&cfg).unwrap();
    let hp = HyperParams::default();
    let plan = CvPlan::new(d.n(), 10, hp.kappa0_grid.clone(), stage_seed(8, "cv")).unwrap();
    let one = select_kappa0(&d, &hp, &plan, &EcmInit::default(), 1).unwrap();
    let eight = select_kappa0(&d, &hp, &plan, &EcmInit::default(), 8).unwrap();
    assert_eq!(one, eight);
    assert_eq!(one.to_text(), eight.to_text());
}
