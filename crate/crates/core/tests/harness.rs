use std::path::PathBuf;

use dse_core::attacks::AttackSpec;
use dse_core::estimators::{EstimatorConfig, EstimatorKind};
use dse_core::harness::{
    emit_report, generate_run, load_scenario, monte_carlo, run_scenario, simulate_run, PreparedAttack, ReportFormat,
    RmseReport, ScenarioConfig,
};
use dse_core::model::{ieee14_surrogate, load_model, validate_model, SURROGATE_PROTECTED};
use dse_core::Execution;

fn bundled_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/ieee14_surrogate.json")
}

fn scenario(attack: AttackSpec, runs: usize, steps: usize) -> ScenarioConfig {
    ScenarioConfig {
        model_path: bundled_path(),
        steps,
        runs,
        seed: 11,
        attack,
        attack_start: 3,
        estimators: [
            EstimatorKind::LeastSquares,
            EstimatorKind::Kalman,
            EstimatorKind::Pcna,
            EstimatorKind::Cckf,
        ]
        .into_iter()
        .map(EstimatorConfig::new)
        .collect(),
        output_path: None,
    }
}

fn random_attack() -> AttackSpec {
    AttackSpec::Random { m: 5, magnitude: 10.0 }
}

#[test]
fn bundled_file_matches_generator() {
    let text = std::fs::read_to_string(bundled_path()).unwrap();
    assert_eq!(text, ieee14_surrogate().to_json() + "\n");
    let model = load_model(bundled_path()).unwrap();
    assert_eq!(model, ieee14_surrogate());
    let report = validate_model(&model);
    assert!(report.is_valid(), "{:?}", report.violations);
    assert_eq!((report.p, report.n, report.rank_c), (10, 35, 10));
    assert_eq!(model.protected, vec![SURROGATE_PROTECTED]);
}

#[test]
fn same_seed_same_report() {
    let model = ieee14_surrogate();
    let cfg = scenario(random_attack(), 2, 12);
    let a = monte_carlo(&cfg, &model, 2, Execution::Parallel).unwrap();
    let b = monte_carlo(&cfg, &model, 2, Execution::Parallel).unwrap();
    assert_eq!(a, b);
    let seq = monte_carlo(&cfg, &model, 2, Execution::Sequential).unwrap();
    assert_eq!(a, seq);
    let other = monte_carlo(&ScenarioConfig { seed: 12, ..cfg }, &model, 2, Execution::Parallel).unwrap();
    assert_ne!(a.series, other.series);
}

#[test]
fn runs_aggregate_per_run_errors() {
    let model = ieee14_surrogate();
    let cfg = scenario(random_attack(), 2, 10);
    let attack = PreparedAttack::new(&cfg.attack, &model).unwrap();
    let r0 = simulate_run(&cfg, &model, &attack, 0).unwrap();
    let r1 = simulate_run(&cfg, &model, &attack, 1).unwrap();
    let report = monte_carlo(&cfg, &model, 2, Execution::Sequential).unwrap();
    for (j, series) in report.series.iter().enumerate() {
        for t in 0..cfg.steps {
            let want = ((r0.sq_err[j][t] + r1.sq_err[j][t]) / (2.0 * model.p() as f64)).sqrt();
            assert_eq!(series.rmse[t], want, "{} step {t}", series.estimator);
        }
        assert_eq!(series.flagged_steps, r0.flagged_steps[j] + r1.flagged_steps[j]);
    }
    // A single-run report is the first run alone.
    let one = monte_carlo(&cfg, &model, 1, Execution::Sequential).unwrap();
    let p = model.p() as f64;
    assert_eq!(one.series[0].rmse[4], (r0.sq_err[0][4] / p).sqrt());
}

#[test]
fn estimators_share_frames() {
    let model = ieee14_surrogate();
    let cfg = scenario(random_attack(), 1, 8);
    let attack = PreparedAttack::new(&cfg.attack, &model).unwrap();
    let out = simulate_run(&cfg, &model, &attack, 0).unwrap();
    assert_eq!(out.frame_digests.len(), 4);
    assert!(out.frame_digests.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn attack_starts_on_schedule() {
    let model = ieee14_surrogate();
    let cfg = scenario(random_attack(), 1, 9);
    let attack = PreparedAttack::new(&cfg.attack, &model).unwrap();
    let data = generate_run(&cfg, &model, &attack, 0).unwrap();
    assert_eq!(data.frames.len(), 9);
    let support = data.frames[cfg.attack_start].attack_support.clone();
    assert_eq!(support.len(), 5);
    assert!(!support.contains(&SURROGATE_PROTECTED));
    for (k, f) in data.frames.iter().enumerate() {
        assert_eq!(f.k, k as u64);
        if k < cfg.attack_start {
            assert!(f.attack_support.is_empty());
            assert_eq!(f.y_observed, f.y_clean);
        } else {
            assert_eq!(f.attack_support, support);
            let diff = &f.y_observed - &f.y_clean;
            for i in 0..model.n() {
                assert_eq!(diff[i] != 0.0, support.contains(&i), "k {k} sensor {i}");
            }
        }
    }
    // Attack randomness does not disturb the plant or the noise.
    let clean = generate_run(
        &ScenarioConfig {
            attack: AttackSpec::None,
            ..cfg.clone()
        },
        &model,
        &PreparedAttack::None,
        0,
    )
    .unwrap();
    assert_eq!(clean.truths, data.truths);
    for (a, b) in clean.frames.iter().zip(&data.frames) {
        assert_eq!(a.y_clean, b.y_clean);
    }
}

#[test]
fn attack_on_protected_sensor_rejected() {
    let model = ieee14_surrogate();
    let spec = AttackSpec::SpecificSensor {
        sensors: vec![0, SURROGATE_PROTECTED],
        d: vec![1.0, 1.0],
    };
    assert!(PreparedAttack::new(&spec, &model).is_err());
}

#[test]
fn scenario_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(bundled_path(), dir.path().join("model.json")).unwrap();
    let mut cfg = scenario(random_attack(), 1, 6);
    cfg.model_path = "model.json".into();
    cfg.estimators.truncate(2);
    let path = dir.path().join("scenario.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();

    let loaded = load_scenario(&path).unwrap();
    assert_eq!(loaded.model_path, dir.path().join("model.json"));
    let report = run_scenario(&loaded).unwrap();
    assert_eq!(report.series.len(), 2);
    assert_eq!(report.metadata.steps, 6);
    assert_eq!(report.metadata.config_digest.len(), 64);

    let csv = dir.path().join("out.csv");
    emit_report(&report, &csv, ReportFormat::Csv).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next(), Some("step,estimator,rmse"));
    assert_eq!(text.lines().count(), 1 + 6 * 2);
    let json = dir.path().join("out.json");
    emit_report(&report, &json, ReportFormat::Json).unwrap();
    assert_eq!(
        RmseReport::from_json(&std::fs::read_to_string(json).unwrap()).unwrap(),
        report
    );
}

#[test]
fn scenario_validation() {
    let mut cfg = scenario(random_attack(), 1, 3);
    cfg.attack_start = 3;
    assert!(cfg.validate().is_err());
    let mut cfg = scenario(AttackSpec::None, 1, 3);
    cfg.estimators.push(EstimatorConfig::new(EstimatorKind::Cckf));
    assert!(cfg.validate().is_err());
    let mut labelled = EstimatorConfig::new(EstimatorKind::Cckf);
    labelled.label = Some("cckf_rho0".into());
    labelled.rho = 0.0;
    cfg.estimators.pop();
    cfg.estimators.push(labelled);
    cfg.validate().unwrap();
    assert!(serde_json::from_str::<ScenarioConfig>(
        r#"{"model_path":"m","steps":1,"runs":1,"seed":0,"estimators":[],"bogus":1}"#
    )
    .is_err());
}
