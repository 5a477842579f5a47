use super::report::histogram;
use super::*;
use crate::track::TrackModel;

fn digest(outcome: Outcome, min_ax: f64) -> RaceDigest {
    RaceDigest {
        index: 0,
        start: StartState {
            track_seed: 0,
            ev: crate::sim::StartPose { s: 0.0, e_y: 0.0, v_x: 1.0 },
            tv: crate::sim::StartPose { s: 1.0, e_y: 0.0, v_x: 1.0 },
        },
        outcome,
        solver_abort: false,
        min_ax,
        steps: 10,
        errors: Vec::new(),
    }
}

fn small_config(predictors: Vec<PredictorKind>, races: usize) -> ExperimentConfig {
    ExperimentConfig {
        predictors,
        q_y: vec![0.0],
        races,
        seed: 4,
        track: Some(TrackModel::oval(8.0, 2.0, 1.1).unwrap().to_spec()),
        settings: RaceSettings { max_time: 2.0, ..RaceSettings::default() },
        ..ExperimentConfig::default()
    }
}

#[test]
fn outcome_metric_examples() {
    let mut races: Vec<RaceDigest> = (0..4).map(|_| digest(Outcome::EvWin, -1.0)).collect();
    races.extend((0..2).map(|_| digest(Outcome::Crash, -2.0)));
    races.extend((0..3).map(|_| digest(Outcome::SafeLoss, -1.0)));
    races.push(digest(Outcome::EvOffTrack, -1.0));
    let m = OutcomeMetrics::from_digests(&races).unwrap();
    assert_eq!((m.win_rate, m.crash_rate, m.wins_per_crash), (0.4, 0.2, 2.0));
    assert_eq!(m.wins + m.safe_losses + m.crashes + m.off_track, m.races);
    assert!((m.mean_min_ax + 1.2).abs() < 1e-12);

    let m = OutcomeMetrics::from_digests(&vec![digest(Outcome::EvWin, 0.0); 3]).unwrap();
    assert_eq!(m.wins_per_crash, f64::INFINITY);
    let m = OutcomeMetrics::from_digests(&vec![digest(Outcome::Crash, 0.0); 5]).unwrap();
    assert_eq!(m.crash_rate, 1.0);
    assert!(matches!(OutcomeMetrics::from_digests(&Vec::new()), Err(Error::EmptyInput)));
    assert!(matches!(compute_outcome_metrics(&[]), Err(Error::EmptyInput)));
}

#[test]
fn constant_speed_has_zero_min_acceleration() {
    assert_eq!(min_longitudinal_acceleration(&[1.5; 20], 0.1), 0.0);
    assert_eq!(min_longitudinal_acceleration(&[1.5], 0.1), 0.0);
    assert!((min_longitudinal_acceleration(&[2.0, 1.8, 1.9], 0.1) + 2.0).abs() < 1e-12);
}

#[test]
fn config_validation_and_hash() {
    let cfg = ExperimentConfig::default();
    cfg.validate().unwrap();
    assert_eq!(cfg.horizon_steps(), vec![2, 10]);
    assert_eq!(cfg.hash(), cfg.clone().hash());
    assert_ne!(cfg.hash(), ExperimentConfig { seed: 1, ..cfg.clone() }.hash());
    assert!(ExperimentConfig { races: 0, ..cfg.clone() }.validate().is_err());
    assert!(ExperimentConfig { predictors: vec![], ..cfg.clone() }.validate().is_err());
    assert!(ExperimentConfig { error_steps: vec![11], ..cfg.clone() }.validate().is_err());
    let gp_only = ExperimentConfig { predictors: vec![PredictorKind::Gp { gamma: 1.0 }], ..cfg };
    assert!(matches!(monte_carlo(&gp_only, None, &RunOptions::default()), Err(Error::Config(_))));
}

#[test]
fn histogram_clamps_outliers() {
    let h = histogram(&[-5.0, -0.05, 0.0, 0.05, 5.0], 4, 0.1);
    assert_eq!(h.iter().map(|b| b.2).collect::<Vec<_>>(), vec![1, 1, 1, 2]);
    assert_eq!(h[0].0, -0.1);
    assert!((h[3].1 - 0.1).abs() < 1e-15);
}

#[test]
fn cells_share_starts_and_replay_from_logs() {
    let cfg = small_config(vec![PredictorKind::Cv { radius: 0.025 }, PredictorKind::Nl { radius: 0.0 }], 10);
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions { workers: 2, log_dir: Some(dir.path().to_path_buf()) };
    let live = monte_carlo(&cfg, None, &opts).unwrap();
    assert_eq!(live.cells.len(), 2);
    let (a, b) = (&live.cells[0], &live.cells[1]);
    assert_eq!(a.starts.len(), 10);
    assert_eq!(a.starts, b.starts);
    for c in &live.cells {
        let m = c.outcomes.as_ref().unwrap();
        assert_eq!(m.wins + m.safe_losses + m.crashes + m.off_track, m.races);
        assert!(c.failed.is_empty());
    }
    let replayed = report_from_logs(dir.path(), None).unwrap();
    assert_eq!(replayed, live);

    let single = monte_carlo(&cfg, None, &RunOptions { workers: 1, log_dir: None }).unwrap();
    assert_eq!(single, live);
}

#[test]
fn report_files_are_deterministic() {
    let cfg = small_config(vec![PredictorKind::Cv { radius: 0.025 }], 2);
    let report = monte_carlo(&cfg, None, &RunOptions::default()).unwrap();
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let files = emit_reports(&report, d1.path()).unwrap();
    emit_reports(&report, d2.path()).unwrap();

    let metrics = std::fs::read_to_string(d1.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 4);
    let hist = std::fs::read_dir(d1.path().join("histograms")).unwrap().count();
    assert_eq!(hist, 4);
    for f in &files {
        let rel = f.strip_prefix(d1.path()).unwrap();
        assert_eq!(std::fs::read(f).unwrap(), std::fs::read(d2.path().join(rel)).unwrap(), "{rel:?}");
    }
    let svg = std::fs::read_to_string(d1.path().join("metrics.svg")).unwrap();
    roxmltree::Document::parse(&svg).expect("valid XML");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d1.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_hash"], cfg.hash());
    assert_eq!(manifest["race_seeds"].as_array().unwrap().len(), 2);
}

#[test]
fn infinite_wins_per_crash_is_written_as_inf() {
    let cfg = small_config(vec![PredictorKind::Cv { radius: 0.0 }], 1);
    let mut report = monte_carlo(&cfg, None, &RunOptions::default()).unwrap();
    let m = report.cells[0].outcomes.as_mut().unwrap();
    m.crashes = 0;
    m.wins_per_crash = f64::INFINITY;
    let dir = tempfile::tempdir().unwrap();
    emit_reports(&report, dir.path()).unwrap();
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(metrics.lines().any(|l| l.contains("wins_per_crash,inf")), "{metrics}");
    roxmltree::Document::parse(&std::fs::read_to_string(dir.path().join("metrics.svg")).unwrap()).unwrap();
}

fn close_race(predictor: PredictorKind, max_time: f64) -> RaceLog {
    let track = Arc::new(TrackModel::oval(6.0, 1.5, 1.1).unwrap());
    let cfg = RaceConfig {
        track,
        start: StartState {
            track_seed: 0,
            ev: crate::sim::StartPose { s: 0.0, e_y: 0.0, v_x: 1.0 },
            tv: crate::sim::StartPose { s: 0.6, e_y: 0.1, v_x: 1.0 },
        },
        predictor,
        q_y: 0.0,
        settings: RaceSettings { max_time, laps: 3.0, ..RaceSettings::default() },
        seed: 1,
        gp: None,
        ev_script: None,
    };
    run_race(&cfg).unwrap()
}

#[test]
fn recorded_truth_has_zero_error() {
    let mut log = close_race(PredictorKind::Cv { radius: 0.0 }, 4.0);
    let tv: Vec<_> = log.steps.iter().map(|r| r.tv_curvilinear).collect();
    for (k, rec) in log.steps.iter_mut().enumerate() {
        if let Some(p) = rec.prediction.as_mut() {
            for (t, c) in p.curvilinear.iter_mut().enumerate() {
                if let Some(actual) = tv.get(k + t) {
                    *c = *actual;
                }
            }
        }
    }
    let errs = prediction_error_eval(&[log.clone()], &[2, 10], 2.0).unwrap();
    assert!(errs.iter().all(|e| !e.lateral.is_empty()));
    assert!(errs.iter().all(|e| e.longitudinal.iter().chain(&e.lateral).all(|v| *v == 0.0)));

    // Nothing is within a hundredth of a car length.
    assert!(matches!(prediction_error_eval(&[log], &[2], 0.01), Err(Error::NoInteractionSamples)));
}

#[test]
fn cv_lateral_error_grows_along_the_horizon_on_curves() {
    let log = close_race(PredictorKind::Cv { radius: 0.025 }, 12.0);
    let errs = prediction_error_eval(&[log], &[2, 10], 100.0).unwrap();
    let (early, late) = (errs[0].lateral_stats(), errs[1].lateral_stats());
    assert!(late.count > 20);
    assert!(late.mean.abs() > early.mean.abs(), "{early:?} {late:?}");
    assert!(late.mean_abs > early.mean_abs);
}
