use stfcal::{run_experiment, run_suite, ExperimentConfig, Mismatch, Mode};

fn small(mismatch: Mismatch, mode: Mode) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(mismatch, mode);
    c.frames_per_phantom = 30;
    c.repetitions = 2;
    c.training.epochs = 5;
    c
}

#[test]
fn shared_suite_matches_single_runs() {
    let modes = [
        Mode::Benchmark,
        Mode::NoCalibration,
        Mode::TrainTime { p: 0.5 },
        Mode::TestTime,
        Mode::TransferLearning { n_frames: 4 },
    ];
    let configs: Vec<ExperimentConfig> = [Mismatch::OutputPower, Mismatch::PulseFrequency]
        .into_iter()
        .flat_map(|m| modes.map(|mode| small(m, mode)))
        .collect();
    let suite = run_suite(&configs).unwrap();
    for (i, entry) in suite.entries.iter().enumerate() {
        let shared = entry.result.as_ref().unwrap();
        assert_eq!(shared.per_run.len(), 2);
        assert!(shared.std_accuracy >= 0.0);
        if i % 2 == 0 {
            let alone = run_experiment(&configs[i]).unwrap();
            assert_eq!(alone.per_run, shared.per_run, "{:?}", configs[i].mode);
            assert_eq!(alone.config_digest, shared.config_digest);
        }
    }
    assert_eq!(run_suite(&configs).unwrap().table(), suite.table());
}

#[test]
fn seed_changes_results() {
    let a = small(Mismatch::OutputPower, Mode::NoCalibration);
    let mut b = a.clone();
    b.seeds.base += 1;
    assert_ne!(run_experiment(&a).unwrap().per_run, run_experiment(&b).unwrap().per_run);
}

#[test]
fn invalid_row_fails_alone() {
    let good = small(Mismatch::Focus, Mode::TestTime);
    let mut bad = good.clone();
    bad.mode = Mode::TrainTime { p: 1.5 };
    let out = run_suite(&[good, bad]).unwrap();
    assert!(out.entries[0].result.is_some());
    assert!(out.entries[1].error.is_some());
    assert!(out.table().contains("FAILED"));
}
