use histosynth::gan::{DiscriminatorConfig, RefinerConfig};
use histosynth::phantom::{phantom_corpus, PhantomStyle};
use histosynth::synth::{synthesize_patch, RealPatch, SynthesisParams};
use histosynth::task::TaskConfig;
use histosynth::trainer::*;
use histosynth::Error;
use rand::RngCore;

const PATCH: usize = 24;

fn toy_corpus(samples: usize) -> TrainCorpus {
    let mut real: Vec<RealPatch> = Vec::new();
    for (k, style) in PhantomStyle::palette().iter().take(2).enumerate() {
        real.extend(phantom_corpus(style, 4, 32, 100 * k as u64).unwrap());
    }
    let params = SynthesisParams {
        patch_size: PATCH,
        ..Default::default()
    };
    let synth: Vec<_> = (0..samples)
        .map(|i| {
            let group = if i % 2 == 0 { &real[..4] } else { &real[4..] };
            let bg = &group[i % 4];
            let tex = &group[(i + 1) % 4];
            synthesize_patch(bg, tex, &params.with_seed(i as u64)).unwrap()
        })
        .collect();
    TrainCorpus::from_synth(&synth, &real).unwrap()
}

fn small_config(schedule: Schedule) -> TrainConfig {
    TrainConfig {
        schedule,
        models: ModelConfig {
            refiner: RefinerConfig {
                width: 4,
                wide: 6,
                ..Default::default()
            },
            discriminator: DiscriminatorConfig {
                width: 4,
                wide: 6,
                ..Default::default()
            },
            task: TaskConfig {
                width: 4,
                wide: 6,
                ..Default::default()
            },
        },
        seed: 7,
        ..Default::default()
    }
}

fn small_schedule() -> Schedule {
    Schedule {
        pretrain_g: 3,
        pretrain_d: 2,
        gd_rounds: 1,
        inner_g: 1,
        inner_d: 1,
        pretrain_r: 2,
        gdr_rounds: 1,
        inner_r: 1,
        batch_size: 2,
        lr_g: 1e-3,
        lr_d: 1e-3,
        lr_r: 1e-3,
    }
}

fn same_params(a: &TrainState, b: &TrainState) -> [bool; 3] {
    [
        a.refiner.params == b.refiner.params,
        a.disc.params == b.disc.params,
        a.task.params == b.task.params,
    ]
}

#[test]
fn zero_schedule_changes_nothing() {
    let corpus = toy_corpus(4);
    let config = small_config(Schedule::zero());
    let init = TrainState::new(config.clone()).unwrap();
    let done = run_training(&corpus, config).unwrap();
    assert_eq!(same_params(&init, &done), [true; 3]);
    assert!(done.history.is_empty());
    assert_eq!(done.stage, Stage::Done);
}

#[test]
fn pretraining_g_shrinks_reg_loss() {
    let corpus = toy_corpus(8);
    let mut config = small_config(Schedule {
        pretrain_g: 50,
        ..Schedule::zero()
    });
    config.models.refiner.residual_init = 0.5;
    let state = run_training(&corpus, config).unwrap();
    assert_eq!(state.history.len(), 50);
    assert!(state.history.iter().all(|r| r.objective == Objective::GReg));
    let (first, last) = (state.history[0].loss, state.history[49].loss);
    assert!(last < first, "L_reg {first} -> {last}");
}

#[test]
fn worked_event_log() {
    let corpus = toy_corpus(4);
    let schedule = Schedule {
        pretrain_g: 1,
        pretrain_d: 1,
        gd_rounds: 2,
        inner_g: 3,
        inner_d: 2,
        pretrain_r: 1,
        gdr_rounds: 1,
        inner_r: 1,
        batch_size: 1,
        ..Default::default()
    };
    let state = run_training(&corpus, small_config(schedule)).unwrap();
    use Network::*;
    use Objective::*;
    let mut want = vec![(G, GReg), (D, DPairs)];
    for _ in 0..2 {
        want.extend([(G, GAdv), (G, GAdv), (G, GAdv), (D, DPairs), (D, DPairs)]);
    }
    want.push((R, RTask));
    want.extend([
        (G, GFull),
        (G, GFull),
        (G, GFull),
        (D, DPairs),
        (D, DPairs),
        (R, RTask),
    ]);
    let got: Vec<_> = state
        .history
        .iter()
        .map(|r| (r.network, r.objective))
        .collect();
    assert_eq!(got, want);
    let steps: Vec<u64> = state.history.iter().map(|r| r.step).collect();
    assert_eq!(steps, (1..=want.len() as u64).collect::<Vec<_>>());
    assert_eq!(state.counts.g, 10);
    assert_eq!(state.counts.d, 7);
    assert_eq!(state.counts.r, 2);
}

#[test]
fn each_step_updates_only_its_network() {
    let corpus = toy_corpus(4);
    let mut state = TrainState::new(small_config(small_schedule())).unwrap();
    state.stage = Stage::GdrLoop;
    let batch = state.next_batch(&corpus).unwrap();
    for (objective, changed) in [
        (Objective::GFull, [false, true, true]),
        (Objective::DPairs, [true, false, true]),
        (Objective::RTask, [true, true, false]),
    ] {
        let before = state.clone();
        state.training_step(objective, &batch).unwrap();
        assert_eq!(same_params(&before, &state), changed, "{objective}");
        assert_eq!(before.opt_g == state.opt_g, changed[0]);
        assert_eq!(before.opt_d == state.opt_d, changed[1]);
        assert_eq!(before.opt_r == state.opt_r, changed[2]);
        assert_eq!(state.history.len(), before.history.len() + 1);
    }
}

#[test]
fn zero_learning_rate_only_advances_counters() {
    let corpus = toy_corpus(4);
    let mut schedule = small_schedule();
    schedule.lr_g = 0.0;
    schedule.lr_d = 0.0;
    schedule.lr_r = 0.0;
    let mut state = TrainState::new(small_config(schedule)).unwrap();
    let before = state.clone();
    state.run(&corpus, None, &mut |_| {}).unwrap();
    assert_eq!(same_params(&before, &state), [true; 3]);
    for (a, b) in [
        (&before.opt_g, &state.opt_g),
        (&before.opt_d, &state.opt_d),
        (&before.opt_r, &state.opt_r),
    ] {
        assert_eq!(a.moments(), b.moments());
    }
    assert_eq!(state.opt_g.steps(), 3 + 1 + 1);
    assert_eq!(state.history.len(), small_schedule().total_events());
}

#[test]
fn illegal_objective_is_rejected() {
    let corpus = toy_corpus(4);
    let mut state = TrainState::new(small_config(small_schedule())).unwrap();
    let batch = state.next_batch(&corpus).unwrap();
    for (stage, objective) in [
        (Stage::Init, Objective::GReg),
        (Stage::PretrainG, Objective::DPairs),
        (Stage::GdLoop, Objective::GFull),
        (Stage::GdLoop, Objective::RTask),
        (Stage::Done, Objective::RTask),
    ] {
        state.stage = stage;
        let before = state.clone();
        let err = state.training_step(objective, &batch).unwrap_err();
        assert!(matches!(err, Error::IllegalObjective { .. }), "{err}");
        assert_eq!(same_params(&before, &state), [true; 3]);
        assert!(state.history.is_empty());
    }
}

#[test]
fn non_finite_loss_aborts_with_diagnostics() {
    let corpus = toy_corpus(4);
    let mut state = TrainState::new(small_config(small_schedule())).unwrap();
    let id = histosynth_nn::ParamId(0);
    state.refiner.params.get_mut(id).data_mut()[0] = f64::NAN;
    let err = state.run(&corpus, None, &mut |_| {}).unwrap_err();
    match err {
        Error::NonFinite {
            stage,
            step,
            network,
        } => {
            assert_eq!(
                (stage.as_str(), step, network.as_str()),
                ("pretrain_G", 1, "G")
            );
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn gd_loop_never_queries_task_network() {
    let corpus = toy_corpus(4);
    let schedule = Schedule {
        pretrain_r: 0,
        gdr_rounds: 0,
        ..small_schedule()
    };
    let init = TrainState::new(small_config(schedule.clone())).unwrap();
    let mut seen_gd = false;
    let state = {
        let mut s = init.clone();
        s.run(&corpus, None, &mut |st| {
            seen_gd |= st.stage == Stage::GdLoop;
            assert_eq!(st.task_queries, 0);
        })
        .unwrap();
        s
    };
    assert!(seen_gd);
    assert_eq!(state.task.params, init.task.params);
    assert_eq!(state.opt_r, init.opt_r);
}

#[test]
fn fixed_seed_is_deterministic() {
    let corpus = toy_corpus(4);
    let a = run_training(&corpus, small_config(small_schedule())).unwrap();
    let b = run_training(&corpus, small_config(small_schedule())).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(same_params(&a, &b), [true; 3]);
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let corpus = toy_corpus(4);
    let mut state = TrainState::new(small_config(small_schedule())).unwrap();
    state.run(&corpus, Some(6), &mut |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ckpt");
    save_checkpoint(&state, &path).unwrap();
    let mut back = load_checkpoint(&path).unwrap();
    assert_eq!(same_params(&state, &back), [true; 3]);
    assert_eq!(state.opt_g, back.opt_g);
    assert_eq!(state.opt_d, back.opt_d);
    assert_eq!(state.opt_r, back.opt_r);
    assert_eq!(state.history, back.history);
    assert_eq!(
        (state.stage, state.cursor, state.counts),
        (back.stage, back.cursor, back.counts)
    );
    assert_eq!(state.config, back.config);
    let b1 = state.next_batch(&corpus).unwrap();
    let b2 = back.next_batch(&corpus).unwrap();
    assert_eq!(b1.input, b2.input);
    assert_eq!(b1.reference, b2.reference);
    assert_eq!(b1.real, b2.real);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let corpus = toy_corpus(6);
    let full = run_training(&corpus, small_config(small_schedule())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let total = small_schedule().total_events();
    for cut in [1, 5, 8, total - 1] {
        let mut first = TrainState::new(small_config(small_schedule())).unwrap();
        first.run(&corpus, Some(cut), &mut |_| {}).unwrap();
        let path = dir.path().join(format!("cut{cut}.ckpt"));
        save_checkpoint(&first, &path).unwrap();
        drop(first);
        let mut resumed = load_checkpoint(&path).unwrap();
        resumed.run(&corpus, None, &mut |_| {}).unwrap();
        assert_eq!(resumed.history, full.history, "cut at {cut}");
        assert_eq!(same_params(&resumed, &full), [true; 3]);
        assert_eq!(resumed.stage, Stage::Done);
    }
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let corpus = toy_corpus(4);
    let mut state = TrainState::new(small_config(small_schedule())).unwrap();
    state.run(&corpus, Some(2), &mut |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    save_checkpoint(&state, &path).unwrap();
    let good = std::fs::read(&path).unwrap();

    let mut rng = rand::rng();
    for _ in 0..5 {
        let mut bad = good.clone();
        let i = 20 + (rng.next_u64() as usize) % (bad.len() - 20);
        bad[i] ^= 0x40;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    }

    std::fs::write(&path, &good[..good.len() / 2]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));

    let mut other = good.clone();
    other[8..12].copy_from_slice(&99u32.to_le_bytes());
    std::fs::write(&path, &other).unwrap();
    assert!(matches!(
        load_checkpoint(&path),
        Err(Error::CheckpointVersion {
            found: 99,
            expected: 1
        })
    ));
}

#[test]
fn run_config_round_trips_through_toml() {
    let cfg = RunConfig {
        seed: 11,
        samples: 40,
        ..Default::default()
    };
    let text = cfg.to_toml_string().unwrap();
    assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);

    let bad = text.replace("version = 1", "version = 2");
    assert!(matches!(
        RunConfig::from_toml_str(&bad),
        Err(Error::Config(_))
    ));
    let invalid = text.replace("batch_size = 8", "batch_size = 0");
    assert!(matches!(
        RunConfig::from_toml_str(&invalid),
        Err(Error::Params(_))
    ));
}

#[test]
fn metrics_csv_has_one_row_per_update() {
    let corpus = toy_corpus(4);
    let state = run_training(&corpus, small_config(small_schedule())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.csv");
    write_metrics_csv(&state.history, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "step,stage,network,loss");
    assert_eq!(lines.len(), state.history.len() + 1);
    assert!(lines[1].starts_with("1,pretrain_G,G,"));
}
