use std::path::Path;

use mxl::config::{ExperimentConfig, Scheme, Task};
use mxl::grad::Tape;
use mxl::trainer::{generate_dataset, joint_train, prepare, uniform_pattern, Dataset};
use mxl::Error;

fn small(task: Task, scheme: Scheme) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.data.users = 240;
    cfg.data.block_rows = 4;
    cfg.data.block_cols = 4;
    cfg.model.aden_width = 24;
    cfg.model.ccm_width = 40;
    cfg.train.task = task;
    cfg.train.scheme = scheme;
    cfg.train.epochs = 4;
    cfg.train.batch_size = 32;
    cfg.train.seed = 7;
    cfg
}

fn config_file(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

#[test]
fn logged_total_is_penalty_plus_weighted_extrapolation_loss() {
    let cfg = small(Task::Channel, Scheme::AsnAden);
    let data = prepare(&generate_dataset(&cfg).unwrap(), &cfg).unwrap();
    let out = joint_train(&data, &cfg).unwrap();
    assert_eq!(out.history.len(), cfg.train.epochs);
    for (e, r) in out.history.iter().enumerate() {
        assert_eq!(r.epoch, e);
        assert_eq!(r.rho, 5.0 * 5f64.powi(e as i32));
        let expect = r.loss_asn + r.rho * r.loss_aden;
        assert!((r.loss_total - expect).abs() <= 1e-12 * expect.abs().max(1.0), "epoch {e}");
        assert!(r.loss_asn >= 0.0 && r.loss_aden >= 0.0 && r.metric.is_finite());
        assert_eq!(r.s.len(), cfg.train.m_t);
    }
    assert_eq!(out.summary.frozen_s.len(), cfg.train.m_t);
    assert!(out.summary.frozen_s.windows(2).all(|w| w[0] < w[1]));
    assert!((out.summary.soft.iter().sum::<f64>() - cfg.train.m_t as f64).abs() < 1e-9);
}

#[test]
fn training_is_deterministic_and_seed_sensitive() {
    let cfg = small(Task::Channel, Scheme::AsnDnn);
    let data = prepare(&generate_dataset(&cfg).unwrap(), &cfg).unwrap();
    let a = joint_train(&data, &cfg).unwrap();
    let b = joint_train(&data, &cfg).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.summary, b.summary);
    let mut other = cfg.clone();
    other.train.seed = 8;
    let c = joint_train(&data, &other).unwrap();
    assert_ne!(a.history[0].loss_total, c.history[0].loss_total);
    // the split does not follow the run seed
    assert_eq!(prepare(&generate_dataset(&other).unwrap(), &other).unwrap().holdout, data.holdout);
}

#[test]
fn uniform_schemes_have_no_penalty_and_a_fixed_pattern() {
    for scheme in [Scheme::UniformAden, Scheme::UniformDnn] {
        let cfg = small(Task::Channel, scheme);
        let data = prepare(&generate_dataset(&cfg).unwrap(), &cfg).unwrap();
        let out = joint_train(&data, &cfg).unwrap();
        let pattern = uniform_pattern(16, cfg.train.m_t);
        for r in &out.history {
            assert_eq!(r.loss_asn, 0.0);
            assert_eq!(r.s, pattern);
        }
        assert_eq!(out.summary.frozen_s, pattern);
        assert!(out.summary.soft.is_empty());
    }
}

#[test]
fn unselected_antennas_are_zero_in_the_network_input() {
    for task in [Task::Channel, Task::Ccm] {
        let cfg = small(task, Scheme::AsnAden);
        let data = prepare(&generate_dataset(&cfg).unwrap(), &cfg).unwrap();
        let model = mxl::trainer::Model::new(
            &cfg,
            data.classes,
            &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1),
        )
        .unwrap();
        let rows = &data.train[..5];
        let mut tape = Tape::new();
        let g = model.step_graph(&mut tape, &data, rows, 5.0, &cfg).unwrap();
        let x = tape.value(g.masked);
        let n = 16;
        for (r, &row) in rows.iter().enumerate() {
            let src = data.input_row(row);
            let got = &x.data()[r * data.dim..(r + 1) * data.dim];
            for (k, (&v, &orig)) in got.iter().zip(src).enumerate() {
                let kept = match task {
                    Task::Ccm => {
                        let cell = k % (n * n);
                        g.hard[cell / n] == 1.0 && g.hard[cell % n] == 1.0
                    }
                    _ => g.hard[k % n] == 1.0,
                };
                assert_eq!(v, if kept { orig } else { 0.0 }, "task {task:?} entry {k}");
            }
        }
    }
}

#[test]
fn covariance_runs_report_psd_fraction() {
    let mut cfg = small(Task::Ccm, Scheme::AsnAden);
    cfg.train.epochs = 2;
    let data = generate_dataset(&cfg).unwrap();
    assert!(matches!(&data, Dataset::Covariances(v) if v.len() == 16));
    let out = joint_train(&prepare(&data, &cfg).unwrap(), &cfg).unwrap();
    let frac = out.summary.psd_fraction.unwrap();
    assert!((0.0..=1.0).contains(&frac));
    assert!(out.summary.holdout_metric.is_finite());
}

#[test]
fn beam_runs_score_accuracy() {
    let cfg = small(Task::Beam, Scheme::UniformAden);
    let data = prepare(&generate_dataset(&cfg).unwrap(), &cfg).unwrap();
    assert_eq!(data.classes, 16);
    let out = joint_train(&data, &cfg).unwrap();
    assert!((0.0..=1.0).contains(&out.summary.holdout_metric));
    assert_eq!(out.summary.metric_name, "accuracy");
}

#[test]
fn dataset_kind_must_match_the_task() {
    let cfg = small(Task::Ccm, Scheme::AsnAden);
    let covs = generate_dataset(&cfg).unwrap();
    let channel_cfg = small(Task::Channel, Scheme::AsnAden);
    assert!(matches!(prepare(&covs, &channel_cfg), Err(Error::Config(_))));
    let chans = generate_dataset(&channel_cfg).unwrap();
    assert!(matches!(prepare(&chans, &cfg), Err(Error::Config(_))));
    // prepared data for one task cannot train another
    let prepared = prepare(&chans, &channel_cfg).unwrap();
    assert!(joint_train(&prepared, &small(Task::Beam, Scheme::AsnAden)).is_err());
}

#[test]
fn shipped_desk_config_is_the_default() {
    let cfg = ExperimentConfig::load(&config_file("desk.cfg")).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
}

#[test]
fn shipped_full_scale_config_is_valid() {
    let cfg = ExperimentConfig::load(&config_file("table1.cfg")).unwrap();
    assert_eq!(cfg.array.n_t(), 64);
    assert_eq!(cfg.data.users, 601 * 181);
    assert_eq!(cfg.scene.grid_len(), cfg.data.users);
    assert_eq!(cfg.train.m_t, 8);
}
