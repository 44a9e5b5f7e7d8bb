//! Trainer behaviour on small seeded runs.

use ybev_core::dataset::generate_dataset;
use ybev_core::model::{decode_checkpoint, encode_checkpoint};
use ybev_core::trainer::{StepRecord, Trainer};
use ybev_core::{BackboneConfig, HeadConfig, Model, ModelConfig, RunLog, Tensor, TrainConfig};

fn small_model() -> ModelConfig {
    let ch = vec![8, 16, 16];
    ModelConfig {
        backbone: BackboneConfig {
            stem_channels: 4,
            stages: ch
                .iter()
                .map(|&channels| ybev_core::model::StageConfig {
                    channels,
                    stride: 2,
                    depth: 0,
                })
                .collect(),
        },
        head: HeadConfig {
            n_l: 3,
            ch,
            mid_channels: 8,
            out_channels: 4,
        },
        ..ModelConfig::default()
    }
}

#[test]
fn smoothed_overfit_loss_does_not_increase() {
    let ds = generate_dataset(16, 1000, 64, 4).unwrap();
    let cfg = TrainConfig {
        steps: 1000,
        ..TrainConfig::overfit_preset()
    };
    let mut tr = Trainer::new(cfg, &ds).unwrap();
    let mut log = RunLog::default();
    tr.run_until(1000, &mut log).unwrap();
    let windows: Vec<f64> = log
        .records
        .chunks(100)
        .map(|w| w.iter().map(|r| r.total).sum::<f64>() / w.len() as f64)
        .collect();
    assert!(
        windows.windows(2).all(|w| w[1] <= w[0]),
        "100-step means: {windows:?}"
    );
}

#[test]
fn run_log_steps_increase_and_checkpoint_resumes() {
    let ds = generate_dataset(3, 70, 64, 2).unwrap();
    let cfg = TrainConfig {
        steps: 6,
        batch_size: 2,
        overfit_frames: 3,
        model: small_model(),
        ..TrainConfig::default()
    };
    let mut tr = Trainer::new(cfg.clone(), &ds).unwrap();
    let mut log = RunLog::default();
    tr.run_until(3, &mut log).unwrap();
    let bytes = encode_checkpoint(&tr.checkpoint()).unwrap();
    tr.run_until(6, &mut log).unwrap();
    assert!(log.records.windows(2).all(|w| w[0].step < w[1].step));

    let mut resumed =
        Trainer::resume(cfg.clone(), &ds, decode_checkpoint(&bytes).unwrap()).unwrap();
    let mut tail = RunLog::default();
    resumed.run_until(6, &mut tail).unwrap();
    assert_eq!(tail.trace(), log.trace()[3..].to_vec());
    assert_eq!(resumed.model(), tr.model());

    let mut other = cfg.clone();
    other.model.init_seed = 9;
    assert!(Trainer::resume(other, &ds, decode_checkpoint(&bytes).unwrap()).is_err());
}

#[test]
fn run_log_rejects_repeated_steps() {
    let rec = |step| StepRecord {
        step,
        l_bbox: 0.0,
        l_pos_conf: 0.0,
        l_neg_conf: 0.0,
        total: 0.0,
        n_pos: 0,
        n_neg: 1,
        millis: 0.0,
    };
    let mut log = RunLog::default();
    log.push(rec(1)).unwrap();
    assert!(log.push(rec(1)).is_err());
    log.push(rec(2)).unwrap();
    let text = log.to_jsonl();
    let back = RunLog::from_jsonl(&text, std::path::Path::new("log.jsonl")).unwrap();
    assert_eq!(back, log);
}

#[test]
fn invalid_configs_are_rejected() {
    let ds = generate_dataset(2, 1, 64, 1).unwrap();
    for cfg in [
        TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            lr: f64::NAN,
            ..TrainConfig::default()
        },
        TrainConfig {
            overfit_frames: 0,
            ..TrainConfig::default()
        },
    ] {
        assert!(Trainer::new(cfg, &ds).is_err());
    }
}

#[test]
fn forward_is_bitwise_repeatable() {
    let ds = generate_dataset(2, 5, 64, 3).unwrap();
    let m = Model::new(small_model()).unwrap();
    let imgs: Vec<Vec<f64>> = ds.frames.iter().map(|f| f.mosaic.to_chw()).collect();
    let x = ybev_core::model::batch_input(&imgs, 192, 192).unwrap();
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let (a, b) = (m.predict(&x).unwrap(), m.predict(&x).unwrap());
    assert_eq!(bits(&a.conf), bits(&b.conf));
    assert_eq!(bits(&a.x), bits(&b.x));
    assert_eq!(bits(&a.theta), bits(&b.theta));
}
