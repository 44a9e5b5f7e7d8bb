//! Training loop, learning-rate sweep and run logging.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{load_dataset, Dataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, EvalThresholds};
use crate::geometry::OrientedBox;
use crate::loss::{total_loss, LossBreakdown, LossConfig};
use crate::model::{batch_input, save_checkpoint, Checkpoint, Model, ModelConfig};
use crate::optim::AdamState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Train on the first `overfit_frames` frames only.
    Overfit,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dataset: PathBuf,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
    pub lr: f64,
    pub loss: LossConfig,
    pub model: ModelConfig,
    pub stage: Stage,
    pub overfit_frames: usize,
    /// Write a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: u64,
    /// Checkpoints and `runlog.jsonl` go here when set.
    pub out_dir: Option<PathBuf>,
    /// The loop is single-threaded either way; the flag is recorded so runs
    /// can state the guarantee they were made under.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dataset: PathBuf::from("data"),
            batch_size: 4,
            steps: 1000,
            seed: 0,
            lr: 0.001,
            loss: LossConfig::default(),
            model: ModelConfig::default(),
            stage: Stage::Overfit,
            overfit_frames: 16,
            checkpoint_every: 0,
            out_dir: None,
            deterministic: true,
        }
    }
}

impl TrainConfig {
    /// Overfit run on the first 16 frames with the compact model.
    pub fn overfit_preset() -> Self {
        TrainConfig {
            steps: 5000,
            model: ModelConfig::compact(),
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.stage == Stage::Overfit && self.overfit_frames == 0 {
            return Err(Error::Config("overfit_frames must be at least 1".into()));
        }
        self.loss.validate()?;
        self.model.validate()
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            detail: format!("line {} column {}: {e}", e.line(), e.column()),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub l_bbox: f64,
    pub l_pos_conf: f64,
    pub l_neg_conf: f64,
    pub total: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub millis: f64,
}

impl StepRecord {
    fn new(step: u64, b: &LossBreakdown, millis: f64) -> Self {
        StepRecord {
            step,
            l_bbox: b.l_bbox,
            l_pos_conf: b.l_pos_conf,
            l_neg_conf: b.l_neg_conf,
            total: b.total,
            n_pos: b.n_pos,
            n_neg: b.n_neg,
            millis,
        }
    }

    /// Everything except wall time, as raw bits.
    pub fn trace_key(&self) -> (u64, [u64; 4], usize, usize) {
        (
            self.step,
            [self.l_bbox, self.l_pos_conf, self.l_neg_conf, self.total].map(f64::to_bits),
            self.n_pos,
            self.n_neg,
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<StepRecord>,
}

impl RunLog {
    pub fn push(&mut self, r: StepRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if r.step <= last.step {
                return Err(Error::Contract(format!(
                    "step {} does not follow {}",
                    r.step, last.step
                )));
            }
        }
        self.records.push(r);
        Ok(())
    }

    /// The loss trace without wall times; equal traces mean bitwise-equal losses.
    pub fn trace(&self) -> Vec<(u64, [u64; 4], usize, usize)> {
        self.records.iter().map(StepRecord::trace_key).collect()
    }

    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str, path: &Path) -> Result<Self> {
        let mut log = RunLog::default();
        for (i, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let r: StepRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                detail: format!("line {}: {e}", i + 1),
            })?;
            log.push(r)?;
        }
        Ok(log)
    }

    pub fn last_total(&self) -> Option<f64> {
        self.records.last().map(|r| r.total)
    }
}

struct Sample {
    input: Vec<f64>,
    truth: Vec<OrientedBox>,
}

/// Owns model, optimizer and the prepared training frames of one run.
pub struct Trainer {
    cfg: TrainConfig,
    samples: Vec<Sample>,
    side: usize,
    model: Model,
    opt: AdamState,
    step: u64,
}

/// Frames a config trains on.
pub fn training_frames<'a>(cfg: &TrainConfig, ds: &'a Dataset) -> &'a [crate::dataset::Frame] {
    match cfg.stage {
        Stage::Overfit => &ds.frames[..cfg.overfit_frames.min(ds.frames.len())],
        Stage::Full => &ds.frames,
    }
}

impl Trainer {
    pub fn new(cfg: TrainConfig, ds: &Dataset) -> Result<Self> {
        cfg.validate()?;
        let model = Model::new(cfg.model.clone())?;
        let opt = AdamState::for_params(cfg.lr, model.params());
        Self::assemble(cfg, ds, model, opt, 0)
    }

    /// Continue from a checkpoint written by an identically configured run.
    pub fn resume(cfg: TrainConfig, ds: &Dataset, ck: Checkpoint) -> Result<Self> {
        cfg.validate()?;
        if ck.model.config != cfg.model {
            return Err(Error::Checkpoint(
                "checkpoint model config differs from the run config".into(),
            ));
        }
        let opt = ck
            .optimizer
            .ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state".into()))?;
        Self::assemble(cfg, ds, ck.model, opt, ck.step)
    }

    fn assemble(
        cfg: TrainConfig,
        ds: &Dataset,
        model: Model,
        opt: AdamState,
        step: u64,
    ) -> Result<Self> {
        let frames = training_frames(&cfg, ds);
        if frames.is_empty() {
            return Err(Error::Validation("dataset has no frames".into()));
        }
        let side = frames[0].mosaic.image.width();
        let samples = frames
            .iter()
            .map(|f| Sample {
                input: f.mosaic.to_chw(),
                truth: f.truth.vehicles.clone(),
            })
            .collect();
        Ok(Trainer {
            cfg,
            samples,
            side,
            model,
            opt,
            step,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            optimizer: Some(self.opt.clone()),
            step: self.step,
        }
    }

    /// Sample indices of the batch for 0-based step `step`. The sample stream
    /// walks a fresh seeded permutation per epoch, so any step's batch is a
    /// pure function of `(seed, step)`.
    pub fn batch_indices(&self, step: u64) -> Vec<usize> {
        let n = self.samples.len() as u64;
        let b = self.cfg.batch_size as u64;
        let mut out = Vec::with_capacity(b as usize);
        let mut cached: Option<(u64, Vec<usize>)> = None;
        for k in step * b..(step + 1) * b {
            let epoch = k / n;
            if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
                let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
                rng.set_stream(epoch);
                let mut perm: Vec<usize> = (0..n as usize).collect();
                perm.shuffle(&mut rng);
                cached = Some((epoch, perm));
            }
            out.push(cached.as_ref().expect("filled above").1[(k % n) as usize]);
        }
        out
    }

    /// One forward/backward/update. The record's `step` is 1-based.
    pub fn train_step(&mut self) -> Result<StepRecord> {
        let start = Instant::now();
        let idx = self.batch_indices(self.step);
        let images: Vec<Vec<f64>> = idx.iter().map(|&i| self.samples[i].input.clone()).collect();
        let gts: Vec<Vec<OrientedBox>> =
            idx.iter().map(|&i| self.samples[i].truth.clone()).collect();
        let input = batch_input(&images, self.side, self.side)?;
        let decoded = self.model.forward(&input)?;
        let (loss, breakdown) = total_loss(&decoded, &gts, &self.cfg.loss)?;
        let step = self.step + 1;
        // Clamps inside the loss can mask NaN predictions, so check both.
        let outputs = [&decoded.x, &decoded.y, &decoded.theta, &decoded.conf];
        let finite = outputs
            .iter()
            .all(|t| t.data().iter().all(|v| v.is_finite()));
        if !(finite && breakdown.total.is_finite()) {
            return Err(Error::NonFinite { step });
        }
        self.model.zero_grad();
        loss.backward()?;
        let updated = self.opt.step(self.model.params())?;
        self.model.set_params(updated)?;
        self.step = step;
        Ok(StepRecord::new(
            step,
            &breakdown,
            start.elapsed().as_secs_f64() * 1e3,
        ))
    }

    /// Train until `until` completed steps, appending to `log` and writing
    /// periodic checkpoints when an output directory is configured.
    pub fn run_until(&mut self, until: u64, log: &mut RunLog) -> Result<()> {
        while self.step < until {
            let rec = self.train_step()?;
            log.push(rec)?;
            if let Some(dir) = &self.cfg.out_dir {
                let every = self.cfg.checkpoint_every;
                if every > 0 && self.step.is_multiple_of(every) && self.step < self.cfg.steps {
                    save_checkpoint(
                        &dir.join(format!("step-{:06}.ybev", self.step)),
                        &self.checkpoint(),
                    )?;
                }
            }
        }
        Ok(())
    }
}

/// Train on an already loaded dataset.
pub fn train_on(cfg: &TrainConfig, ds: &Dataset) -> Result<(Checkpoint, RunLog)> {
    let mut trainer = Trainer::new(cfg.clone(), ds)?;
    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut log = RunLog::default();
    let result = trainer.run_until(cfg.steps, &mut log);
    if let Some(dir) = &cfg.out_dir {
        let path = dir.join("runlog.jsonl");
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(log.to_jsonl().as_bytes())
            .map_err(|e| Error::io(&path, e))?;
    }
    result?;
    let ck = trainer.checkpoint();
    if let Some(dir) = &cfg.out_dir {
        save_checkpoint(&dir.join("final.ybev"), &ck)?;
    }
    Ok((ck, log))
}

/// Load `cfg.dataset` and train.
pub fn train(cfg: &TrainConfig) -> Result<(Checkpoint, RunLog)> {
    cfg.validate()?;
    let ds = load_dataset(&cfg.dataset)?;
    train_on(cfg, &ds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum GridOutcome {
    Ok {
        final_loss: f64,
        final_mean_iou: f64,
    },
    Failed {
        error: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub lr: f64,
    #[serde(flatten)]
    pub outcome: GridOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSearchReport {
    /// Completed rows by final loss (ties: smaller lr first), then failed rows by lr.
    pub rows: Vec<GridRow>,
    pub best_lr: Option<f64>,
}

impl GridSearchReport {
    pub fn to_table(&self) -> String {
        let mut s = String::from("lr          final_loss    mean_iou   status\n");
        for r in &self.rows {
            match &r.outcome {
                GridOutcome::Ok {
                    final_loss,
                    final_mean_iou,
                } => {
                    s += &format!(
                        "{:<11} {:<13.6} {:<10.4} ok\n",
                        r.lr, final_loss, final_mean_iou
                    )
                }
                GridOutcome::Failed { error } => {
                    s += &format!("{:<11} {:<13} {:<10} failed: {error}\n", r.lr, "-", "-")
                }
            }
        }
        s
    }
}

/// Train once per learning rate with everything else shared. A failing run
/// becomes a failed row; the sweep itself only errors on an empty list.
pub fn grid_search(cfg: &TrainConfig, ds: &Dataset, lrs: &[f64]) -> Result<GridSearchReport> {
    if lrs.is_empty() {
        return Err(Error::Config(
            "grid search needs at least one learning rate".into(),
        ));
    }
    let mut rows = Vec::with_capacity(lrs.len());
    for &lr in lrs {
        let run_cfg = TrainConfig {
            lr,
            out_dir: cfg.out_dir.as_ref().map(|d| d.join(format!("lr-{lr}"))),
            ..cfg.clone()
        };
        let outcome = train_on(&run_cfg, ds).and_then(|(ck, log)| {
            let frames = training_frames(&run_cfg, ds);
            let report = evaluate_model(&ck.model, frames, &EvalThresholds::default())?;
            Ok(GridOutcome::Ok {
                final_loss: log.last_total().unwrap_or(f64::NAN),
                final_mean_iou: report.mean_iou,
            })
        });
        rows.push(GridRow {
            lr,
            outcome: outcome.unwrap_or_else(|e| GridOutcome::Failed {
                error: e.to_string(),
            }),
        });
    }
    rows.sort_by(|a, b| match (&a.outcome, &b.outcome) {
        (GridOutcome::Ok { final_loss: x, .. }, GridOutcome::Ok { final_loss: y, .. }) => {
            x.total_cmp(y).then(a.lr.total_cmp(&b.lr))
        }
        (GridOutcome::Ok { .. }, GridOutcome::Failed { .. }) => std::cmp::Ordering::Less,
        (GridOutcome::Failed { .. }, GridOutcome::Ok { .. }) => std::cmp::Ordering::Greater,
        _ => a.lr.total_cmp(&b.lr),
    });
    let best_lr = rows
        .first()
        .filter(|r| matches!(r.outcome, GridOutcome::Ok { .. }))
        .map(|r| r.lr);
    Ok(GridSearchReport { rows, best_lr })
}
