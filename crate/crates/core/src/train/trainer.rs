//! The training loop.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, Variant};
use crate::nn::params::ParamStore;
use crate::synth::{make_split, Scene, SynthConfig};
use crate::train::adam::{Adam, AdamConfig, StepOutcome};
use crate::train::data::{epoch_batches, load_scenes};
use crate::train::eval::{evaluate, EvalTable};
use crate::train::loss::l1_loss;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    /// Scene family; `synth.noise_std` degrades the LR inputs.
    pub synth: SynthConfig,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    /// HR crop edge; a multiple of the scale.
    pub crop: usize,
    pub n_train: usize,
    pub n_val: usize,
    /// Seeds weight init and batch order.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::preset(Variant::Spfnet, 4),
            synth: SynthConfig {
                seed: 1,
                ..Default::default()
            },
            lr: 1e-4,
            batch: 4,
            epochs: 30,
            crop: 32,
            n_train: 200,
            n_val: 40,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.synth.validate()?;
        let bad = |field, reason: String| Err(Error::InvalidConfig { field, reason });
        if self.model.scale != self.synth.scale {
            return bad(
                "scale",
                format!("model scale {} differs from data scale {}", self.model.scale, self.synth.scale),
            );
        }
        if self.crop == 0 || self.crop % self.model.scale != 0 || self.crop > self.synth.height.min(self.synth.width) {
            return bad("crop", format!("{} must be a positive multiple of the scale within the scene", self.crop));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr", format!("{} is not a finite non-negative rate", self.lr));
        }
        if self.batch == 0 {
            return bad("batch", "must be positive".into());
        }
        if self.n_train == 0 || self.n_val == 0 {
            return bad("n_train", "train and val splits must be non-empty".into());
        }
        Ok(())
    }
}

/// Trained parameters with optimizer state and the validation score they got.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamStore<f32>,
    pub adam: Adam<f32>,
    /// Completed epochs.
    pub epoch: usize,
    pub val_rmse_cm: f64,
}

impl Checkpoint {
    pub fn model(&self) -> Result<Model<f32>> {
        Model::with_params(&self.config, self.params.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_l1: f64,
    pub val_rmse_cm: f64,
    /// Stage-1 Wasserstein distance between enhanced prior features and depth
    /// features; NaN when the model has no APP.
    pub hist_dist: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub const HEADER: &'static str = "epoch,train_l1,val_rmse_cm,hist_dist,seconds";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        for r in &self.records {
            s += &Self::row(r);
        }
        s
    }

    /// One CSV line, for appending while training runs.
    pub fn row(r: &EpochRecord) -> String {
        format!("{},{},{},{},{:.3}\n", r.epoch, r.train_l1, r.val_rmse_cm, r.hist_dist, r.seconds)
    }

    /// CSV without the wall-clock column; equal for equal configs.
    pub fn reproducible_csv(&self) -> String {
        let mut s = String::from("epoch,train_l1,val_rmse_cm,hist_dist\n");
        for r in &self.records {
            s += &format!("{},{},{},{}\n", r.epoch, r.train_l1, r.val_rmse_cm, r.hist_dist);
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Lowest validation RMSE seen (the initial model counts as epoch 0).
    pub best: Checkpoint,
    /// State after the last completed epoch.
    pub last: Checkpoint,
    pub log: TrainLog,
    /// `(epoch, step)` of a non-finite loss; training stopped there.
    pub diverged: Option<(usize, usize)>,
}

impl TrainOutcome {
    pub fn into_result(self) -> Result<Self> {
        match self.diverged {
            Some((epoch, step)) => Err(Error::Diverged { epoch, step }),
            None => Ok(self),
        }
    }
}

/// Synthesizes the split of `cfg` and trains on it.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let split = make_split(&cfg.synth, cfg.n_train, cfg.n_val)?;
    let train_scenes = load_scenes(&cfg.synth, &split.train)?;
    let val_scenes = load_scenes(&cfg.synth, &split.val)?;
    train_on(cfg, &train_scenes, &val_scenes, |_| {})
}

/// Trains on given scenes, calling `on_epoch` after each epoch.
pub fn train_on(
    cfg: &TrainConfig,
    train_scenes: &[Scene],
    val_scenes: &[Scene],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model = Model::<f32>::build(&cfg.model, cfg.seed)?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..Default::default()
        },
        &model.params,
    );
    let snapshot = |model: &Model<f32>, adam: &Adam<f32>, epoch, val: f64| Checkpoint {
        config: cfg.model.clone(),
        params: model.params.clone(),
        adam: adam.clone(),
        epoch,
        val_rmse_cm: val,
    };
    let init_val = evaluate(&model, val_scenes)?.mean_rmse_cm;
    let mut best = snapshot(&model, &adam, 0, init_val);
    let mut last = best.clone();
    let mut log = TrainLog::default();
    let mut diverged = None;

    'epochs: for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let batches = epoch_batches::<f32>(train_scenes, cfg.model.scale, cfg.crop, cfg.batch, cfg.seed, epoch)?;
        let mut loss_sum = 0.0;
        for (step, b) in batches.iter().enumerate() {
            let mut tape = Tape::new();
            let p = model.params.bind(&mut tape, true);
            let out = model.forward(&mut tape, &p, &b.inputs)?;
            let gt = tape.constant(b.depth_gt.clone());
            let loss = l1_loss(&mut tape, out.depth_hr, gt, b.mask.clone())?;
            let value = tape.value(loss).data()[0] as f64;
            if !value.is_finite() {
                log::error!("non-finite loss at epoch {epoch}, step {step}");
                diverged = Some((epoch, step));
                break 'epochs;
            }
            loss_sum += value;
            tape.backward(loss)?;
            model.params.zero_grads();
            model.params.accumulate_grads(&tape, &p);
            if let StepOutcome::Skipped { param, index } = adam.step(&mut model.params)? {
                log::warn!("epoch {epoch} step {step}: skipped update ({param}[{index}])");
            }
        }
        let table: EvalTable = evaluate(&model, val_scenes)?;
        if !table.mean_rmse_cm.is_finite() {
            log::error!("non-finite validation RMSE after epoch {epoch}");
            diverged = Some((epoch, batches.len()));
            break;
        }
        let rec = EpochRecord {
            epoch,
            train_l1: loss_sum / batches.len() as f64,
            val_rmse_cm: table.mean_rmse_cm,
            hist_dist: table.feature_distance.map_or(f64::NAN, |d| d.enhanced),
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train_l1 {:.4} val_rmse {:.4} cm ({:.1}s)",
            rec.train_l1,
            rec.val_rmse_cm,
            rec.seconds
        );
        on_epoch(&rec);
        last = snapshot(&model, &adam, epoch, rec.val_rmse_cm);
        if rec.val_rmse_cm < best.val_rmse_cm {
            best = last.clone();
        }
        log.records.push(rec);
    }
    Ok(TrainOutcome {
        best,
        last,
        log,
        diverged,
    })
}
