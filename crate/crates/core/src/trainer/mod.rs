//! Patch datasets, the Adam training loop with early stopping on validation
//! MAE, and end-to-end experiments.

pub mod optim;
pub mod patches;

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::domain::{BandId, MetricsReport, PolSet, SplitAssignment, SplitLabel};
use crate::error::{MetricsError, NetError, TrainError};
use crate::fileio::AlignedScene;
use crate::geosplit::{make_split, SplitSpec};
use crate::metrics::{evaluate, MinMaxScaler};
use crate::scalar::Scalar;
use crate::seed::rng_for;
use crate::volnet::{build_model, Ctx, Mode, ModelSpec, VolNet};

pub use optim::{Adam, EarlyStopping, StopDecision};
pub use patches::{fit_scaler, make_patches, preprocess, window_starts, Patch, PatchDataset, PATCH_SIZES};

fn d_lr() -> f64 {
    1e-4
}
fn d_batch() -> usize {
    4
}
fn d_epochs() -> usize {
    150
}
fn d_patience() -> usize {
    15
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_eps() -> f64 {
    1e-8
}
fn d_w() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_epochs")]
    pub max_epochs: usize,
    #[serde(default = "d_patience")]
    pub patience_epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_eps")]
    pub epsilon: f64,
    #[serde(default = "d_w")]
    pub patch_w: usize,
    /// Defaults to `patch_w / 2`.
    #[serde(default)]
    pub train_stride: Option<usize>,
    /// Defaults to `patch_w`.
    #[serde(default)]
    pub eval_stride: Option<usize>,
    #[serde(default)]
    pub use_db_transform: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl TrainConfig {
    pub fn train_stride(&self) -> usize {
        self.train_stride.unwrap_or(self.patch_w / 2)
    }

    pub fn eval_stride(&self) -> usize {
        self.eval_stride.unwrap_or(self.patch_w)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::BadConfig(m));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.max_epochs == 0 || self.patience_epochs > self.max_epochs {
            return bad(format!(
                "need 1 <= max_epochs and patience {} <= max_epochs {}",
                self.patience_epochs, self.max_epochs
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return bad("adam betas must lie in [0, 1) and epsilon must be positive".into());
        }
        if !PATCH_SIZES.contains(&self.patch_w) {
            return bad(format!("patch_w {} not in {PATCH_SIZES:?}", self.patch_w));
        }
        for s in [self.train_stride(), self.eval_stride()] {
            if s == 0 || s > self.patch_w {
                return bad(format!("stride {s} outside 1..={}", self.patch_w));
            }
        }
        Ok(())
    }
}

/// The JSON experiment document: model, optimization, and split settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub split: SplitSpec,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub steps: usize,
    pub stopped_early: bool,
}

pub fn write_history_csv<W: Write>(mut w: W, history: &[EpochRecord]) -> std::io::Result<()> {
    writeln!(w, "epoch,train_mse,val_mae")?;
    for r in history {
        writeln!(w, "{},{},{}", r.epoch, r.train_mse, r.val_mae)?;
    }
    Ok(())
}

/// Eval-mode predictions and targets (meters) over the valid pixels of a dataset.
pub fn predict_dataset<T: Scalar>(
    net: &mut VolNet<T>,
    ds: &PatchDataset,
    batch_size: usize,
) -> Result<(Vec<f64>, Vec<f64>), NetError> {
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, _, _) = ds.batch::<T>(chunk);
        let y = net.predict(&x)?;
        let per = ds.w * ds.w;
        for (k, &i) in chunk.iter().enumerate() {
            let p = &ds.patches[i];
            for j in 0..per {
                if p.valid[j] {
                    pred.push(y.data[k * per + j].to_f64_lossy());
                    truth.push(p.target_m[j] as f64);
                }
            }
        }
    }
    Ok((pred, truth))
}

pub fn dataset_mae<T: Scalar>(net: &mut VolNet<T>, ds: &PatchDataset, batch_size: usize) -> Result<f64, TrainError> {
    let (p, t) = predict_dataset(net, ds, batch_size)?;
    Ok(crate::metrics::mae(&p, &t)?)
}

/// Sets the output bias to the mean valid target so training starts at the
/// target level instead of zero.
pub fn init_output_bias<T: Scalar>(net: &mut VolNet<T>, ds: &PatchDataset) -> Result<(), TrainError> {
    let values: Vec<f64> = ds
        .patches
        .iter()
        .flat_map(|p| p.target_m.iter().zip(&p.valid).filter(|(_, &v)| v).map(|(&t, _)| t as f64))
        .collect();
    if values.is_empty() {
        return Err(MetricsError::EmptyInput.into());
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    net.visit_mut(&mut |p| {
        if p.name == "head.proj.bias" {
            p.value[0] = T::from_f64_lossy(mean);
        }
    });
    Ok(())
}

/// Trains with Adam on shuffled mini-batches, keeping the snapshot with the
/// best validation MAE. The network ends holding that snapshot.
pub fn train<T: Scalar>(
    net: &mut VolNet<T>,
    train_ds: &PatchDataset,
    val_ds: &PatchDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_ds.is_empty() {
        return Err(TrainError::EmptyDataset("train".into()));
    }
    if val_ds.is_empty() {
        return Err(TrainError::EmptyDataset("val".into()));
    }
    let mut shuffle_rng = rng_for(cfg.seed, "trainer.shuffle");
    let mut ctx = Ctx {
        mode: Mode::Train,
        batch_stats: true,
        rng: rng_for(cfg.seed, "trainer.dropout"),
    };
    let mut adam = Adam::new(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
    let mut stopper = EarlyStopping::new(cfg.patience_epochs);
    let mut best_state = net.state();
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_ds.len()).collect();
    let mut steps = 0;
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, target, valid) = train_ds.batch::<T>(chunk);
            let loss = match net.gradients(&x, &target, &valid, &mut ctx) {
                Ok(l) => l.to_f64_lossy(),
                Err(NetError::NonFinite(_)) => return Err(TrainError::DivergedLoss { step: steps + 1 }),
                Err(e) => return Err(e.into()),
            };
            adam.step(net);
            steps += 1;
            loss_sum += loss;
            batches += 1;
        }
        let val_mae = match dataset_mae(net, val_ds, cfg.batch_size) {
            Err(TrainError::Net(NetError::NonFinite(_))) => return Err(TrainError::DivergedLoss { step: steps }),
            r => r?,
        };
        history.push(EpochRecord {
            epoch,
            train_mse: loss_sum / batches as f64,
            val_mae,
        });
        match stopper.observe(epoch, val_mae) {
            StopDecision::Improved => best_state = net.state(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    net.load_state(&best_state);
    Ok(TrainOutcome {
        history,
        best_epoch: stopper.best_epoch,
        best_val_mae: stopper.best,
        steps,
        stopped_early,
    })
}

/// Preprocessing a checkpoint needs to be applied to new scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub band: BandId,
    pub pols: PolSet,
    pub scaler: Vec<(f32, f32)>,
    pub use_db_transform: bool,
    pub patch_w: usize,
}

impl ModelMeta {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("meta serializes")
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self, String> {
        serde_json::from_value(v.clone()).map_err(|e| e.to_string())
    }

    pub fn scaler(&self) -> Result<MinMaxScaler<f32>, MetricsError> {
        MinMaxScaler::from_ranges(self.scaler.clone())
    }
}

pub struct ExperimentResult {
    pub net: VolNet<f32>,
    pub meta: ModelMeta,
    pub split: SplitAssignment,
    pub outcome: TrainOutcome,
    /// Train, Val, Test in that order.
    pub reports: Vec<MetricsReport>,
}

/// Split, scale, train, then evaluate every split. Test patches are built and
/// scored only after training has finished.
pub fn run_experiment(
    scene: &AlignedScene,
    pols: &PolSet,
    spec: &ExperimentSpec,
) -> Result<ExperimentResult, TrainError> {
    let split = make_split(scene.nx(), scene.ny(), &spec.split)?;
    run_experiment_on(scene, pols, spec, split)
}

/// [`run_experiment`] on a precomputed split; `spec.split` is ignored.
pub fn run_experiment_on(
    scene: &AlignedScene,
    pols: &PolSet,
    spec: &ExperimentSpec,
    split: SplitAssignment,
) -> Result<ExperimentResult, TrainError> {
    let cfg = &spec.train;
    cfg.validate()?;
    if spec.model.in_channels != pols.len() {
        return Err(TrainError::BadConfig(format!(
            "model expects {} channels, {} polarizations selected",
            spec.model.in_channels,
            pols.len()
        )));
    }
    if (split.nx, split.ny) != (scene.nx(), scene.ny()) {
        return Err(TrainError::BadConfig("split and scene dimensions differ".into()));
    }
    let db = cfg.use_db_transform;
    let scaler = fit_scaler(scene, &split, pols, db)?;
    let w = cfg.patch_w;
    let train_ds = make_patches(scene, &split, SplitLabel::Train, w, cfg.train_stride(), pols, &scaler, db)?;
    let val_ds = make_patches(scene, &split, SplitLabel::Val, w, cfg.eval_stride(), pols, &scaler, db)?;
    let mut net = build_model::<f32>(&spec.model, crate::seed::derive_seed(cfg.seed, "volnet"))?;
    init_output_bias(&mut net, &train_ds)?;
    let outcome = train(&mut net, &train_ds, &val_ds, cfg)?;
    let band = scene.cube.band;
    let mut reports = Vec::new();
    let train_eval = make_patches(scene, &split, SplitLabel::Train, w, cfg.eval_stride(), pols, &scaler, db)?;
    for (label, ds) in [(SplitLabel::Train, &train_eval), (SplitLabel::Val, &val_ds)] {
        let (p, t) = predict_dataset(&mut net, ds, cfg.batch_size)?;
        reports.push(evaluate(&p, &t, band, pols, label)?);
    }
    let test_ds = make_patches(scene, &split, SplitLabel::Test, w, cfg.eval_stride(), pols, &scaler, db)?;
    let (p, t) = predict_dataset(&mut net, &test_ds, cfg.batch_size)?;
    reports.push(evaluate(&p, &t, band, pols, SplitLabel::Test)?);
    let meta = ModelMeta {
        band,
        pols: pols.clone(),
        scaler: scaler.ranges()?.to_vec(),
        use_db_transform: db,
        patch_w: w,
    };
    Ok(ExperimentResult {
        net,
        meta,
        split,
        outcome,
        reports,
    })
}
