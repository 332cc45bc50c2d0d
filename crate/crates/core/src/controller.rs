//! Growth control: overfitting detectors, the stacking trigger,
//! block-indexed hyperparameter schedules and the outer training loop.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DenseCase, TrainValData};
use crate::error::{Error, Result};
use crate::metrics::{dice, voxel_accuracy};
use crate::network::ProKanNetwork;
use crate::spline::KnotVector;
use crate::training::{batch_loss, train_epoch, LossConfig, OptimizerState, Sample};

/// Highest spline degree the schedule may reach.
pub const MAX_SCHEDULED_DEGREE: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackingPolicy {
    pub epsilon: f64,
    pub t_plateau: usize,
    pub decline_window: usize,
    pub cooldown: usize,
    pub max_blocks: usize,
    pub grid_size: usize,
    pub degree: usize,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub delta_grid: usize,
    pub delta_degree: usize,
    pub delta_lambda: f64,
    pub alpha: f64,
    pub max_epochs: usize,
}

impl Default for StackingPolicy {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            t_plateau: 5,
            decline_window: 5,
            cooldown: 5,
            max_blocks: 4,
            grid_size: 5,
            degree: 3,
            learning_rate: 1e-2,
            l2_lambda: 1e-4,
            delta_grid: 3,
            delta_degree: 0,
            delta_lambda: 1e-4,
            alpha: 0.5,
            max_epochs: 200,
        }
    }
}

impl StackingPolicy {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be positive");
        }
        if self.t_plateau < 2 {
            return bad("t_plateau must be at least 2");
        }
        if self.decline_window < 1 || self.cooldown < 1 {
            return bad("decline_window and cooldown must be positive");
        }
        if self.max_blocks < 1 {
            return bad("max_blocks must be at least 1");
        }
        if self.grid_size < 1 {
            return bad("grid_size must be at least 1");
        }
        if self.degree + self.max_blocks * self.delta_degree > MAX_SCHEDULED_DEGREE {
            return bad("degree + max_blocks * delta_degree must not exceed 5");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.l2_lambda >= 0.0 && self.delta_lambda >= 0.0) {
            return bad("l2_lambda and delta_lambda must be non-negative");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be non-negative");
        }
        if self.max_epochs < 1 {
            return bad("max_epochs must be at least 1");
        }
        Ok(())
    }
}

/// Hyperparameters in force for block `block_index`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub block_index: usize,
    pub grid_size: usize,
    pub degree: usize,
    pub learning_rate: f64,
    pub l2_lambda: f64,
}

impl HyperParams {
    pub fn initial(policy: &StackingPolicy) -> Self {
        Self {
            block_index: 0,
            grid_size: policy.grid_size,
            degree: policy.degree,
            learning_rate: policy.learning_rate,
            l2_lambda: policy.l2_lambda,
        }
    }
}

/// Advances to block `b + 1`:
/// `G += ΔG`, `k += Δk`, `η /= 1 + α·(b+1)`, `λ += Δλ`. The learning-rate
/// step is a single division so each `η_b` is the correctly rounded quotient.
pub fn next_hyperparameters(current: &HyperParams, policy: &StackingPolicy) -> HyperParams {
    let b = current.block_index + 1;
    HyperParams {
        block_index: b,
        grid_size: current.grid_size + policy.delta_grid,
        degree: current.degree + policy.delta_degree,
        learning_rate: current.learning_rate / (1.0 + policy.alpha * b as f64),
        l2_lambda: current.l2_lambda + policy.delta_lambda,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub insertion_epochs: Vec<usize>,
}

impl TrainingHistory {
    pub fn push(&mut self, train_loss: f64, val_loss: f64, val_accuracy: f64) {
        self.train_loss.push(train_loss);
        self.val_loss.push(val_loss);
        self.val_accuracy.push(val_accuracy);
    }

    pub fn len(&self) -> usize {
        self.val_loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.val_loss.is_empty()
    }

    pub fn last_insertion(&self) -> Option<usize> {
        self.insertion_epochs.last().copied()
    }
}

/// True when the mean validation loss over the last `t_plateau` epochs is
/// within `epsilon` of the validation loss at the start of that window.
pub fn detect_plateau(history: &TrainingHistory, t_plateau: usize, epsilon: f64) -> bool {
    let n = history.val_loss.len();
    if t_plateau == 0 || n < t_plateau + 1 {
        return false;
    }
    let start = history.val_loss[n - t_plateau - 1];
    let mean = history.val_loss[n - t_plateau..].iter().sum::<f64>() / t_plateau as f64;
    (mean - start).abs() < epsilon
}

/// Ordinary least-squares slope of `ys` against `0, 1, ..`.
pub fn ols_slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    if ys.len() < 2 {
        return 0.0;
    }
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - mx;
        sxy += dx * (y - my);
        sxx += dx * dx;
    }
    sxy / sxx
}

/// True when accuracy trends down over the last `decline_window + 1` epochs
/// and its historical maximum was reached no later than the window's first
/// epoch.
pub fn detect_accuracy_decline(history: &TrainingHistory, decline_window: usize) -> bool {
    let acc = &history.val_accuracy;
    let n = acc.len();
    if decline_window == 0 || n < decline_window + 1 {
        return false;
    }
    let start = n - decline_window - 1;
    if ols_slope(&acc[start..]) >= 0.0 {
        return false;
    }
    let mut argmax = 0;
    for (i, &a) in acc.iter().enumerate() {
        if a > acc[argmax] {
            argmax = i;
        }
    }
    argmax <= start
}

/// Stacking trigger: `(plateau OR accuracy decline) AND train < val`, guarded
/// by capacity and an insertion cooldown. The current epoch is the last one
/// recorded in `history`.
pub fn should_add_block(
    history: &TrainingHistory,
    policy: &StackingPolicy,
    blocks_now: usize,
    last_insertion_epoch: Option<usize>,
) -> bool {
    let Some(epoch) = history.len().checked_sub(1) else {
        return false;
    };
    if blocks_now >= policy.max_blocks {
        return false;
    }
    if let Some(last) = last_insertion_epoch {
        if epoch < last || epoch - last < policy.cooldown {
            return false;
        }
    }
    let overfit_signal = detect_plateau(history, policy.t_plateau, policy.epsilon)
        || detect_accuracy_decline(history, policy.decline_window);
    overfit_signal && history.train_loss[epoch] < history.val_loss[epoch]
}

/// Network shape and optimiser settings that are not part of the growth
/// policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_width: usize,
    pub init_scale: f64,
    pub domain_min: f64,
    pub domain_max: f64,
    pub momentum: f64,
    pub batch_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_width: 8,
            init_scale: 0.1,
            domain_min: -1.0,
            domain_max: 1.0,
            momentum: 0.9,
            batch_size: 32,
        }
    }
}

/// One line of the per-epoch log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_dice: f64,
    pub block_count: usize,
    #[serde(rename = "G")]
    pub grid_size: usize,
    pub k: usize,
    pub eta: f64,
    pub lambda: f64,
}

/// One line of the insertion-event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsertionEvent {
    pub epoch: usize,
    pub new_block_index: usize,
    #[serde(rename = "G_b")]
    pub grid_size: usize,
    pub k_b: usize,
    pub eta_b: f64,
    pub lambda_b: f64,
    /// Validation loss recomputed right after insertion.
    pub val_loss_after: f64,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub final_net: ProKanNetwork,
    pub best_net: ProKanNetwork,
    pub best_epoch: usize,
    pub best_val_dice: f64,
    pub history: TrainingHistory,
    pub epochs: Vec<EpochRecord>,
    pub events: Vec<InsertionEvent>,
}

/// Dense validation metrics averaged over cases: `(accuracy, dice)`.
/// Cases where Dice is undefined (both masks empty) are skipped for Dice.
pub fn dense_metrics(net: &ProKanNetwork, cases: &[DenseCase]) -> Result<(f64, f64)> {
    if cases.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut acc = 0.0;
    let mut dice_sum = 0.0;
    let mut dice_n = 0usize;
    for case in cases {
        let pred = case.predict(net)?;
        acc += voxel_accuracy(&pred, &case.mask)?;
        if let Ok(d) = dice(&pred, &case.mask) {
            dice_sum += d;
            dice_n += 1;
        }
    }
    let mean_dice = if dice_n == 0 { 0.0 } else { dice_sum / dice_n as f64 };
    Ok((acc / cases.len() as f64, mean_dice))
}

/// Data loss (no L2) of the current network over a whole sample set. Used for
/// both the train and validation series so the two are directly comparable.
fn evaluation_loss(net: &ProKanNetwork, samples: &[Sample], cfg: &LossConfig) -> Result<f64> {
    let refs: Vec<&Sample> = samples.iter().collect();
    batch_loss(net, &refs, cfg)
}

/// Derived seed for an independent stream (network init, shuffling).
pub(crate) fn stream_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Trains from a single block, growing the network whenever the stacking
/// trigger fires. `observer` sees every epoch record and insertion event as
/// they happen.
pub fn run_progressive_training(
    data: &TrainValData,
    policy: &StackingPolicy,
    model: &ModelConfig,
    loss_cfg: &LossConfig,
    seed: u64,
    mut observer: impl FnMut(LogEvent<'_>),
) -> Result<TrainingOutcome> {
    policy.validate()?;
    loss_cfg.validate()?;
    if data.train_samples.is_empty() || data.val_samples.is_empty() || data.val_cases.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let input_dim = data.train_samples[0].features.len();
    let mut hp = HyperParams::initial(policy);
    let knots = KnotVector::uniform(model.domain_min, model.domain_max, hp.grid_size, hp.degree)?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, 1));
    let mut net = ProKanNetwork::new(input_dim, model.hidden_width, &knots, model.init_scale, &mut init_rng)?;
    let mut opt = OptimizerState::new(&net, hp.learning_rate, model.momentum, hp.l2_lambda)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, 2));

    let mut history = TrainingHistory::default();
    let mut epochs = Vec::new();
    let mut events = Vec::new();
    let mut best_net = net.clone();
    let mut best_epoch = 0;
    let mut best_val_dice = f64::NEG_INFINITY;
    let mut saturated_plateau = 0usize;

    for epoch in 0..policy.max_epochs {
        train_epoch(
            &mut net,
            &data.train_samples,
            loss_cfg,
            &mut opt,
            model.batch_size,
            &mut shuffle_rng,
        )?;
        let train_loss = evaluation_loss(&net, &data.train_samples, loss_cfg)?;
        let val_loss = evaluation_loss(&net, &data.val_samples, loss_cfg)?;
        let (val_accuracy, val_dice) = dense_metrics(&net, &data.val_cases)?;
        history.push(train_loss, val_loss, val_accuracy);
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
            val_dice,
            block_count: net.num_blocks(),
            grid_size: hp.grid_size,
            k: hp.degree,
            eta: opt.learning_rate,
            lambda: opt.l2_lambda,
        };
        observer(LogEvent::Epoch(&record));
        epochs.push(record);

        if val_dice > best_val_dice {
            best_val_dice = val_dice;
            best_epoch = epoch;
            best_net = net.clone();
        }

        if should_add_block(&history, policy, net.num_blocks(), history.last_insertion()) {
            hp = next_hyperparameters(&hp, policy);
            net.insert_block(&hp, policy.max_blocks)?;
            opt.sync_with(&net)?;
            opt.learning_rate = hp.learning_rate;
            opt.l2_lambda = hp.l2_lambda;
            history.insertion_epochs.push(epoch);
            let event = InsertionEvent {
                epoch,
                new_block_index: hp.block_index,
                grid_size: hp.grid_size,
                k_b: hp.degree,
                eta_b: hp.learning_rate,
                lambda_b: hp.l2_lambda,
                val_loss_after: evaluation_loss(&net, &data.val_samples, loss_cfg)?,
            };
            observer(LogEvent::Insertion(&event));
            events.push(event);
        }

        if net.num_blocks() >= policy.max_blocks && detect_plateau(&history, policy.t_plateau, policy.epsilon) {
            saturated_plateau += 1;
            if saturated_plateau >= 2 * policy.t_plateau {
                break;
            }
        } else {
            saturated_plateau = 0;
        }
    }

    Ok(TrainingOutcome {
        final_net: net,
        best_net,
        best_epoch,
        best_val_dice,
        history,
        epochs,
        events,
    })
}

/// Streamed log entries emitted during training.
#[derive(Debug, Clone, Copy)]
pub enum LogEvent<'a> {
    Epoch(&'a EpochRecord),
    Insertion(&'a InsertionEvent),
}
