//! Losses, weight decay, SGD with momentum, the epoch loop and a finite
//! difference gradient audit.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{GradientSet, ProKanNetwork};

/// Probabilities are clipped into `[PROB_CLIP, 1 - PROB_CLIP]` for BCE.
pub const PROB_CLIP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub bce_weight: f64,
    pub dice_weight: f64,
    pub smooth_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            bce_weight: 1.0,
            dice_weight: 1.0,
            smooth_eps: 1e-6,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bce_weight >= 0.0 && self.dice_weight >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(self.bce_weight + self.dice_weight > 0.0) {
            return Err(Error::Config("bce_weight + dice_weight must be positive".into()));
        }
        if !(self.smooth_eps > 0.0 && self.smooth_eps.is_finite()) {
            return Err(Error::Config("smooth_eps must be a small positive number".into()));
        }
        Ok(())
    }
}

/// One training example: patch features and a 0/1 target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub target: f64,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_lengths(probs: &[f64], targets: &[f64]) -> Result<()> {
    if probs.len() != targets.len() || probs.is_empty() {
        return Err(Error::LengthMismatch {
            left: probs.len(),
            right: targets.len(),
        });
    }
    Ok(())
}

/// `1 - (2 sum p t + eps) / (sum p + sum t + eps)`.
pub fn soft_dice_loss(probs: &[f64], targets: &[f64], eps: f64) -> Result<f64> {
    check_lengths(probs, targets)?;
    let (inter, sp, st) = dice_sums(probs, targets);
    Ok(1.0 - (2.0 * inter + eps) / (sp + st + eps))
}

fn dice_sums(probs: &[f64], targets: &[f64]) -> (f64, f64, f64) {
    probs
        .iter()
        .zip(targets)
        .fold((0.0, 0.0, 0.0), |(i, sp, st), (p, t)| (i + p * t, sp + p, st + t))
}

/// Mean binary cross-entropy on clipped probabilities.
pub fn bce_loss(probs: &[f64], targets: &[f64]) -> Result<f64> {
    check_lengths(probs, targets)?;
    let total: f64 = probs
        .iter()
        .zip(targets)
        .map(|(&p, &t)| {
            let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / probs.len() as f64)
}

/// Weighted BCE + soft Dice on logits, and its gradient with respect to each
/// logit.
pub fn data_loss_with_logit_grads(logits: &[f64], targets: &[f64], cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    let probs: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
    check_lengths(&probs, targets)?;
    let n = probs.len() as f64;
    let bce = bce_loss(&probs, targets)?;
    let (inter, sp, st) = dice_sums(&probs, targets);
    let eps = cfg.smooth_eps;
    let num = 2.0 * inter + eps;
    let den = sp + st + eps;
    let dice = 1.0 - num / den;

    let grads = probs
        .iter()
        .zip(targets)
        .map(|(&p, &t)| {
            let clipped = !(PROB_CLIP..=1.0 - PROB_CLIP).contains(&p);
            let g_bce = if clipped { 0.0 } else { (p - t) / n };
            let d_dice_dp = -(2.0 * t * den - num) / (den * den);
            cfg.bce_weight * g_bce + cfg.dice_weight * d_dice_dp * p * (1.0 - p)
        })
        .collect();
    Ok((cfg.bce_weight * bce + cfg.dice_weight * dice, grads))
}

/// `lambda * sum c^2` over every coefficient.
pub fn l2_penalty(net: &ProKanNetwork, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    lambda
        * net
            .layers()
            .flat_map(|l| l.coefficients().iter())
            .map(|c| c * c)
            .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub l2_lambda: f64,
    velocity: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(net: &ProKanNetwork, learning_rate: f64, momentum: f64, l2_lambda: f64) -> Result<Self> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {learning_rate}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum {momentum} outside [0, 1)")));
        }
        if !(l2_lambda >= 0.0) {
            return Err(Error::Config(format!("negative l2 lambda {l2_lambda}")));
        }
        Ok(Self {
            learning_rate,
            momentum,
            l2_lambda,
            velocity: net.layers().map(|l| vec![0.0; l.num_parameters()]).collect(),
        })
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    /// `v <- momentum * v + g + 2 lambda p;  p <- p - lr * v`.
    pub fn step(&mut self, params: &mut [Vec<f64>], grads: &[Vec<f64>]) -> Result<()> {
        let sizes: Vec<usize> = params.iter().map(Vec::len).collect();
        self.check_shapes(&sizes, grads)?;
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            update(p, g, v, self.momentum, self.l2_lambda, self.learning_rate);
        }
        Ok(())
    }

    pub fn step_network(&mut self, net: &mut ProKanNetwork, grads: &GradientSet) -> Result<()> {
        let sizes: Vec<usize> = net.layers().map(|l| l.num_parameters()).collect();
        self.check_shapes(&sizes, &grads.layers)?;
        for ((layer, g), v) in net.layers_mut().zip(&grads.layers).zip(&mut self.velocity) {
            update(layer.coefficients_mut(), g, v, self.momentum, self.l2_lambda, self.learning_rate);
        }
        Ok(())
    }

    fn check_shapes(&self, params: &[usize], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != self.velocity.len() || grads.len() != self.velocity.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameter groups, {} gradient groups, {} velocity buffers",
                params.len(),
                grads.len(),
                self.velocity.len()
            )));
        }
        for ((&n, g), v) in params.iter().zip(grads).zip(&self.velocity) {
            if n != g.len() || n != v.len() {
                return Err(Error::ShapeMismatch(format!(
                    "group sizes {n} / {} / {}",
                    g.len(),
                    v.len()
                )));
            }
        }
        Ok(())
    }

    /// Re-aligns velocity buffers after a block was appended: new layers get
    /// zero velocity, the head keeps its buffer.
    pub fn sync_with(&mut self, net: &ProKanNetwork) -> Result<()> {
        let sizes: Vec<usize> = net.layers().map(|l| l.num_parameters()).collect();
        let old = self.velocity.len();
        if sizes.len() < old {
            return Err(Error::ShapeMismatch("network lost layers".into()));
        }
        let head = self.velocity.pop().unwrap_or_default();
        for &n in &sizes[old - 1..sizes.len() - 1] {
            self.velocity.push(vec![0.0; n]);
        }
        self.velocity.push(head);
        if self.velocity.iter().map(Vec::len).ne(sizes.iter().copied()) {
            return Err(Error::ShapeMismatch("velocity buffers do not match network".into()));
        }
        Ok(())
    }
}

fn update(p: &mut [f64], g: &[f64], v: &mut [f64], momentum: f64, lambda: f64, lr: f64) {
    for ((p, g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
        *v = momentum * *v + g + 2.0 * lambda * *p;
        *p -= lr * *v;
    }
}

pub fn sgd_momentum_step(state: &mut OptimizerState, params: &mut [Vec<f64>], grads: &[Vec<f64>]) -> Result<()> {
    state.step(params, grads)
}

/// Data loss of a batch and its coefficient gradients (L2 excluded).
pub fn batch_loss_and_grads(net: &ProKanNetwork, batch: &[&Sample], cfg: &LossConfig) -> Result<(f64, GradientSet)> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut caches = Vec::with_capacity(batch.len());
    let mut logits = Vec::with_capacity(batch.len());
    let targets: Vec<f64> = batch.iter().map(|s| s.target).collect();
    for s in batch {
        let (z, cache) = net.forward(&s.features)?;
        logits.push(z);
        caches.push(cache);
    }
    let (loss, dlogits) = data_loss_with_logit_grads(&logits, &targets, cfg)?;
    let mut grads = GradientSet::zeros_like(net);
    for (cache, &dz) in caches.iter().zip(&dlogits) {
        net.backward_accumulate(cache, dz, &mut grads)?;
    }
    Ok((loss, grads))
}

/// Data loss of a batch without gradients.
pub fn batch_loss(net: &ProKanNetwork, batch: &[&Sample], cfg: &LossConfig) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let logits = batch
        .iter()
        .map(|s| net.predict(&s.features))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<f64> = batch.iter().map(|s| s.target).collect();
    Ok(data_loss_with_logit_grads(&logits, &targets, cfg)?.0)
}

/// One shuffled pass over `samples`. Returns the mean per-batch total loss
/// (weighted BCE + Dice + L2), each measured before that batch's update.
pub fn train_epoch<R: Rng + ?Sized>(
    net: &mut ProKanNetwork,
    samples: &[Sample],
    cfg: &LossConfig,
    opt: &mut OptimizerState,
    batch_size: usize,
    rng: &mut R,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    let mut batches = 0usize;
    for chunk in order.chunks(batch_size) {
        let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
        let (data_loss, grads) = batch_loss_and_grads(net, &batch, cfg)?;
        total += data_loss + l2_penalty(net, opt.l2_lambda);
        batches += 1;
        opt.step_network(net, &grads)?;
    }
    Ok(total / batches as f64)
}

/// Location of one coefficient: layer in declared order, then flat index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamIndex {
    pub layer: usize,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Worst coefficient when the tolerance was exceeded.
    pub offending: Option<ParamIndex>,
    pub checked: usize,
    pub passed: bool,
}

/// Relative error with an absolute floor: differences at or below
/// `abs_floor` count as exact agreement.
pub fn relative_error(analytic: f64, numeric: f64, abs_floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= abs_floor {
        0.0
    } else {
        diff / analytic.abs().max(numeric.abs())
    }
}

pub const GRADCHECK_ABS_FLOOR: f64 = 1e-8;
const GRADCHECK_MAX_FULL: usize = 2000;

/// Gradient of the total loss (data loss + L2) from the network's backward
/// pass.
pub fn analytic_total_grads(net: &ProKanNetwork, batch: &[&Sample], cfg: &LossConfig, lambda: f64) -> Result<GradientSet> {
    let (_, mut grads) = batch_loss_and_grads(net, batch, cfg)?;
    for (g, layer) in grads.layers.iter_mut().zip(net.layers()) {
        for (g, c) in g.iter_mut().zip(layer.coefficients()) {
            *g += 2.0 * lambda * c;
        }
    }
    Ok(grads)
}

/// Compares backward-pass gradients of the total loss against central
/// differences. Above 2,000 coefficients a seeded random subset is checked.
pub fn gradient_check(
    net: &ProKanNetwork,
    batch: &[&Sample],
    cfg: &LossConfig,
    lambda: f64,
    h: f64,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let analytic = analytic_total_grads(net, batch, cfg, lambda)?;
    gradient_check_against(net, batch, cfg, lambda, h, tolerance, seed, &analytic)
}

/// Same as [`gradient_check`] but audits a caller-supplied gradient set.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check_against(
    net: &ProKanNetwork,
    batch: &[&Sample],
    cfg: &LossConfig,
    lambda: f64,
    h: f64,
    tolerance: f64,
    seed: u64,
    analytic: &GradientSet,
) -> Result<GradCheckReport> {
    if !(h > 0.0 && h <= 1e-3) {
        return Err(Error::Config(format!("finite-difference step {h} outside (0, 1e-3]")));
    }
    if analytic.layers.len() != net.num_layers() {
        return Err(Error::ShapeMismatch("gradient set does not match network".into()));
    }
    let mut all: Vec<ParamIndex> = net
        .layers()
        .enumerate()
        .flat_map(|(layer, l)| (0..l.num_parameters()).map(move |index| ParamIndex { layer, index }))
        .collect();
    if all.len() > GRADCHECK_MAX_FULL {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        all.shuffle(&mut rng);
        all.truncate(GRADCHECK_MAX_FULL);
        all.sort_by_key(|p| (p.layer, p.index));
    }

    let total = |n: &ProKanNetwork| -> Result<f64> { Ok(batch_loss(n, batch, cfg)? + l2_penalty(n, lambda)) };
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    let mut worst_at = None;
    for &pi in &all {
        let original = net.layers().nth(pi.layer).expect("index from layers").coefficients()[pi.index];
        let set = |n: &mut ProKanNetwork, v: f64| {
            n.layers_mut().nth(pi.layer).expect("layer").coefficients_mut()[pi.index] = v;
        };
        set(&mut probe, original + h);
        let plus = total(&probe)?;
        set(&mut probe, original - h);
        let minus = total(&probe)?;
        set(&mut probe, original);
        let numeric = (plus - minus) / (2.0 * h);
        let err = relative_error(analytic.layers[pi.layer][pi.index], numeric, GRADCHECK_ABS_FLOOR);
        if err > worst {
            worst = err;
            worst_at = Some(pi);
        }
    }
    let passed = worst < tolerance;
    Ok(GradCheckReport {
        max_relative_error: worst,
        offending: if passed { None } else { worst_at },
        checked: all.len(),
        passed,
    })
}
