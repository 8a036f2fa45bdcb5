//! The negative ELBO, the full-batch training loop, posterior-mean scoring
//! and checkpoints.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, SplitSpec};
use crate::metrics::{auc_roc, average_precision};
use crate::model::{Model, ModelConfig, ModelInputs, StepNoise};
use crate::tensor::{adam_step, AdamConfig, SparseMatrix, Tape, Tensor, Var};

/// Weight of positive entries in the link reconstruction term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PosWeight {
    /// `(N² − nnz) / nnz` over the label matrix.
    Auto,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Epochs of linear KL warm-up from 0 to 1; 0 disables it.
    pub kl_warmup: usize,
    /// Validation cadence in epochs.
    pub val_every: usize,
    pub pos_weight: PosWeight,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        Self {
            model,
            epochs: 500,
            lr: 0.01,
            seed: 0,
            kl_warmup: 50,
            val_every: 10,
            pos_weight: PosWeight::Auto,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.val_every == 0 {
            return Err(Error::Config("validation cadence must be at least 1".into()));
        }
        if let PosWeight::Fixed(w) = self.pos_weight {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("positive weight must be positive, got {w}")));
            }
        }
        Ok(())
    }

    /// Weight on the KL terms at a zero-based epoch.
    pub fn kl_weight(&self, epoch: usize) -> f64 {
        if self.kl_warmup == 0 {
            1.0
        } else {
            ((epoch + 1) as f64 / self.kl_warmup as f64).min(1.0)
        }
    }
}

/// Reconstruction targets: the train adjacency with a unit diagonal.
#[derive(Clone, Debug)]
pub struct LinkTargets {
    pub labels: Tensor,
    pub pos_weight: f64,
}

impl LinkTargets {
    pub fn new(adjacency: &SparseMatrix, mode: PosWeight) -> Self {
        let n = adjacency.rows();
        let mut labels = adjacency.to_dense();
        for i in 0..n {
            labels.set(i, i, 1.0);
        }
        let nnz = labels.data().iter().filter(|&&y| y != 0.0).count();
        let pos_weight = match mode {
            PosWeight::Fixed(w) => w,
            PosWeight::Auto if nnz == n * n => 1.0,
            PosWeight::Auto => (n * n - nnz) as f64 / nnz as f64,
        };
        Self { labels, pos_weight }
    }
}

/// Loss components of one step. KL values are unweighted; the total is
/// `recon + features + kl_weight · (kl_b + kl_v + kl_r)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    pub features: f64,
    pub kl_b: f64,
    pub kl_v: f64,
    pub kl_r: f64,
    pub kl_weight: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn component_sum(&self) -> f64 {
        self.recon + self.features + self.kl_weight * (self.kl_b + self.kl_v + self.kl_r)
    }
}

/// Negative ELBO for one stochastic forward pass.
///
/// Dropout is applied when `dropout_rng` is given.
#[allow(clippy::too_many_arguments)]
pub fn elbo_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    model: &Model,
    inputs: &ModelInputs,
    targets: &LinkTargets,
    noise: &StepNoise,
    kl_weight: f64,
    dropout_rng: Option<&mut R>,
) -> Result<(Var, LossBreakdown)> {
    let fwd = model.forward_train(tape, inputs, noise, dropout_rng)?;
    let recon = tape.bce_with_logits(fwd.link_logits, &targets.labels, targets.pos_weight)?;
    let mut total = recon;
    let mut out = LossBreakdown {
        recon: tape.value(recon).item(),
        kl_weight,
        ..Default::default()
    };
    if let Some(fl) = fwd.feature_logits {
        let x = inputs
            .x_target
            .as_ref()
            .ok_or_else(|| Error::Usage("feature term enabled but no features given".into()))?;
        let f = tape.bce_with_logits(fl, x, 1.0)?;
        out.features = tape.value(f).item();
        total = tape.add(total, f)?;
    }
    let mut kls = Vec::new();
    for (kl, slot) in [(fwd.kl_b, &mut out.kl_b), (fwd.kl_v, &mut out.kl_v), (fwd.kl_r, &mut out.kl_r)] {
        if let Some(kl) = kl {
            *slot = tape.value(kl).item();
            kls.push(kl);
        }
    }
    for kl in kls {
        let w = tape.scale(kl, kl_weight)?;
        total = tape.add(total, w)?;
    }
    out.total = tape.value(total).item();
    if !out.total.is_finite() {
        return Err(Error::NonFinite(format!("loss {out:?}")));
    }
    Ok((total, out))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub epoch: usize,
    pub auc: f64,
    pub ap: f64,
}

/// Training trace. Equality ignores `wall_clock`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub validation: Vec<ValidationRecord>,
    /// Epoch whose parameters the returned checkpoint holds; `None` for the
    /// initialization.
    pub best_epoch: Option<usize>,
    /// Set when training stopped on a non-finite loss or gradient.
    pub diverged: Option<String>,
    /// Not serialized, so report files stay byte-identical across reruns.
    #[serde(skip)]
    pub wall_clock: Duration,
}

impl PartialEq for TrainReport {
    fn eq(&self, other: &Self) -> bool {
        self.epochs == other.epochs
            && self.validation == other.validation
            && self.best_epoch == other.best_epoch
            && self.diverged == other.diverged
    }
}

/// Seeds of the independent random streams of one run.
const INIT_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Fresh model initialized from the config's seed.
pub fn init_model(config: &TrainConfig, inputs: &ModelInputs) -> Result<Model> {
    config.validate()?;
    Model::new(
        config.model.clone(),
        inputs.n_nodes(),
        inputs.d_in(),
        &mut stream(config.seed, INIT_STREAM),
    )
}

fn validation_scores(model: &Model, inputs: &ModelInputs, split: &SplitSpec) -> Result<(f64, f64)> {
    let pm = model.posterior_mean(inputs)?;
    let pairs = split.val_pos.iter().chain(&split.val_neg);
    let scores: Vec<f64> = pairs.map(|&(u, v)| pm.link_probability(u, v)).collect();
    let labels: Vec<bool> = (0..scores.len()).map(|i| i < split.val_pos.len()).collect();
    Ok((auc_roc(&scores, &labels)?, average_precision(&scores, &labels)?))
}

/// Full-batch training on `graph`, the training graph of `split` with any
/// node features attached.
///
/// Validation AUC is computed every `val_every` epochs and after the last
/// one; the returned checkpoint holds the parameters with the best
/// validation AUC so far. Without validation pairs the last parameters are
/// kept. A non-finite loss or gradient stops training, records the reason
/// in the report and returns the best checkpoint seen before it.
pub fn train(graph: &Graph, split: &SplitSpec, config: &TrainConfig) -> Result<(Checkpoint, TrainReport)> {
    let start = Instant::now();
    config.validate()?;
    if split.n_nodes != graph.n_nodes() {
        return Err(Error::ConfigMismatch(format!(
            "split has {} nodes, graph has {}",
            split.n_nodes,
            graph.n_nodes()
        )));
    }
    let inputs = ModelInputs::new(graph.adjacency(), graph.features());
    if config.model.feature_term && inputs.x_target.is_none() {
        return Err(Error::Config("feature term enabled but the graph has no features".into()));
    }
    let targets = LinkTargets::new(graph.adjacency(), config.pos_weight);
    let mut model = init_model(config, &inputs)?;
    let adam = AdamConfig {
        lr: config.lr,
        ..Default::default()
    };
    let mut noise_rng = stream(config.seed, NOISE_STREAM);
    let mut dropout_rng = stream(config.seed, DROPOUT_STREAM);
    let has_val = !split.val_pos.is_empty() && !split.val_neg.is_empty();

    let mut report = TrainReport {
        epochs: Vec::with_capacity(config.epochs),
        validation: Vec::new(),
        best_epoch: None,
        diverged: None,
        wall_clock: Duration::ZERO,
    };
    let mut best = (f64::NEG_INFINITY, model.clone(), 0u64);
    let mut tape = Tape::new();
    for epoch in 0..config.epochs {
        let noise = model.draw_noise(&mut noise_rng);
        tape.clear();
        let step = elbo_loss(
            &mut tape,
            &model,
            &inputs,
            &targets,
            &noise,
            config.kl_weight(epoch),
            Some(&mut dropout_rng),
        )
        .and_then(|(loss, parts)| {
            tape.backward(loss, model.params_mut())?;
            adam_step(model.params_mut(), &adam)?;
            Ok(parts)
        });
        let parts = match step {
            Ok(p) => p,
            Err(e @ (Error::NonFinite(_) | Error::Domain { .. })) => {
                log::warn!("training stopped at epoch {epoch}: {e}");
                report.diverged = Some(format!("epoch {epoch}: {e}"));
                model.params_mut().zero_grads();
                break;
            }
            Err(e) => return Err(e),
        };
        report.epochs.push(EpochRecord { epoch, loss: parts });
        let last = epoch + 1 == config.epochs;
        if (epoch + 1) % config.val_every == 0 || last {
            if has_val {
                let (auc, ap) = validation_scores(&model, &inputs, split)?;
                log::info!("epoch {epoch}: loss {:.4} val auc {auc:.4} ap {ap:.4}", parts.total);
                report.validation.push(ValidationRecord { epoch, auc, ap });
                if auc > best.0 {
                    best = (auc, model.clone(), (epoch + 1) as u64);
                    report.best_epoch = Some(epoch);
                }
            } else {
                log::info!("epoch {epoch}: loss {:.4}", parts.total);
            }
        }
        if !has_val {
            best = (f64::NEG_INFINITY, model.clone(), (epoch + 1) as u64);
            report.best_epoch = Some(epoch);
        }
    }
    report.wall_clock = start.elapsed();
    let (_, model, step) = best;
    Ok((
        Checkpoint {
            config: config.clone(),
            step,
            model,
        },
        report,
    ))
}

/// Posterior-mean link probabilities for `pairs`, dropout off.
pub fn score_pairs(model: &Model, inputs: &ModelInputs, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    let n = inputs.n_nodes();
    if let Some(&(u, v)) = pairs.iter().find(|&&(u, v)| u >= n || v >= n) {
        return Err(Error::Usage(format!("pair ({u}, {v}) out of range for {n} nodes")));
    }
    let pm = model.posterior_mean(inputs)?;
    Ok(pairs.iter().map(|&(u, v)| pm.link_probability(u, v)).collect())
}
