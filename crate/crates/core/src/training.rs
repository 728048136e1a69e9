//! Staged training: depth-weighted initialization of the task group, a
//! memorized-layer refresh, policy-gradient optimization of the exit heads,
//! exit-conditioned optimization of the task group, and the outer loop that
//! repeats the last three until the dev score stops improving.
//!
//! Stage isolation is strict: the policy stage never moves a task parameter
//! and the task stage never moves a policy parameter.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::hardness::{self, MemorizedLayerTable};
use crate::inference;
use crate::model::{Checkpoint, ModelBundle};
use crate::numeric::{Rng, Tape};
use crate::rl::{self, RewardConfig, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub init_epochs: usize,
    pub policy_epochs: usize,
    pub task_epochs: usize,
    pub rounds_max: usize,
    /// Stop after this many rounds without a dev-accuracy improvement.
    pub patience: usize,
    pub batch_size: usize,
    /// Trajectories sampled per instance per policy epoch.
    pub k_samples: usize,
    pub lr_init: f64,
    pub lr_policy: f64,
    pub lr_task: f64,
    /// Exploration schedule, annealed linearly across each policy stage.
    pub eps_start: f64,
    pub eps_end: f64,
    pub reward: RewardConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            init_epochs: 15,
            policy_epochs: 4,
            task_epochs: 3,
            rounds_max: 10,
            patience: 3,
            batch_size: 32,
            k_samples: 4,
            lr_init: 0.05,
            lr_policy: 0.15,
            lr_task: 0.02,
            eps_start: 0.3,
            eps_end: 0.0,
            reward: RewardConfig::default(),
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.init_epochs == 0 || self.policy_epochs == 0 || self.task_epochs == 0 {
            return Err(Error::Config("all stage epochs must be >= 1".to_string()));
        }
        if self.rounds_max == 0 || self.patience == 0 {
            return Err(Error::Config(
                "rounds_max and patience must be >= 1".to_string(),
            ));
        }
        if self.batch_size == 0 || self.k_samples == 0 {
            return Err(Error::Config(
                "batch_size and k_samples must be >= 1".to_string(),
            ));
        }
        if !(self.lr_init > 0.0 && self.lr_policy > 0.0 && self.lr_task > 0.0) {
            return Err(Error::Config("learning rates must be positive".to_string()));
        }
        for eps in [self.eps_start, self.eps_end] {
            if !(0.0..=1.0).contains(&eps) {
                return Err(Error::Config(format!("eps {eps} outside [0, 1]")));
            }
        }
        self.reward.validate()
    }

    fn eps_at(&self, epoch: usize) -> f64 {
        if self.policy_epochs <= 1 {
            return self.eps_start;
        }
        let t = epoch as f64 / (self.policy_epochs - 1) as f64;
        self.eps_start + (self.eps_end - self.eps_start) * t
    }
}

/// Depth-weighted layer objective for one instance: sum_i i * l_i / sum_i i.
pub fn weighted_layer_objective(per_layer_losses: &[f64]) -> f64 {
    let l = per_layer_losses.len();
    let denom = (l * (l + 1)) as f64 / 2.0;
    per_layer_losses
        .iter()
        .enumerate()
        .map(|(i, &loss)| (i + 1) as f64 * loss)
        .sum::<f64>()
        / denom
}

/// What the initialization stage observed.
#[derive(Debug, Clone)]
pub struct InitTrace {
    /// Mean depth-weighted objective per epoch.
    pub objective_per_epoch: Vec<f64>,
    /// Final-layer correctness per epoch, aligned with `data.instances`.
    /// Feeds forgetting-event counts.
    pub correctness_history: Vec<Vec<bool>>,
}

impl InitTrace {
    /// Forgetting events per instance across the recorded epochs.
    pub fn forgetting_counts(&self) -> Vec<usize> {
        if self.correctness_history.is_empty() {
            return Vec::new();
        }
        let n = self.correctness_history[0].len();
        (0..n)
            .map(|i| {
                let history: Vec<bool> = self.correctness_history.iter().map(|e| e[i]).collect();
                hardness::forgetting_events(&history)
            })
            .collect()
    }
}

fn shuffled_indices(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order
}

fn check_objective(value: f64, stage: &str, epoch: usize) -> Result<f64> {
    if !value.is_finite() {
        return Err(Error::Training(format!(
            "{stage} diverged at epoch {epoch}: objective = {value}"
        )));
    }
    Ok(value)
}

/// Non-finite values hit during a stage mean the parameters blew up; report
/// that as divergence rather than a bare numeric error.
fn numeric_as_divergence(err: Error, stage: &str, epoch: usize) -> Error {
    match err {
        Error::Numeric(msg) => {
            Error::Training(format!("{stage} diverged at epoch {epoch}: {msg}"))
        }
        other => other,
    }
}

/// Stage 1: minimize the depth-weighted sum of every layer's classification
/// loss over the task group by mini-batch SGD. Policy heads are untouched.
pub fn train_init(m: &mut ModelBundle, train: &Dataset, cfg: &TrainConfig) -> Result<InitTrace> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("train_init: empty training set".to_string()));
    }
    let l = m.num_layers();
    let omega = m.omega_ids();
    let mut rng = Rng::new(cfg.seed).substream("init-shuffle");
    let mut trace = InitTrace {
        objective_per_epoch: Vec::with_capacity(cfg.init_epochs),
        correctness_history: Vec::with_capacity(cfg.init_epochs),
    };

    // layer-weight coefficients i / sum(i)
    let denom = (l * (l + 1)) as f64 / 2.0;
    let layer_coeff: Vec<f64> = (1..=l).map(|i| i as f64 / denom).collect();

    for epoch in 0..cfg.init_epochs {
        let order = shuffled_indices(train.len(), &mut rng);
        let mut epoch_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size.min(train.len())) {
            let value = (|| {
                let mut tape = Tape::new();
                let mut terms = Vec::with_capacity(chunk.len() * l);
                for &idx in chunk {
                    let inst = &train.instances[idx];
                    let states = m.tape_states(&mut tape, &inst.features, l)?;
                    for (i, &state) in states.iter().enumerate() {
                        let logits = m.tape_classifier_logits(&mut tape, i + 1, state)?;
                        let ce = tape.softmax_ce(logits, inst.label)?;
                        terms.push((ce, layer_coeff[i] / chunk.len() as f64));
                    }
                }
                let tail = tape.weighted_sum(&terms)?;
                let value = check_objective(tape.scalar(tail)?, "init stage", epoch)?;
                m.store_mut().zero_grad(&omega);
                tape.backward(tail, m.store_mut())?;
                m.store_mut().sgd_step(&omega, cfg.lr_init)?;
                Ok(value)
            })()
            .map_err(|e| numeric_as_divergence(e, "init stage", epoch))?;
            epoch_sum += value * chunk.len() as f64;
        }
        trace.objective_per_epoch.push(epoch_sum / train.len() as f64);

        // epoch-end final-layer correctness, for forgetting events
        let bits = (|| {
            let mut bits = Vec::with_capacity(train.len());
            for inst in &train.instances {
                let states = m.forward_states(&inst.features, l)?;
                let probs = m.classify(l, &states[l - 1])?;
                bits.push(hardness::argmax(&probs) == inst.label);
            }
            Ok(bits)
        })()
        .map_err(|e| numeric_as_divergence(e, "init stage", epoch))?;
        trace.correctness_history.push(bits);
    }
    Ok(trace)
}

/// Stage 2: recompute the memorized layer of every training instance from
/// the current model. The table is rebuilt, never averaged.
pub fn refresh_memorized(m: &ModelBundle, train: &Dataset) -> Result<MemorizedLayerTable> {
    let mut table = MemorizedLayerTable::new(m.num_layers());
    for inst in &train.instances {
        let bits = hardness::correctness(m, inst)?;
        table.insert(inst.id, hardness::memorized_layer(&bits)?)?;
    }
    Ok(table)
}

/// Stage 3: optimize the exit policy by REINFORCE over sampled trajectories
/// while the task group stays frozen. Returns the mean return of the final
/// epoch.
pub fn train_policy_stage(
    m: &mut ModelBundle,
    train: &Dataset,
    table: &MemorizedLayerTable,
    cfg: &TrainConfig,
) -> Result<f64> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed).substream("policy-stage");
    let mut last_epoch_mean = 0.0;
    for epoch in 0..cfg.policy_epochs {
        let eps = cfg.eps_at(epoch);
        let order = shuffled_indices(train.len(), &mut rng);
        let mut epoch_sum = 0.0;
        let mut epoch_count = 0usize;
        for chunk in order.chunks(cfg.batch_size.min(train.len())) {
            (|| {
                let mut batch: Vec<(Trajectory, f64)> =
                    Vec::with_capacity(chunk.len() * cfg.k_samples);
                for &idx in chunk {
                    let inst = &train.instances[idx];
                    for _ in 0..cfg.k_samples {
                        let tr = rl::sample_trajectory(m, inst, eps, &mut rng)?;
                        let ret = rl::trajectory_return(&tr, inst, m, table, &cfg.reward)?;
                        batch.push((tr, ret));
                    }
                }
                epoch_sum += batch.iter().map(|(_, r)| r).sum::<f64>();
                epoch_count += batch.len();
                rl::reinforce_update(m, &batch, cfg.lr_policy)
            })()
            .map_err(|e| numeric_as_divergence(e, "policy stage", epoch))?;
        }
        last_epoch_mean = check_objective(epoch_sum / epoch_count as f64, "policy stage", epoch)?;
    }
    Ok(last_epoch_mean)
}

/// Stage 4: sample one exploitation trajectory per instance from the frozen
/// policy and descend the task group on the classification loss at the exit
/// layer only. Returns the mean task loss of the final epoch.
pub fn train_task_stage(m: &mut ModelBundle, train: &Dataset, cfg: &TrainConfig) -> Result<f64> {
    cfg.validate()?;
    let omega = m.omega_ids();
    let mut rng = Rng::new(cfg.seed).substream("task-stage");
    let mut last_epoch_mean = 0.0;
    for epoch in 0..cfg.task_epochs {
        let order = shuffled_indices(train.len(), &mut rng);
        let mut epoch_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size.min(train.len())) {
            let value = (|| {
                // exit layers come from the frozen policy, outside the tape
                let exits: Vec<usize> = chunk
                    .iter()
                    .map(|&idx| {
                        rl::sample_trajectory(m, &train.instances[idx], 0.0, &mut rng)
                            .map(|tr| tr.exit_layer)
                    })
                    .collect::<Result<_>>()?;

                let mut tape = Tape::new();
                let mut terms = Vec::with_capacity(chunk.len());
                for (&idx, &exit_layer) in chunk.iter().zip(&exits) {
                    let inst = &train.instances[idx];
                    let states = m.tape_states(&mut tape, &inst.features, exit_layer)?;
                    let logits =
                        m.tape_classifier_logits(&mut tape, exit_layer, states[exit_layer - 1])?;
                    let ce = tape.softmax_ce(logits, inst.label)?;
                    terms.push((ce, 1.0 / chunk.len() as f64));
                }
                let tail = tape.weighted_sum(&terms)?;
                let value = check_objective(tape.scalar(tail)?, "task stage", epoch)?;
                m.store_mut().zero_grad(&omega);
                tape.backward(tail, m.store_mut())?;
                m.store_mut().sgd_step(&omega, cfg.lr_task)?;
                Ok(value)
            })()
            .map_err(|e| numeric_as_divergence(e, "task stage", epoch))?;
            epoch_sum += value * chunk.len() as f64;
        }
        last_epoch_mean = epoch_sum / train.len() as f64;
    }
    Ok(last_epoch_mean)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Mean trajectory return at the end of the policy stage.
    pub policy_objective: f64,
    /// Mean exit-layer classification loss at the end of the task stage.
    pub task_objective: f64,
    pub dev_accuracy: f64,
    pub mean_exit_layer: f64,
    /// Memorized-layer counts per layer at the start of the round.
    pub memorized_histogram: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub init_objective_per_epoch: Vec<f64>,
    /// Dev accuracy of the freshly initialized model under early-exit
    /// inference, before any policy training.
    pub init_dev_accuracy: f64,
    pub rounds: Vec<RoundRecord>,
    pub best_round: usize,
    pub best_dev_accuracy: f64,
}

/// Result of the full iterative procedure: the report plus the checkpoint of
/// the best-dev round.
#[derive(Debug)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub best: Checkpoint,
    /// Forgetting counts from the init stage, aligned with train instances.
    pub init_forgetting: Vec<usize>,
}

/// The outer loop: initialization once, then rounds of refresh / policy / task until
/// the dev accuracy stalls for `patience` rounds or `rounds_max` is reached.
pub fn train_iterative(
    m: &mut ModelBundle,
    train: &Dataset,
    dev: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_iterative_observed(m, train, dev, cfg, &mut |_, _| Ok(()))
}

/// [`train_iterative`] with a per-round observer, called after each completed
/// round with the record and the current model (for checkpointing or logs).
pub fn train_iterative_observed(
    m: &mut ModelBundle,
    train: &Dataset,
    dev: &Dataset,
    cfg: &TrainConfig,
    on_round: &mut dyn FnMut(&RoundRecord, &ModelBundle) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let init_trace = train_init(m, train, cfg)?;
    let init_forgetting = init_trace.forgetting_counts();
    let init_eval = inference::evaluate(m, dev)?;

    let mut rounds = Vec::new();
    let mut best_round = 0usize;
    let mut best_dev = f64::NEG_INFINITY;
    let mut best = m.to_checkpoint();
    let mut stall = 0usize;

    for round in 1..=cfg.rounds_max {
        let table = refresh_memorized(m, train)?;
        let histogram = table.histogram();
        let policy_objective = train_policy_stage(m, train, &table, cfg)?;
        let task_objective = train_task_stage(m, train, cfg)?;
        let eval = inference::evaluate(m, dev)?;
        let record = RoundRecord {
            round,
            policy_objective,
            task_objective,
            dev_accuracy: eval.accuracy,
            mean_exit_layer: eval.mean_exit_layer,
            memorized_histogram: histogram,
        };
        on_round(&record, m)?;
        rounds.push(record);

        if eval.accuracy > best_dev {
            best_dev = eval.accuracy;
            best_round = round;
            best = m.to_checkpoint();
            stall = 0;
        } else {
            stall += 1;
            if stall >= cfg.patience {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        report: TrainReport {
            init_objective_per_epoch: init_trace.objective_per_epoch,
            init_dev_accuracy: init_eval.accuracy,
            rounds,
            best_round,
            best_dev_accuracy: best_dev,
        },
        best,
        init_forgetting,
    })
}
