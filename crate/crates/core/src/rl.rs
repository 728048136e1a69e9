//! Exit policy learning: actions, trajectories, reward functions, REINFORCE
//! updates, and an exact-enumeration oracle for expected reward.
//!
//! A trajectory walks layers 1..T, continuing until a single terminal Exit.
//! Exit at the final layer is forced, so it contributes no policy probability
//! factor: Pr(exit at T) = p_T * prod_{t<T}(1 - p_t) for T < L and
//! prod_{t<L}(1 - p_t) for T = L. Policy updates use the log-derivative
//! estimator with a batch-mean baseline; only policy-chosen steps contribute
//! log-probability terms, which keeps the estimator consistent with the
//! enumeration oracle.

use serde::{Deserialize, Serialize};

use crate::data::Instance;
use crate::error::{Error, Result};
use crate::hardness::MemorizedLayerTable;
use crate::model::{ModelBundle, CONTINUE_INDEX, EXIT_INDEX};
use crate::numeric::{cross_entropy, Rng, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Exit,
    Continue,
}

impl Action {
    pub fn logit_index(self) -> usize {
        match self {
            Action::Exit => EXIT_INDEX,
            Action::Continue => CONTINUE_INDEX,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryStep {
    pub layer: usize,
    pub state: Vec<f64>,
    pub action: Action,
    pub p_exit: f64,
}

/// One rollout: Continue at layers 1..T-1, Exit at layer T <= L.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub exit_layer: usize,
}

impl Trajectory {
    pub fn validate(&self, num_layers: usize) -> Result<()> {
        if self.steps.is_empty() || self.exit_layer > num_layers {
            return Err(Error::Usage(
                "trajectory: empty or exit beyond last layer".to_string(),
            ));
        }
        for (i, step) in self.steps.iter().enumerate() {
            if step.layer != i + 1 {
                return Err(Error::Usage(
                    "trajectory: layers not contiguous from 1".to_string(),
                ));
            }
            let is_last = i + 1 == self.steps.len();
            let expect = if is_last { Action::Exit } else { Action::Continue };
            if step.action != expect {
                return Err(Error::Usage(
                    "trajectory: must Continue until a single terminal Exit".to_string(),
                ));
            }
        }
        if self.steps.len() != self.exit_layer {
            return Err(Error::Usage(
                "trajectory: exit_layer disagrees with steps".to_string(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardVariant {
    Vanilla,
    HardnessGuided,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub alpha: f64,
    pub variant: RewardVariant,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            alpha: 0.01,
            variant: RewardVariant::HardnessGuided,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!(
                "reward alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Per-step reward. Continue earns 0. Exit at layer `t` with task loss `h`:
/// vanilla -h - alpha * t; hardness-guided -h - alpha * (1 - m/l) * t, so a
/// hard instance (large memorized layer m) pays less for depth.
pub fn reward(
    action: Action,
    t: usize,
    h: f64,
    m: usize,
    l: usize,
    cfg: &RewardConfig,
) -> Result<f64> {
    cfg.validate()?;
    if t == 0 || t > l {
        return Err(Error::Usage(format!("reward: layer {t} outside 1..={l}")));
    }
    if m == 0 || m > l {
        return Err(Error::Usage(format!(
            "reward: memorized layer {m} outside 1..={l}"
        )));
    }
    if !(h >= 0.0) {
        return Err(Error::Usage(format!("reward: loss must be >= 0, got {h}")));
    }
    Ok(match action {
        Action::Continue => 0.0,
        Action::Exit => match cfg.variant {
            RewardVariant::Vanilla => -h - cfg.alpha * t as f64,
            RewardVariant::HardnessGuided => {
                -h - cfg.alpha * (1.0 - m as f64 / l as f64) * t as f64
            }
        },
    })
}

/// Sample one trajectory. At layers below L the action comes from the policy
/// or, with probability `eps`, a fair coin; at layer L Exit is forced. The
/// recorded `p_exit` is always the policy's probability at that layer.
pub fn sample_trajectory(
    m: &ModelBundle,
    inst: &Instance,
    eps: f64,
    rng: &mut Rng,
) -> Result<Trajectory> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::Usage(format!(
            "sample_trajectory: eps {eps} outside [0, 1]"
        )));
    }
    let l = m.num_layers();
    let mut state = m.embed_out(&inst.features)?;
    let mut steps = Vec::new();
    for t in 1..=l {
        state = m.next_state(t, &state)?;
        let p_exit = m.policy_exit_prob(t, &state)?;
        let action = if t == l {
            Action::Exit
        } else if eps > 0.0 && rng.next_f64() < eps {
            if rng.next_f64() < 0.5 {
                Action::Exit
            } else {
                Action::Continue
            }
        } else if rng.next_f64() < p_exit {
            Action::Exit
        } else {
            Action::Continue
        };
        steps.push(TrajectoryStep {
            layer: t,
            state: state.clone(),
            action,
            p_exit,
        });
        if action == Action::Exit {
            break;
        }
    }
    let exit_layer = steps.len();
    Ok(Trajectory { steps, exit_layer })
}

/// Total reward of a trajectory. Continue steps contribute 0, so this equals
/// the Exit-step reward with the task loss taken at the exit layer.
pub fn trajectory_return(
    tr: &Trajectory,
    inst: &Instance,
    m: &ModelBundle,
    table: &MemorizedLayerTable,
    cfg: &RewardConfig,
) -> Result<f64> {
    let l = m.num_layers();
    tr.validate(l)?;
    let exit_step = &tr.steps[tr.exit_layer - 1];
    let probs = m.classify(tr.exit_layer, &exit_step.state)?;
    let h = cross_entropy(inst.label, &probs)?;
    let memorized = match cfg.variant {
        RewardVariant::HardnessGuided => table.get(inst.id).ok_or_else(|| {
            Error::Usage(format!(
                "instance {} missing from memorized-layer table",
                inst.id
            ))
        })?,
        // unused by the vanilla formula; any in-range value works
        RewardVariant::Vanilla => 1,
    };
    reward(Action::Exit, tr.exit_layer, h, memorized, l, cfg)
}

/// Accumulate `coeff * grad_theta sum_t log pi(a_t | s_t)` into the policy
/// parameters' gradients. The forced Exit at the final layer is not a policy
/// choice and contributes nothing. States enter detached, so task-group
/// gradients are untouched.
pub fn accumulate_policy_gradient(m: &mut ModelBundle, tr: &Trajectory, coeff: f64) -> Result<()> {
    let l = m.num_layers();
    tr.validate(l)?;
    let mut tape = Tape::new();
    let mut terms = Vec::new();
    for step in &tr.steps {
        if step.layer == l && step.action == Action::Exit {
            continue; // forced exit
        }
        let state = tape.input(&step.state);
        let logits = m.tape_policy_logits(&mut tape, step.layer, state, true)?;
        let logp = tape.log_prob(logits, step.action.logit_index())?;
        terms.push((logp, coeff));
    }
    if terms.is_empty() {
        return Ok(()); // single forced step: nothing policy-chosen
    }
    let tail = tape.weighted_sum(&terms)?;
    tape.backward(tail, m.store_mut())
}

/// One REINFORCE ascent step over a batch of (trajectory, return) pairs,
/// using the batch-mean return as baseline. Returns the baseline. Only the
/// policy group moves; task parameters are bitwise unchanged.
pub fn reinforce_update(m: &mut ModelBundle, batch: &[(Trajectory, f64)], lr: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Usage("reinforce_update: empty batch".to_string()));
    }
    let baseline = batch.iter().map(|(_, r)| r).sum::<f64>() / batch.len() as f64;
    let theta = m.theta_ids();
    m.store_mut().zero_grad(&theta);
    for (tr, ret) in batch {
        // negative coefficient: sgd descends, we ascend expected reward
        let coeff = -(ret - baseline) / batch.len() as f64;
        accumulate_policy_gradient(m, tr, coeff)?;
    }
    m.store_mut().sgd_step(&theta, lr)?;
    Ok(baseline)
}

/// Exit-layer distribution induced by the current policy for one input:
/// Pr(T) = p_T * prod_{t<T}(1 - p_t), with the remaining mass forced onto L.
pub fn exit_distribution(m: &ModelBundle, features: &[f64]) -> Result<Vec<f64>> {
    let l = m.num_layers();
    let states = m.forward_states(features, l)?;
    let mut probs = Vec::with_capacity(l);
    let mut survive = 1.0;
    for t in 1..=l {
        let p = m.policy_exit_prob(t, &states[t - 1])?;
        if t < l {
            probs.push(survive * p);
            survive *= 1.0 - p;
        } else {
            probs.push(survive);
        }
    }
    Ok(probs)
}

/// Exact expected return over all L possible exit layers. Only practical for
/// small depths; refuses L > 16.
pub fn enumerate_expected_reward(
    m: &ModelBundle,
    inst: &Instance,
    table: &MemorizedLayerTable,
    cfg: &RewardConfig,
) -> Result<f64> {
    let l = m.num_layers();
    if l > 16 {
        return Err(Error::Usage(format!(
            "enumerate_expected_reward: L = {l} too deep"
        )));
    }
    let states = m.forward_states(&inst.features, l)?;
    let exit_probs = exit_distribution(m, &inst.features)?;
    let memorized = match cfg.variant {
        RewardVariant::HardnessGuided => table.get(inst.id).ok_or_else(|| {
            Error::Usage(format!(
                "instance {} missing from memorized-layer table",
                inst.id
            ))
        })?,
        RewardVariant::Vanilla => 1,
    };
    let mut expected = 0.0;
    for t in 1..=l {
        let probs = m.classify(t, &states[t - 1])?;
        let h = cross_entropy(inst.label, &probs)?;
        let r = reward(Action::Exit, t, h, memorized, l, cfg)?;
        expected += exit_probs[t - 1] * r;
    }
    Ok(expected)
}
