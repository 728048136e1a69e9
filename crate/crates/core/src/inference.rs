//! Early-exit inference and evaluation: the p > 0.5 exit rule, accuracy and
//! saved-layer metrics, an entropy-threshold baseline, per-layer conditional
//! accuracy, and alpha sweeps over full training runs.

use serde::{Deserialize, Serialize};

use crate::data::{DataSplits, Dataset};
use crate::error::{Error, Result};
use crate::hardness::argmax;
use crate::model::{BackboneConfig, ModelBundle};
use crate::numeric::{entropy, Rng};
use crate::rl;
use crate::training::{train_iterative, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    pub predicted: usize,
    pub exit_layer: usize,
    /// Exit probabilities of the layers actually computed; its length equals
    /// `exit_layer`, which is also the count of executed blocks.
    pub p_exit_trace: Vec<f64>,
}

/// Walk layers until the first one whose exit probability is strictly above
/// 0.5 (exactly 0.5 continues); the final layer is a forced exit. Layers past
/// the exit are never computed.
pub fn infer(m: &ModelBundle, x: &[f64]) -> Result<InferenceResult> {
    let l = m.num_layers();
    let mut state = m.embed_out(x)?;
    let mut trace = Vec::new();
    for t in 1..=l {
        state = m.next_state(t, &state)?;
        let p = m.policy_exit_prob(t, &state)?;
        trace.push(p);
        if p > 0.5 || t == l {
            return Ok(InferenceResult {
                predicted: argmax(&m.classify(t, &state)?),
                exit_layer: t,
                p_exit_trace: trace,
            });
        }
    }
    unreachable!("the final layer always exits");
}

/// Prediction of the full-depth model (classifier at the last layer).
pub fn classify_full(m: &ModelBundle, x: &[f64]) -> Result<usize> {
    let l = m.num_layers();
    let states = m.forward_states(x, l)?;
    Ok(argmax(&m.classify(l, &states[l - 1])?))
}

/// Baseline exiter: stop at the first layer whose class distribution has
/// Shannon entropy strictly below `threshold`, else the final layer.
pub fn entropy_exit_infer(m: &ModelBundle, x: &[f64], threshold: f64) -> Result<InferenceResult> {
    if !(threshold >= 0.0) {
        return Err(Error::Usage(format!(
            "entropy threshold must be >= 0, got {threshold}"
        )));
    }
    let l = m.num_layers();
    let mut state = m.embed_out(x)?;
    let mut trace = Vec::new();
    for t in 1..=l {
        state = m.next_state(t, &state)?;
        let probs = m.classify(t, &state)?;
        trace.push(m.policy_exit_prob(t, &state)?);
        if entropy(&probs) < threshold || t == l {
            return Ok(InferenceResult {
                predicted: argmax(&probs),
                exit_layer: t,
                p_exit_trace: trace,
            });
        }
    }
    unreachable!("the final layer always exits");
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub mean_exit_layer: f64,
    /// 1 - mean_exit_layer / L; the depth-based speedup proxy.
    pub saved_layers: f64,
    pub n: usize,
}

fn metrics_from<I>(m: &ModelBundle, data: &Dataset, mut run: I) -> Result<EvalMetrics>
where
    I: FnMut(&ModelBundle, &[f64]) -> Result<InferenceResult>,
{
    if data.is_empty() {
        return Err(Error::Data("evaluate: empty dataset".to_string()));
    }
    let mut correct = 0usize;
    let mut layer_sum = 0usize;
    for inst in &data.instances {
        let result = run(m, &inst.features)?;
        if result.predicted == inst.label {
            correct += 1;
        }
        layer_sum += result.exit_layer;
    }
    let n = data.len();
    let mean_exit_layer = layer_sum as f64 / n as f64;
    Ok(EvalMetrics {
        accuracy: correct as f64 / n as f64,
        mean_exit_layer,
        saved_layers: 1.0 - mean_exit_layer / m.num_layers() as f64,
        n,
    })
}

/// Early-exit metrics over a dataset.
pub fn evaluate(m: &ModelBundle, data: &Dataset) -> Result<EvalMetrics> {
    metrics_from(m, data, infer)
}

/// Metrics with every instance forced through the whole stack.
pub fn evaluate_full_depth(m: &ModelBundle, data: &Dataset) -> Result<EvalMetrics> {
    let l = m.num_layers();
    metrics_from(m, data, |m, x| {
        let states = m.forward_states(x, l)?;
        Ok(InferenceResult {
            predicted: argmax(&m.classify(l, &states[l - 1])?),
            exit_layer: l,
            p_exit_trace: Vec::new(),
        })
    })
}

/// Metrics for the entropy-threshold baseline.
pub fn evaluate_entropy(m: &ModelBundle, data: &Dataset, threshold: f64) -> Result<EvalMetrics> {
    metrics_from(m, data, |m, x| entropy_exit_infer(m, x, threshold))
}

/// Per-instance record for results files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: usize,
    pub label: usize,
    pub prediction: usize,
    pub exit_layer: usize,
}

pub fn instance_records(m: &ModelBundle, data: &Dataset) -> Result<Vec<InstanceRecord>> {
    data.instances
        .iter()
        .map(|inst| {
            let result = infer(m, &inst.features)?;
            Ok(InstanceRecord {
                id: inst.id,
                label: inst.label,
                prediction: result.predicted,
                exit_layer: result.exit_layer,
            })
        })
        .collect()
}

/// Accuracy of each layer's classifier restricted to the instances whose
/// sampled trajectory exits there (`samples_per_instance` exploitation
/// rollouts each). Layers nothing exits at report `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerExitStat {
    pub visits: usize,
    pub accuracy: f64,
}

pub fn conditional_layer_accuracy(
    m: &ModelBundle,
    data: &Dataset,
    samples_per_instance: usize,
    rng: &mut Rng,
) -> Result<Vec<Option<LayerExitStat>>> {
    if data.is_empty() {
        return Err(Error::Data("conditional_layer_accuracy: empty dataset".to_string()));
    }
    if samples_per_instance == 0 {
        return Err(Error::Usage("samples_per_instance must be >= 1".to_string()));
    }
    let l = m.num_layers();
    let mut visits = vec![0usize; l];
    let mut correct = vec![0usize; l];
    for inst in &data.instances {
        for _ in 0..samples_per_instance {
            let tr = rl::sample_trajectory(m, inst, 0.0, rng)?;
            let t = tr.exit_layer;
            let probs = m.classify(t, &tr.steps[t - 1].state)?;
            visits[t - 1] += 1;
            if argmax(&probs) == inst.label {
                correct[t - 1] += 1;
            }
        }
    }
    Ok((0..l)
        .map(|i| {
            if visits[i] == 0 {
                None
            } else {
                Some(LayerExitStat {
                    visits: visits[i],
                    accuracy: correct[i] as f64 / visits[i] as f64,
                })
            }
        })
        .collect())
}

/// One sweep measurement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRecord {
    pub alpha: f64,
    pub seed: u64,
    pub accuracy: f64,
    pub mean_exit_layer: f64,
    pub saved_layers: f64,
    pub best_round: usize,
}

/// Train from scratch for every (alpha, seed) pair and evaluate the retained
/// best checkpoint on the dev split. Records come back in sweep order.
pub fn sweep_alpha(
    model_cfg: &BackboneConfig,
    train_cfg: &TrainConfig,
    splits: &DataSplits,
    alphas: &[f64],
    seeds: &[u64],
) -> Result<Vec<SweepRecord>> {
    if alphas.is_empty() || seeds.is_empty() {
        return Err(Error::Usage("sweep_alpha: empty alpha or seed list".to_string()));
    }
    let mut records = Vec::with_capacity(alphas.len() * seeds.len());
    for &alpha in alphas {
        for &seed in seeds {
            let mut cfg = train_cfg.clone();
            cfg.reward.alpha = alpha;
            cfg.seed = seed;
            cfg.validate()?;
            let mut m = ModelBundle::build(model_cfg, &Rng::new(seed))?;
            let outcome = train_iterative(&mut m, &splits.train, &splits.dev, &cfg)?;
            let best = ModelBundle::from_checkpoint(&outcome.best)?;
            let eval = evaluate(&best, &splits.dev)?;
            records.push(SweepRecord {
                alpha,
                seed,
                accuracy: eval.accuracy,
                mean_exit_layer: eval.mean_exit_layer,
                saved_layers: eval.saved_layers,
                best_round: outcome.report.best_round,
            });
        }
    }
    Ok(records)
}

/// Mean metrics per alpha across seeds, in ascending alpha order.
pub fn average_by_alpha(records: &[SweepRecord]) -> Vec<(f64, f64, f64)> {
    let mut alphas: Vec<f64> = records.iter().map(|r| r.alpha).collect();
    alphas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    alphas.dedup();
    alphas
        .into_iter()
        .map(|alpha| {
            let group: Vec<&SweepRecord> =
                records.iter().filter(|r| r.alpha == alpha).collect();
            let n = group.len() as f64;
            let acc = group.iter().map(|r| r.accuracy).sum::<f64>() / n;
            let saved = group.iter().map(|r| r.saved_layers).sum::<f64>() / n;
            (alpha, acc, saved)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BackboneConfig, CONTINUE_INDEX, EXIT_INDEX};

    fn small_model(seed: u64) -> ModelBundle {
        let config = BackboneConfig {
            num_layers: 4,
            input_dim: 3,
            hidden_dim: 5,
            num_classes: 2,
            policy_hidden_dim: 4,
        };
        ModelBundle::build(&config, &Rng::new(seed)).unwrap()
    }

    fn set_exit_bias(m: &mut ModelBundle, layer: usize, exit: f64, cont: f64) {
        let label = format!("policy{layer}.b2");
        let theta = m.theta_ids();
        for id in theta {
            if m.store().get(id).label == label {
                let p = m.store_mut().get_mut(id);
                p.values[EXIT_INDEX] = exit;
                p.values[CONTINUE_INDEX] = cont;
            }
        }
    }

    fn small_dataset(m: &ModelBundle, n: usize, seed: u64) -> Dataset {
        let mut rng = Rng::new(seed);
        let dim = m.config().input_dim;
        let instances = (0..n)
            .map(|i| crate::data::Instance {
                id: i,
                features: (0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect(),
                label: i % 2,
            })
            .collect();
        Dataset::new(instances, 2, crate::data::SplitTag::Dev).unwrap()
    }

    #[test]
    fn infer_exits_at_first_crossing() {
        let mut m = small_model(1);
        // p_exit ~ 0.2 at layer 1, ~ 0.9 at layer 2
        set_exit_bias(&mut m, 1, -1.3863, 0.0); // sigmoid ~ 0.2
        set_exit_bias(&mut m, 2, 2.1972, 0.0); // sigmoid ~ 0.9
        let r = infer(&m, &[0.1, -0.5, 0.3]).unwrap();
        assert_eq!(r.exit_layer, 2);
        assert_eq!(r.p_exit_trace.len(), 2);
        assert!(r.p_exit_trace[0] <= 0.5 && r.p_exit_trace[1] > 0.5);
    }

    #[test]
    fn infer_forced_exit_at_final_layer() {
        let mut m = small_model(2);
        for t in 1..=4 {
            set_exit_bias(&mut m, t, -50.0, 0.0);
        }
        let r = infer(&m, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(r.exit_layer, 4);
        assert_eq!(r.p_exit_trace.len(), 4);
    }

    #[test]
    fn exactly_half_continues() {
        let mut m = small_model(3);
        // zero-weight head with zero bias: p_exit exactly 0.5 everywhere
        for t in 1..=4 {
            set_exit_bias(&mut m, t, 0.0, 0.0);
        }
        let r = infer(&m, &[0.4, -0.2, 0.0]).unwrap();
        assert!(r.p_exit_trace.iter().all(|&p| p == 0.5));
        assert_eq!(r.exit_layer, 4, "0.5 must continue (strict inequality)");
    }

    #[test]
    fn infer_computes_no_layer_beyond_exit_and_matches_classify() {
        let mut m = small_model(4);
        set_exit_bias(&mut m, 2, 5.0, 0.0);
        let x = [0.7, 0.1, -0.9];
        let r = infer(&m, &x).unwrap();
        assert_eq!(r.exit_layer, 2);
        // trace length doubles as the executed-layer counter
        assert_eq!(r.p_exit_trace.len(), 2);
        // prediction equals an independent recomputation at the exit layer
        let states = m.forward_states(&x, 2).unwrap();
        let want = argmax(&m.classify(2, &states[1]).unwrap());
        assert_eq!(r.predicted, want);
    }

    #[test]
    fn evaluate_direct_saved_layers_cases() {
        let config = BackboneConfig {
            num_layers: 12,
            input_dim: 3,
            hidden_dim: 4,
            num_classes: 2,
            policy_hidden_dim: 3,
        };
        let mut m = ModelBundle::build(&config, &Rng::new(5)).unwrap();
        let data = small_dataset(&m, 20, 6);

        // all exit at layer 6 of 12 -> saved = 0.50
        set_exit_bias(&mut m, 6, 50.0, 0.0);
        let e = evaluate(&m, &data).unwrap();
        assert_eq!(e.mean_exit_layer, 6.0);
        assert!((e.saved_layers - 0.5).abs() < 1e-12);

        // all exit at the last layer -> saved = 0
        set_exit_bias(&mut m, 6, -50.0, 0.0);
        let e = evaluate(&m, &data).unwrap();
        assert_eq!(e.mean_exit_layer, 12.0);
        assert_eq!(e.saved_layers, 0.0);

        // mean exit layer 5.88 of 12 -> saved = 0.51
        let saved: f64 = 1.0 - 5.88 / 12.0;
        assert!((saved - 0.51).abs() < 1e-12);
    }

    #[test]
    fn evaluate_is_order_invariant_and_rejects_empty() {
        let m = small_model(7);
        let data = small_dataset(&m, 15, 8);
        let e1 = evaluate(&m, &data).unwrap();
        let mut reversed = data.clone();
        reversed.instances.reverse();
        let e2 = evaluate(&m, &reversed).unwrap();
        assert_eq!(e1, e2);

        let empty = Dataset {
            instances: vec![],
            num_classes: 2,
            feature_dim: 3,
            split: crate::data::SplitTag::Dev,
        };
        assert!(matches!(evaluate(&m, &empty), Err(Error::Data(_))));
    }

    #[test]
    fn all_exit_at_one_gives_max_saved_layers() {
        let mut m = small_model(9);
        set_exit_bias(&mut m, 1, 50.0, 0.0);
        let data = small_dataset(&m, 10, 10);
        let e = evaluate(&m, &data).unwrap();
        assert_eq!(e.mean_exit_layer, 1.0);
        assert!((e.saved_layers - (1.0 - 1.0 / 4.0)).abs() < 1e-12);
    }

    #[test]
    fn entropy_exiter_thresholds() {
        let m = small_model(11);
        let x = [0.3, -0.3, 0.6];

        // threshold 0: entropy >= 0 never beats it, exit at L
        let r = entropy_exit_infer(&m, &x, 0.0).unwrap();
        assert_eq!(r.exit_layer, 4);

        // threshold above ln(num_classes): always exits at layer 1
        let r = entropy_exit_infer(&m, &x, 2.0f64.ln() + 0.01).unwrap();
        assert_eq!(r.exit_layer, 1);

        assert!(entropy_exit_infer(&m, &x, -0.1).is_err());
    }

    #[test]
    fn uniform_head_does_not_pass_half_ln2_threshold() {
        let mut m = small_model(12);
        // zero classifier at layer 1: uniform output, entropy ln 2 ~ 0.693
        let omega = m.omega_ids();
        for id in omega {
            if m.store().get(id).label.starts_with("clf1.") {
                m.store_mut().get_mut(id).values.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let r = entropy_exit_infer(&m, &[0.5, 0.5, 0.5], 0.5).unwrap();
        assert!(r.exit_layer > 1, "ln 2 >= 0.5 must not exit at layer 1");
    }

    #[test]
    fn conditional_layer_accuracy_counts_visits() {
        let m = small_model(13);
        let data = small_dataset(&m, 30, 14);
        let mut rng = Rng::new(15);
        let stats = conditional_layer_accuracy(&m, &data, 4, &mut rng).unwrap();
        assert_eq!(stats.len(), 4);
        let visits: usize = stats.iter().flatten().map(|s| s.visits).sum();
        assert_eq!(visits, 30 * 4);
        for s in stats.iter().flatten() {
            assert!((0.0..=1.0).contains(&s.accuracy));
        }
    }

    #[test]
    fn average_by_alpha_groups_and_sorts() {
        let records = vec![
            SweepRecord { alpha: 0.02, seed: 1, accuracy: 0.8, mean_exit_layer: 5.0, saved_layers: 0.5, best_round: 1 },
            SweepRecord { alpha: 0.0, seed: 1, accuracy: 0.9, mean_exit_layer: 10.0, saved_layers: 0.1, best_round: 1 },
            SweepRecord { alpha: 0.02, seed: 2, accuracy: 0.6, mean_exit_layer: 4.0, saved_layers: 0.7, best_round: 2 },
        ];
        let avg = average_by_alpha(&records);
        assert_eq!(avg.len(), 2);
        assert_eq!(avg[0].0, 0.0);
        assert!((avg[1].1 - 0.7).abs() < 1e-12);
        assert!((avg[1].2 - 0.6).abs() < 1e-12);
    }
}
