//! Instance hardness: memorized layer, forgetting events, rank correlation,
//! and per-layer loss/accuracy profiles.
//!
//! The memorized layer of an instance is the earliest layer from which every
//! classifier up to the final one predicts it correctly; an instance the
//! final classifier gets wrong is assigned the last layer. Small values mean
//! easy instances.

use std::collections::BTreeMap;

use crate::data::{Dataset, Instance};
use crate::error::{Error, Result};
use crate::model::ModelBundle;
use crate::numeric::cross_entropy;

/// Argmax with ties broken toward the lowest class index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Per-layer correctness bits: entry `t-1` is true iff the layer-`t`
/// classifier's argmax equals the label.
pub fn correctness(m: &ModelBundle, inst: &Instance) -> Result<Vec<bool>> {
    let states = m.forward_states(&inst.features, m.num_layers())?;
    states
        .iter()
        .enumerate()
        .map(|(i, s)| Ok(argmax(&m.classify(i + 1, s)?) == inst.label))
        .collect()
}

/// Earliest layer `k` such that every layer from `k` through the last is
/// correct; the last layer when no such `k` exists.
pub fn memorized_layer(bits: &[bool]) -> Result<usize> {
    if bits.is_empty() {
        return Err(Error::Usage("memorized_layer: empty correctness vector".to_string()));
    }
    let l = bits.len();
    let mut m = l;
    for i in (0..l).rev() {
        if bits[i] {
            m = i + 1;
        } else {
            break;
        }
    }
    Ok(m)
}

/// Count of correct-to-incorrect transitions across a per-epoch history.
pub fn forgetting_events(history: &[bool]) -> usize {
    history
        .windows(2)
        .filter(|w| w[0] && !w[1])
        .count()
}

/// Per-instance memorized layers, keyed by instance id.
#[derive(Debug, Clone)]
pub struct MemorizedLayerTable {
    entries: BTreeMap<usize, usize>,
    num_layers: usize,
}

impl MemorizedLayerTable {
    pub fn new(num_layers: usize) -> Self {
        MemorizedLayerTable {
            entries: BTreeMap::new(),
            num_layers,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn insert(&mut self, id: usize, m: usize) -> Result<()> {
        if m == 0 || m > self.num_layers {
            return Err(Error::Usage(format!(
                "memorized layer {m} outside 1..={}",
                self.num_layers
            )));
        }
        self.entries.insert(id, m);
        Ok(())
    }

    pub fn get(&self, id: usize) -> Option<usize> {
        self.entries.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.entries.iter().map(|(&id, &m)| (id, m))
    }

    /// Counts per layer, index `t-1` for layer `t`.
    pub fn histogram(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_layers];
        for (_, m) in self.iter() {
            counts[m - 1] += 1;
        }
        counts
    }
}

/// Average ranks, ties assigned the mean rank of their run.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j are tied; 1-based mean rank
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mean_rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. `NoVariance` when
/// either side has constant ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Usage(format!(
            "spearman: lengths {} and {} (need equal, >= 2)",
            xs.len(),
            ys.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("spearman: non-finite input".to_string()));
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::NoVariance);
    }
    Ok(cov / (vx * vy).sqrt())
}

/// Mean loss and accuracy of each layer's classifier over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStat {
    pub mean_loss: f64,
    pub accuracy: f64,
}

pub fn layer_profile(m: &ModelBundle, data: &Dataset) -> Result<Vec<LayerStat>> {
    if data.is_empty() {
        return Err(Error::Data("layer_profile: empty dataset".to_string()));
    }
    let l = m.num_layers();
    let mut loss_sums = vec![0.0; l];
    let mut correct = vec![0usize; l];
    for inst in &data.instances {
        let states = m.forward_states(&inst.features, l)?;
        for (i, s) in states.iter().enumerate() {
            let probs = m.classify(i + 1, s)?;
            loss_sums[i] += cross_entropy(inst.label, &probs)?;
            if argmax(&probs) == inst.label {
                correct[i] += 1;
            }
        }
    }
    let n = data.len() as f64;
    Ok((0..l)
        .map(|i| LayerStat {
            mean_loss: loss_sums[i] / n,
            accuracy: correct[i] as f64 / n,
        })
        .collect())
}

/// One row of the hardness report.
#[derive(Debug, Clone)]
pub struct HardnessRow {
    pub id: usize,
    pub memorized_layer: usize,
    pub final_layer_loss: f64,
    pub forgetting_events: usize,
}

/// Hardness measurements with their agreement statistics. A `None`
/// correlation means the statistic was undefined (zero rank variance).
#[derive(Debug, Clone)]
pub struct HardnessReport {
    pub rows: Vec<HardnessRow>,
    /// Spearman between memorized layer and final-layer loss.
    pub spearman_loss: Option<f64>,
    /// Spearman between memorized layer and forgetting events.
    pub spearman_forgetting: Option<f64>,
}

/// Assemble the hardness report for a trained model.
///
/// `forgetting`: per-instance counts aligned with `data.instances` (from the
/// initialization-stage epoch history).
pub fn hardness_report(
    m: &ModelBundle,
    data: &Dataset,
    forgetting: &[usize],
) -> Result<HardnessReport> {
    if forgetting.len() != data.len() {
        return Err(Error::Usage(format!(
            "hardness_report: {} forgetting counts for {} instances",
            forgetting.len(),
            data.len()
        )));
    }
    let l = m.num_layers();
    let mut rows = Vec::with_capacity(data.len());
    for (inst, &forgot) in data.instances.iter().zip(forgetting) {
        let bits = correctness(m, inst)?;
        let ml = memorized_layer(&bits)?;
        let states = m.forward_states(&inst.features, l)?;
        let probs = m.classify(l, &states[l - 1])?;
        rows.push(HardnessRow {
            id: inst.id,
            memorized_layer: ml,
            final_layer_loss: cross_entropy(inst.label, &probs)?,
            forgetting_events: forgot,
        });
    }
    let ms: Vec<f64> = rows.iter().map(|r| r.memorized_layer as f64).collect();
    let losses: Vec<f64> = rows.iter().map(|r| r.final_layer_loss).collect();
    let forgets: Vec<f64> = rows.iter().map(|r| r.forgetting_events as f64).collect();
    let correlation = |xs: &[f64], ys: &[f64]| match spearman(xs, ys) {
        Ok(rho) => Ok(Some(rho)),
        Err(Error::NoVariance) => Ok(None),
        Err(other) => Err(other),
    };
    Ok(HardnessReport {
        spearman_loss: correlation(&ms, &losses)?,
        spearman_forgetting: correlation(&ms, &forgets)?,
        rows,
    })
}
