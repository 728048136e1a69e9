//! The layered backbone with a classifier head and an exit-policy head at
//! every layer.
//!
//! Layer states follow `s_1 = block_1(embed(x))`, `s_t = block_t(s_{t-1})`
//! where each block is a residual feed-forward `s + W2 relu(W1 s)`. The
//! classifier at layer `t` is an affine map over classes; the policy head is
//! a two-layer MLP over the two exit actions. Parameters split into the
//! policy group (all policy heads) and the task group (embed, blocks,
//! classifiers); the groups are disjoint and jointly exhaustive.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::NodeId;
use crate::numeric::{
    affine_apply, matvec_apply, relu, softmax, GradientHost, ParamId, ParamStore, Rng, Tape,
};

/// Logit index of the Exit action in a policy head's output.
pub const EXIT_INDEX: usize = 0;
/// Logit index of the Continue action.
pub const CONTINUE_INDEX: usize = 1;

/// Initial bias on the Exit logit. Starts every policy head near
/// p_exit = sigmoid(-2.2), about 0.1, so training does not collapse into
/// exit-at-layer-1 before exploring.
pub const EXIT_BIAS_INIT: f64 = -2.2;

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub num_layers: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub policy_hidden_dim: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            num_layers: 12,
            input_dim: 16,
            hidden_dim: 32,
            num_classes: 2,
            policy_hidden_dim: 16,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers < 2 {
            return Err(Error::Config(format!(
                "num_layers must be >= 2, got {}",
                self.num_layers
            )));
        }
        if self.input_dim == 0 || self.hidden_dim == 0 || self.policy_hidden_dim == 0 {
            return Err(Error::Config("all dims must be >= 1".to_string()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct AffineIds {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct BlockIds {
    w1: ParamId,
    w2: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct PolicyIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
pub struct ModelBundle {
    config: BackboneConfig,
    store: ParamStore,
    embed: AffineIds,
    blocks: Vec<BlockIds>,
    classifiers: Vec<AffineIds>,
    policies: Vec<PolicyIds>,
}

impl ModelBundle {
    /// Build a fully initialized bundle. Same seed, same parameters.
    pub fn build(config: &BackboneConfig, rng: &Rng) -> Result<ModelBundle> {
        config.validate()?;
        let mut init = rng.substream("model-init");
        let mut store = ParamStore::new();
        let (l, d, h, c, ph) = (
            config.num_layers,
            config.input_dim,
            config.hidden_dim,
            config.num_classes,
            config.policy_hidden_dim,
        );

        let embed = AffineIds {
            w: store.add_uniform("embed.w", h, d, &mut init),
            b: store.add_zeros("embed.b", h, 1),
        };
        let blocks = (1..=l)
            .map(|t| BlockIds {
                w1: store.add_uniform(&format!("block{t}.w1"), h, h, &mut init),
                w2: store.add_uniform(&format!("block{t}.w2"), h, h, &mut init),
            })
            .collect();
        let classifiers = (1..=l)
            .map(|t| AffineIds {
                w: store.add_uniform(&format!("clf{t}.w"), c, h, &mut init),
                b: store.add_zeros(&format!("clf{t}.b"), c, 1),
            })
            .collect();
        // The policy output layer starts at zero weights with a biased Exit
        // logit, so p_exit is exactly sigmoid(EXIT_BIAS_INIT) for every input.
        let policies = (1..=l)
            .map(|t| {
                let w1 = store.add_uniform(&format!("policy{t}.w1"), ph, h, &mut init);
                let b1 = store.add_zeros(&format!("policy{t}.b1"), ph, 1);
                let w2 = store.add_zeros(&format!("policy{t}.w2"), 2, ph);
                let b2 = store
                    .add_values(&format!("policy{t}.b2"), 2, 1, vec![EXIT_BIAS_INIT, 0.0])
                    .expect("shape is static");
                PolicyIds { w1, b1, w2, b2 }
            })
            .collect();

        Ok(ModelBundle {
            config: config.clone(),
            store,
            embed,
            blocks,
            classifiers,
            policies,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn num_layers(&self) -> usize {
        self.config.num_layers
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Policy-group parameter ids (every policy head).
    pub fn theta_ids(&self) -> Vec<ParamId> {
        self.policies
            .iter()
            .flat_map(|p| [p.w1, p.b1, p.w2, p.b2])
            .collect()
    }

    /// Task-group parameter ids (embed, blocks, classifiers).
    pub fn omega_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.embed.w, self.embed.b];
        ids.extend(self.blocks.iter().flat_map(|b| [b.w1, b.w2]));
        ids.extend(self.classifiers.iter().flat_map(|c| [c.w, c.b]));
        ids
    }

    /// The (policy, task) partition of all parameters.
    pub fn param_groups(&self) -> (Vec<ParamId>, Vec<ParamId>) {
        (self.theta_ids(), self.omega_ids())
    }

    fn check_layer(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.config.num_layers {
            return Err(Error::Usage(format!(
                "layer {t} out of range 1..={}",
                self.config.num_layers
            )));
        }
        Ok(())
    }

    fn check_features(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.input_dim {
            return Err(Error::Data(format!(
                "feature dim {} does not match input_dim {}",
                x.len(),
                self.config.input_dim
            )));
        }
        Ok(())
    }

    /// Projection of the raw features into the hidden space (before block 1).
    pub fn embed_out(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_features(x)?;
        affine_apply(self.store.get(self.embed.w), self.store.get(self.embed.b), x)
    }

    /// Apply block `t` to the previous state: s + W2 relu(W1 s).
    pub fn next_state(&self, t: usize, prev: &[f64]) -> Result<Vec<f64>> {
        self.check_layer(t)?;
        let block = &self.blocks[t - 1];
        let h = matvec_apply(self.store.get(block.w1), prev)?;
        let r = relu(&h);
        let u = matvec_apply(self.store.get(block.w2), &r)?;
        Ok(prev.iter().zip(&u).map(|(a, b)| a + b).collect())
    }

    /// States s_1..s_upto.
    pub fn forward_states(&self, x: &[f64], upto: usize) -> Result<Vec<Vec<f64>>> {
        self.check_layer(upto)?;
        let mut s = self.embed_out(x)?;
        let mut states = Vec::with_capacity(upto);
        for t in 1..=upto {
            s = self.next_state(t, &s)?;
            states.push(s.clone());
        }
        Ok(states)
    }

    /// Class distribution from the layer-`t` classifier.
    pub fn classify(&self, t: usize, state: &[f64]) -> Result<Vec<f64>> {
        self.check_layer(t)?;
        let head = &self.classifiers[t - 1];
        let logits = affine_apply(self.store.get(head.w), self.store.get(head.b), state)?;
        softmax(&logits)
    }

    fn policy_logits(&self, t: usize, state: &[f64]) -> Result<Vec<f64>> {
        self.check_layer(t)?;
        let head = &self.policies[t - 1];
        let h = affine_apply(self.store.get(head.w1), self.store.get(head.b1), state)?;
        let r = relu(&h);
        affine_apply(self.store.get(head.w2), self.store.get(head.b2), &r)
    }

    /// Probability of the Exit action at layer `t`.
    pub fn policy_exit_prob(&self, t: usize, state: &[f64]) -> Result<f64> {
        let probs = softmax(&self.policy_logits(t, state)?)?;
        Ok(probs[EXIT_INDEX])
    }

    // --- tape variants; same kernels, so values match the pure path bit for bit ---

    /// Record states s_1..s_upto on the tape.
    pub fn tape_states(&self, tape: &mut Tape, x: &[f64], upto: usize) -> Result<Vec<NodeId>> {
        self.check_layer(upto)?;
        self.check_features(x)?;
        let input = tape.input(x);
        let mut s = tape.affine(&self.store, self.embed.w, self.embed.b, input)?;
        let mut states = Vec::with_capacity(upto);
        for t in 1..=upto {
            let block = &self.blocks[t - 1];
            let h = tape.matvec(&self.store, block.w1, s)?;
            let r = tape.relu(h);
            let u = tape.matvec(&self.store, block.w2, r)?;
            s = tape.add(s, u)?;
            states.push(s);
        }
        Ok(states)
    }

    /// Record the layer-`t` classifier logits for a state node.
    pub fn tape_classifier_logits(&self, tape: &mut Tape, t: usize, state: NodeId) -> Result<NodeId> {
        self.check_layer(t)?;
        let head = &self.classifiers[t - 1];
        tape.affine(&self.store, head.w, head.b, state)
    }

    /// Record the layer-`t` policy logits. With `detach`, the state enters as
    /// a constant so no gradient reaches the backbone through the policy.
    pub fn tape_policy_logits(
        &self,
        tape: &mut Tape,
        t: usize,
        state: NodeId,
        detach: bool,
    ) -> Result<NodeId> {
        self.check_layer(t)?;
        let input = if detach {
            let values = tape.value(state).to_vec();
            tape.input(&values)
        } else {
            state
        };
        let head = &self.policies[t - 1];
        let h = tape.affine(&self.store, head.w1, head.b1, input)?;
        let r = tape.relu(h);
        tape.affine(&self.store, head.w2, head.b2, r)
    }

    // --- checkpointing ---

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            params: self
                .store
                .ids()
                .map(|id| {
                    let p = self.store.get(id);
                    SavedParam {
                        label: p.label.clone(),
                        rows: p.rows,
                        cols: p.cols,
                        values: p.values.clone(),
                    }
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<ModelBundle> {
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {}",
                ck.format_version
            )));
        }
        let mut bundle = ModelBundle::build(&ck.config, &Rng::new(0))?;
        if ck.params.len() != bundle.store.param_count() {
            return Err(Error::Config(format!(
                "checkpoint has {} parameters, model needs {}",
                ck.params.len(),
                bundle.store.param_count()
            )));
        }
        let ids: Vec<_> = bundle.store.ids().collect();
        for (&id, saved) in ids.iter().zip(&ck.params) {
            let p = bundle.store.get_mut(id);
            if p.label != saved.label || p.rows != saved.rows || p.cols != saved.cols {
                return Err(Error::Config(format!(
                    "checkpoint parameter {} ({}x{}) does not match model parameter {} ({}x{})",
                    saved.label, saved.rows, saved.cols, p.label, p.rows, p.cols
                )));
            }
            p.values.clone_from(&saved.values);
        }
        Ok(bundle)
    }
}

impl GradientHost for ModelBundle {
    fn param_store(&self) -> &ParamStore {
        &self.store
    }

    fn param_store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SavedParam {
    pub label: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

/// Serializable snapshot of config plus every parameter array. JSON
/// round-trips are bit-exact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: BackboneConfig,
    pub params: Vec<SavedParam>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Data(format!("checkpoint encode: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Checkpoint> {
        serde_json::from_str(text).map_err(|e| Error::Data(format!("checkpoint decode: {e}")))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path)?;
        Checkpoint::from_json(&text)
    }
}
