//! Generative retrieval: trie-factored docid decoders, their exact constructor, training and
//! prefix-constrained beam search.

mod beam;
mod model;

pub use beam::{constrained_beam_search, BeamHit, BeamHypothesis, BeamOutput};
pub use model::{
    construct_exact_trie_model, gr_nll_loss, leaf_posterior, node_conditional, GrConfig, GrModel,
    GrParamKind, LEAF_TOKEN_BUDGET, ZERO_MASS_LOGIT,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::docid::Trie;
use crate::error::{LabError, Result};
use crate::inputs::{Inputs, TrainingData};
use crate::numerics::{Gradients, Parameterized, RandomStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrTrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub log_every: usize,
}

impl Default for GrTrainConfig {
    fn default() -> Self {
        GrTrainConfig {
            steps: 2000,
            learning_rate: 0.5,
            batch_size: 16,
            log_every: 100,
        }
    }
}

/// Initializes a model over `trie` and trains it on `data`; see [`train_gr_from`].
pub fn train_gr(
    data: &TrainingData,
    trie: Trie,
    model_config: &GrConfig,
    train: &GrTrainConfig,
    stream: &RandomStream,
) -> Result<(GrModel, Vec<f64>)> {
    if trie.num_leaves() != data.num_docs() {
        return Err(LabError::domain(format!(
            "trie has {} leaves for {} documents",
            trie.num_leaves(),
            data.num_docs()
        )));
    }
    let feature_dim = match &data.queries {
        Inputs::Features(m) => m.cols(),
        Inputs::Indexed(_) => 0,
    };
    let model = GrModel::new(
        model_config,
        trie,
        data.num_queries(),
        feature_dim,
        &stream.derive(0),
    )?;
    train_gr_from(model, data, train, stream)
}

/// SGD on the summed token NLL over uniformly drawn training pairs. Deterministic given `stream`.
pub fn train_gr_from(
    mut model: GrModel,
    data: &TrainingData,
    train: &GrTrainConfig,
    stream: &RandomStream,
) -> Result<(GrModel, Vec<f64>)> {
    if train.batch_size == 0 || train.log_every == 0 {
        return Err(LabError::domain(
            "batch_size and log_every must be positive",
        ));
    }
    if !(train.learning_rate >= 0.0) {
        return Err(LabError::domain("learning rate must be non-negative"));
    }
    let mut rng = stream.derive(1).rng();
    let mut history = Vec::new();
    let mut window = 0.0;
    for step in 0..train.steps {
        let mut step_grads = Gradients::new();
        let mut step_loss = 0.0;
        for _ in 0..train.batch_size {
            let pair = data.pairs[rng.random_range(0..data.pairs.len())];
            let (loss, grads) = model.nll_loss(data.queries.item(pair.query), pair.positive)?;
            step_loss += loss;
            step_grads.extend(grads);
        }
        let step_loss = step_loss / train.batch_size as f64;
        if !step_loss.is_finite() {
            return Err(LabError::Diverged {
                step,
                loss: step_loss,
            });
        }
        step_grads.scale(1.0 / train.batch_size as f64);
        model.apply_sgd(&step_grads, train.learning_rate);
        window += step_loss;
        if (step + 1) % train.log_every == 0 {
            history.push(window / train.log_every as f64);
            window = 0.0;
        }
    }
    if !model.parameters_finite() {
        return Err(LabError::Diverged {
            step: train.steps,
            loss: f64::NAN,
        });
    }
    Ok((model, history))
}
