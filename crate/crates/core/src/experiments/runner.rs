//! World construction, training and evaluation for one configuration point.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{GrParamName, Paradigm, PolicyName, RunConfig, WorldKind};
use crate::dense::{
    full_softmax, rank_by_score, train_dr_from, DrConfig, DrModel, DrTrainConfig, NegativePolicy,
    ProjectionInit,
};
use crate::docid::{build_trie, codebook_docids, text_docids, DocidSpace};
use crate::error::{LabError, Result};
use crate::eval::{kl_divergence, summarize, MetricSummary, RankedQuery, RankedRun};
use crate::gr::{
    constrained_beam_search, train_gr_from, GrConfig, GrModel, GrParamKind, GrTrainConfig,
};
use crate::inputs::{Inputs, TrainingData};
use crate::numerics::{Matrix, Parameterized, RandomStream};
use crate::world::{
    ingest_tsv, make_featurized_world, make_spectral_world, one_hot_features,
    sample_training_pairs, GroundTruthPosterior, TrainingPair,
};

const WORLD: u64 = 1;
const TRAIN_PAIRS: u64 = 2;
const EVAL_PAIRS: u64 = 3;
const MODEL: u64 = 4;
const DOCIDS: u64 = 5;

/// Characters of a TSV document used as its text-mode docid title.
pub const TITLE_CHARS: usize = 32;

pub fn root_stream(config: &RunConfig) -> RandomStream {
    RandomStream::new(config.seed, 0)
}

/// Everything a run needs to know about its documents and queries.
#[derive(Debug, Clone)]
pub struct LabWorld {
    /// Ground truth over the documents pairs are drawn from; `None` for text corpora.
    pub posterior: Option<GroundTruthPosterior>,
    pub queries: Inputs,
    /// Every candidate document; may extend past the ground-truth documents.
    pub docs: Inputs,
    pub doc_titles: Vec<String>,
    /// Vectors quantized into codebook docids.
    pub doc_vectors: Matrix,
    pub train_pairs: Vec<TrainingPair>,
    pub eval_pairs: Vec<TrainingPair>,
}

impl LabWorld {
    pub fn num_queries(&self) -> usize {
        self.queries.len()
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn training_data(&self) -> Result<TrainingData> {
        TrainingData::new(
            self.queries.clone(),
            self.docs.clone(),
            self.train_pairs.clone(),
        )
    }
}

/// World of `config.N` documents as configured.
pub fn build_world(config: &RunConfig) -> Result<LabWorld> {
    build_world_with_pool(config, config.n, config.n)
}

/// Synthetic world with `pool` candidate documents whose pairs only involve the first `base`.
pub fn build_world_with_pool(config: &RunConfig, base: usize, pool: usize) -> Result<LabWorld> {
    let root = root_stream(config);
    let (full, queries, docs, doc_vectors) = match config.world {
        WorldKind::Spectral => {
            let w = make_spectral_world(config.m, pool, &config.spectrum, &root.derive(WORLD))?;
            let vectors = w.logits().transpose();
            (w, Inputs::Indexed(config.m), Inputs::Indexed(pool), vectors)
        }
        WorldKind::Featurized => {
            let (w, q, d) = make_featurized_world(
                config.m,
                pool,
                config.feature_dim,
                config.strength,
                &root.derive(WORLD),
            )?;
            (w, Inputs::Features(q), Inputs::Features(d.clone()), d)
        }
        WorldKind::Tsv => return build_corpus_world(config),
    };
    let posterior = if base == pool {
        full
    } else {
        full.restrict_to_first(base)?
    };
    Ok(LabWorld {
        train_pairs: sample_training_pairs(
            &posterior,
            config.train_pairs,
            &root.derive(TRAIN_PAIRS),
        ),
        eval_pairs: sample_training_pairs(
            &posterior,
            config.eval_queries,
            &root.derive(EVAL_PAIRS),
        ),
        posterior: Some(posterior),
        queries,
        docs,
        doc_titles: (0..pool).map(|j| format!("doc-{j}")).collect(),
        doc_vectors,
    })
}

fn build_corpus_world(config: &RunConfig) -> Result<LabWorld> {
    let docs_path = config.docs_tsv.as_ref().expect("validated");
    let queries_path = config.queries_tsv.as_ref().expect("validated");
    let mut corpus = ingest_tsv(docs_path, config.feature_dim, config.ngram_max)?;
    corpus.attach_queries(queries_path)?;
    let pairs: Vec<TrainingPair> = corpus
        .query_gold
        .iter()
        .enumerate()
        .map(|(query, &positive)| TrainingPair { query, positive })
        .collect();
    if pairs.is_empty() {
        return Err(LabError::Config {
            key: "queries_tsv".into(),
            message: "no queries".into(),
        });
    }
    Ok(LabWorld {
        posterior: None,
        queries: Inputs::Features(corpus.queries.clone()),
        docs: Inputs::Features(corpus.docs.clone()),
        doc_titles: corpus
            .doc_texts
            .iter()
            .map(|t| t.chars().take(TITLE_CHARS).collect())
            .collect(),
        doc_vectors: corpus.docs.clone(),
        train_pairs: pairs.clone(),
        eval_pairs: pairs,
    })
}

/// Query presentation for the configured GR parameterization.
pub fn gr_queries(config: &RunConfig, world: &LabWorld) -> Inputs {
    match (config.gr_param, &world.queries) {
        (GrParamName::Tabular, q) => Inputs::Indexed(q.len()),
        (GrParamName::Featurized, Inputs::Features(f)) => Inputs::Features(f.clone()),
        (GrParamName::Featurized, Inputs::Indexed(m)) => Inputs::Features(one_hot_features(*m)),
    }
}

pub fn build_docids(
    config: &RunConfig,
    paradigm: Paradigm,
    world: &LabWorld,
) -> Result<(DocidSpace, Vec<String>)> {
    match paradigm {
        Paradigm::GrText => Ok((text_docids(&world.doc_titles)?, Vec::new())),
        _ => {
            let (codebook, space) = codebook_docids(
                &world.doc_vectors,
                config.rq_stages,
                config.rq_base,
                config.rq_iters,
                &root_stream(config).derive(DOCIDS),
            )?;
            Ok((space, codebook.warnings().to_vec()))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "paradigm", rename_all = "snake_case")]
pub enum TrainedModel {
    Dense {
        model: DrModel,
    },
    Generative {
        model: GrModel,
        docids: serde_json::Value,
    },
}

impl TrainedModel {
    pub fn num_parameters(&self) -> usize {
        match self {
            TrainedModel::Dense { model } => model.num_parameters(),
            TrainedModel::Generative { model, .. } => model.num_parameters(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trained {
    pub model: TrainedModel,
    /// Windowed mean training loss.
    pub history: Vec<f64>,
    pub warnings: Vec<String>,
}

fn log_every(steps: usize) -> usize {
    (steps / 20).max(1)
}

pub fn dr_model_config(config: &RunConfig, paradigm: Paradigm) -> DrConfig {
    DrConfig {
        dim: config.r,
        channels: if paradigm == Paradigm::Mvdr {
            config.channels
        } else {
            1
        },
        temperature: config.tau,
        init_scale: config.init_scale,
    }
}

pub fn dr_train_config(config: &RunConfig) -> Result<DrTrainConfig> {
    let policy = match config.policy {
        PolicyName::Uniform => NegativePolicy::uniform(),
        PolicyName::Hard => NegativePolicy::hard(config.hard_ratio, config.hard_pool_size)?,
    };
    Ok(DrTrainConfig {
        steps: config.steps,
        learning_rate: config.learning_rate,
        batch_size: config.batch_size,
        num_candidates: config.k,
        policy,
        log_every: log_every(config.steps),
        hard_refresh_every: 100,
    })
}

pub fn gr_model_config(config: &RunConfig) -> GrConfig {
    GrConfig {
        param: match config.gr_param {
            GrParamName::Tabular => GrParamKind::Tabular,
            GrParamName::Featurized => GrParamKind::Featurized {
                hidden_width: config.hidden_width,
            },
        },
        init_scale: config.init_scale,
    }
}

/// Trains the configured paradigm on the world's training pairs.
pub fn train_model(config: &RunConfig, paradigm: Paradigm, world: &LabWorld) -> Result<Trained> {
    let stream = root_stream(config).derive(MODEL);
    if paradigm.is_generative() {
        let (space, warnings) = build_docids(config, paradigm, world)?;
        let trie = build_trie(&space)?;
        let queries = gr_queries(config, world);
        let feature_dim = match &queries {
            Inputs::Features(f) => f.cols(),
            Inputs::Indexed(_) => 0,
        };
        let model = GrModel::new(
            &gr_model_config(config),
            trie,
            queries.len(),
            feature_dim,
            &stream.derive(0),
        )?;
        let data = TrainingData::new(
            queries,
            Inputs::Indexed(world.num_docs()),
            world.train_pairs.clone(),
        )?;
        let train = GrTrainConfig {
            steps: config.steps,
            learning_rate: config.gr_learning_rate,
            batch_size: config.batch_size,
            log_every: log_every(config.steps),
        };
        let (model, history) = train_gr_from(model, &data, &train, &stream)?;
        Ok(Trained {
            model: TrainedModel::Generative {
                model,
                docids: space.to_json(&world.doc_titles)?,
            },
            history,
            warnings,
        })
    } else {
        let data = world.training_data()?;
        let mut model = DrModel::new(
            &dr_model_config(config, paradigm),
            &data.queries,
            &data.docs,
            &stream.derive(0),
        )?;
        if let Some(p) = config.projection_dim {
            let init = if p == config.r {
                ProjectionInit::Identity
            } else {
                ProjectionInit::Random(stream.derive(7))
            };
            model = model.project_embeddings(p, init)?;
        }
        let (model, history) = train_dr_from(model, &data, &dr_train_config(config)?, &stream)?;
        Ok(Trained {
            model: TrainedModel::Dense { model },
            history,
            warnings: Vec::new(),
        })
    }
}

/// Metrics of one trained model against one candidate pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub pool_size: usize,
    pub metrics: MetricSummary,
    /// Mean `KL(P⋆ ‖ P_model)` over queries, when pool, world and ground truth share one support.
    pub kl: Option<f64>,
    pub parameters: usize,
    pub final_loss: Option<f64>,
    pub warnings: Vec<String>,
}

impl Evaluation {
    /// Flat `(column, value)` view used for metric tables; unavailable metrics are omitted.
    pub fn columns(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for (i, k) in self.metrics.ks.iter().enumerate() {
            out.push((format!("hits@{k}"), self.metrics.hits[i]));
            out.push((format!("ndcg@{k}"), self.metrics.ndcg[i]));
            out.push((format!("mrr@{k}"), self.metrics.mrr[i]));
        }
        if let Some(b) = self.metrics.brier {
            out.push(("brier".into(), b));
        }
        if let Some(kl) = self.kl {
            out.push(("kl".into(), kl));
        }
        out.push(("params".into(), self.parameters as f64));
        if let Some(l) = self.final_loss {
            out.push(("final_loss".into(), l));
        }
        out
    }
}

/// Evaluates against the first `pool` documents of the world.
/// Per-query ranked docs with their predicted probabilities.
type RankedByQuery = BTreeMap<usize, (Vec<usize>, Vec<f64>)>;

pub fn evaluate(
    config: &RunConfig,
    world: &LabWorld,
    trained: &Trained,
    pool: usize,
) -> Result<Evaluation> {
    if pool == 0 || pool > world.num_docs() {
        return Err(LabError::domain(format!(
            "pool {pool} outside 1..={}",
            world.num_docs()
        )));
    }
    let kmax = *config.k_list.iter().max().expect("validated");
    let mut warnings = Vec::new();
    let queries_used: Vec<usize> = {
        let mut q: Vec<usize> = world.eval_pairs.iter().map(|p| p.query).collect();
        q.sort_unstable();
        q.dedup();
        q
    };
    let ground_truth = world
        .posterior
        .as_ref()
        .filter(|p| p.num_docs() == pool && pool == world.num_docs());
    let (ranked, kl): (RankedByQuery, Option<f64>) = match &trained.model {
        TrainedModel::Dense { model } => {
            let docs = world.docs.truncate(pool);
            let scores = model.score_matrix(&world.queries, &docs)?;
            let probs = full_softmax(&scores, model.temperature());
            let take = kmax.min(pool);
            if kmax > pool {
                warnings.push(format!("k = {kmax} clamped to N = {pool}"));
            }
            let ranked = queries_used
                .iter()
                .map(|&q| {
                    let order: Vec<usize> = rank_by_score(scores.row(q))
                        .into_iter()
                        .take(take)
                        .collect();
                    let p = order
                        .iter()
                        .map(|&d| probs[(q, d)].clamp(0.0, 1.0))
                        .collect();
                    (q, (order, p))
                })
                .collect();
            let kl = ground_truth
                .map(|gt| mean_kl(gt, |q| Ok(probs.row(q).to_vec())))
                .transpose()?;
            (ranked, kl)
        }
        TrainedModel::Generative { model, .. } => {
            let queries = gr_queries(config, world);
            let active: Option<Vec<bool>> = (pool < world.num_docs())
                .then(|| (0..world.num_docs()).map(|d| d < pool).collect());
            let mut ranked = BTreeMap::new();
            for &q in &queries_used {
                let out = constrained_beam_search(
                    model,
                    queries.item(q),
                    config.beam_width,
                    kmax,
                    active.as_deref(),
                )?;
                if let Some(w) = out.warning {
                    if !warnings.contains(&w) {
                        warnings.push(w);
                    }
                }
                let docs = out.hits.iter().map(|h| h.doc).collect();
                let p = out
                    .hits
                    .iter()
                    .map(|h| h.probability.clamp(0.0, 1.0))
                    .collect();
                ranked.insert(q, (docs, p));
            }
            let kl = match ground_truth {
                Some(gt) => match mean_kl(gt, |q| model.leaf_posterior(queries.item(q))) {
                    Ok(v) => Some(v),
                    Err(LabError::Budget(msg)) => {
                        warnings.push(msg);
                        None
                    }
                    Err(e) => return Err(e),
                },
                None => None,
            };
            (ranked, kl)
        }
    };
    let run = RankedRun::new(
        world
            .eval_pairs
            .iter()
            .map(|p| {
                let (docs, probs) = ranked[&p.query].clone();
                RankedQuery {
                    docs,
                    probabilities: Some(probs),
                    gold: p.positive,
                }
            })
            .collect(),
    )?;
    Ok(Evaluation {
        pool_size: pool,
        metrics: summarize(&run, &config.k_list)?,
        kl,
        parameters: trained.model.num_parameters(),
        final_loss: trained.history.last().copied(),
        warnings,
    })
}

fn mean_kl(
    world: &GroundTruthPosterior,
    model_row: impl Fn(usize) -> Result<Vec<f64>>,
) -> Result<f64> {
    let m = world.num_queries();
    let mut total = 0.0;
    for q in 0..m {
        total += kl_divergence(world.row(q), &model_row(q)?)?;
    }
    Ok(total / m as f64)
}
