//! How queries and documents are presented to a model: by index (tabular
//! parameterizations) or by feature vector (encoder parameterizations).

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::numerics::{Matrix, RandomStream};
use crate::world::{sample_training_pairs, Corpus, GroundTruthPosterior, TrainingPair};

/// A single query or document reference.
#[derive(Debug, Clone, Copy)]
pub enum Item<'a> {
    Index(usize),
    Features(&'a [f64]),
}

/// A collection of items addressed `0..len()`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Inputs {
    /// Items are plain indices `0..n`.
    Indexed(usize),
    /// Row `i` is the feature vector of item `i`.
    Features(Matrix),
}

impl Inputs {
    pub fn len(&self) -> usize {
        match self {
            Inputs::Indexed(n) => *n,
            Inputs::Features(m) => m.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn item(&self, i: usize) -> Item<'_> {
        match self {
            Inputs::Indexed(_) => Item::Index(i),
            Inputs::Features(m) => Item::Features(m.row(i)),
        }
    }

    /// First `n` items.
    pub fn truncate(&self, n: usize) -> Inputs {
        match self {
            Inputs::Indexed(k) => Inputs::Indexed(n.min(*k)),
            Inputs::Features(m) => Inputs::Features(m.top_rows(n)),
        }
    }
}

/// Queries, documents and the observed relevance pairs a model trains on.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub queries: Inputs,
    pub docs: Inputs,
    pub pairs: Vec<TrainingPair>,
}

impl TrainingData {
    pub fn new(queries: Inputs, docs: Inputs, pairs: Vec<TrainingPair>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(LabError::domain("training data needs at least one pair"));
        }
        if let Some(p) = pairs
            .iter()
            .find(|p| p.query >= queries.len() || p.positive >= docs.len())
        {
            return Err(LabError::domain(format!(
                "pair ({}, {}) out of range for {} queries / {} docs",
                p.query,
                p.positive,
                queries.len(),
                docs.len()
            )));
        }
        Ok(Self {
            queries,
            docs,
            pairs,
        })
    }

    /// `n` pairs sampled from a synthetic world, with the given item presentation.
    pub fn from_world(
        world: &GroundTruthPosterior,
        queries: Inputs,
        docs: Inputs,
        n: usize,
        stream: &RandomStream,
    ) -> Result<Self> {
        if queries.len() != world.num_queries() || docs.len() != world.num_docs() {
            return Err(LabError::domain("inputs do not match world dimensions"));
        }
        Self::new(queries, docs, sample_training_pairs(world, n, stream))
    }

    /// Every `(query, gold)` pair of a text corpus, presented by features.
    pub fn from_corpus(corpus: &Corpus) -> Result<Self> {
        let pairs = corpus
            .query_gold
            .iter()
            .enumerate()
            .map(|(query, &positive)| TrainingPair { query, positive })
            .collect();
        Self::new(
            Inputs::Features(corpus.queries.clone()),
            Inputs::Features(corpus.docs.clone()),
            pairs,
        )
    }

    pub fn num_queries(&self) -> usize {
        self.queries.len()
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }
}
