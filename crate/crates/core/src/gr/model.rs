use serde::{Deserialize, Serialize};

use crate::docid::{NodeId, Trie};
use crate::error::{LabError, Result};
use crate::inputs::Item;
use crate::numerics::{
    axpy, dot, logsumexp_unchecked, Gradients, Matrix, Parameterized, RandomStream,
};
use crate::world::GroundTruthPosterior;

/// Logit assigned to zero-mass children by the exact constructor.
pub const ZERO_MASS_LOGIT: f64 = -1e4;

/// Leaf-token budget for exhaustive posterior enumeration.
pub const LEAF_TOKEN_BUDGET: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GrParamKind {
    /// One logit per (interior node, query, child).
    Tabular,
    /// Shared query map (optionally one ReLU layer) followed by per-node linear heads.
    Featurized { hidden_width: Option<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrConfig {
    pub param: GrParamKind,
    pub init_scale: f64,
}

impl Default for GrConfig {
    fn default() -> Self {
        GrConfig {
            param: GrParamKind::Tabular,
            init_scale: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Params {
    /// `tables[slot]` is `m × children`.
    Tabular { tables: Vec<Matrix> },
    /// `w1` is `H × F` and `b1` is `1 × H` (both empty without a hidden layer);
    /// `heads[2·slot]` is `children × D`, `heads[2·slot + 1]` is `1 × children`.
    Featurized {
        w1: Matrix,
        b1: Matrix,
        heads: Vec<Matrix>,
    },
}

/// Trie-factored conditional model `p(y_t | y_<t, q)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrModel {
    trie: Trie,
    params: Params,
}

/// Query representation shared by every node of one forward pass.
pub(crate) struct QueryState {
    index: Option<usize>,
    features: Vec<f64>,
    hidden: Vec<f64>,
}

impl GrModel {
    pub fn new(
        config: &GrConfig,
        trie: Trie,
        queries: usize,
        feature_dim: usize,
        stream: &RandomStream,
    ) -> Result<Self> {
        if !(config.init_scale >= 0.0) {
            return Err(LabError::domain("init_scale must be non-negative"));
        }
        let params = match config.param {
            GrParamKind::Tabular => {
                if queries == 0 {
                    return Err(LabError::domain("tabular GR needs at least one query"));
                }
                let tables = trie
                    .interior_nodes()
                    .iter()
                    .map(|&n| Matrix::zeros(queries, trie.children(n).len()))
                    .collect();
                Params::Tabular { tables }
            }
            GrParamKind::Featurized { hidden_width } => {
                if feature_dim == 0 {
                    return Err(LabError::domain("featurized GR needs query features"));
                }
                let (w1, b1, d) = match hidden_width {
                    Some(0) => return Err(LabError::domain("hidden width must be positive")),
                    Some(h) => (
                        stream.derive(0).gaussian_matrix(
                            h,
                            feature_dim,
                            config.init_scale / (feature_dim as f64).sqrt(),
                        ),
                        Matrix::zeros(1, h),
                        h,
                    ),
                    None => (Matrix::zeros(0, 0), Matrix::zeros(0, 0), feature_dim),
                };
                let mut heads = Vec::with_capacity(2 * trie.interior_nodes().len());
                for (slot, &n) in trie.interior_nodes().iter().enumerate() {
                    let c = trie.children(n).len();
                    heads.push(stream.derive(1 + slot as u64).gaussian_matrix(
                        c,
                        d,
                        config.init_scale,
                    ));
                    heads.push(Matrix::zeros(1, c));
                }
                Params::Featurized { w1, b1, heads }
            }
        };
        Ok(GrModel { trie, params })
    }

    pub fn trie(&self) -> &Trie {
        &self.trie
    }

    pub fn is_tabular(&self) -> bool {
        matches!(self.params, Params::Tabular { .. })
    }

    /// Number of queries a tabular model covers.
    pub fn num_queries(&self) -> Option<usize> {
        match &self.params {
            Params::Tabular { tables } => tables.first().map(Matrix::rows),
            Params::Featurized { .. } => None,
        }
    }

    pub(crate) fn query_state(&self, q: Item<'_>) -> Result<QueryState> {
        match (&self.params, q) {
            (Params::Tabular { tables }, Item::Index(i)) => {
                let m = tables.first().map_or(0, Matrix::rows);
                if i >= m {
                    return Err(LabError::domain(format!("query {i} outside 0..{m}")));
                }
                Ok(QueryState {
                    index: Some(i),
                    features: Vec::new(),
                    hidden: Vec::new(),
                })
            }
            (Params::Featurized { w1, b1, heads }, Item::Features(x)) => {
                let expected = if w1.rows() > 0 {
                    w1.cols()
                } else {
                    heads.first().map_or(0, Matrix::cols)
                };
                if x.len() != expected {
                    return Err(LabError::domain(format!(
                        "query features have dimension {}, model expects {expected}",
                        x.len()
                    )));
                }
                let hidden = if w1.rows() > 0 {
                    (0..w1.rows())
                        .map(|k| (dot(w1.row(k), x) + b1[(0, k)]).max(0.0))
                        .collect()
                } else {
                    x.to_vec()
                };
                Ok(QueryState {
                    index: None,
                    features: x.to_vec(),
                    hidden,
                })
            }
            (Params::Tabular { .. }, Item::Features(_)) => Err(LabError::domain(
                "tabular GR model addresses queries by index",
            )),
            (Params::Featurized { .. }, Item::Index(_)) => {
                Err(LabError::domain("featurized GR model needs query features"))
            }
        }
    }

    pub(crate) fn node_logits(&self, slot: usize, state: &QueryState) -> Vec<f64> {
        match &self.params {
            Params::Tabular { tables } => tables[slot]
                .row(state.index.expect("tabular state"))
                .to_vec(),
            Params::Featurized { heads, .. } => {
                let (w, b) = (&heads[2 * slot], &heads[2 * slot + 1]);
                (0..w.rows())
                    .map(|j| dot(w.row(j), &state.hidden) + b[(0, j)])
                    .collect()
            }
        }
    }

    fn slot(&self, node: NodeId) -> Result<usize> {
        if node >= self.trie.num_nodes() {
            return Err(LabError::domain(format!("node {node} not in trie")));
        }
        self.trie
            .interior_slot(node)
            .ok_or_else(|| LabError::domain(format!("node {node} is a leaf")))
    }

    /// Log-conditionals over the children of `node`; children with no active leaf get `-inf`.
    pub(crate) fn log_conditional_state(
        &self,
        node: NodeId,
        state: &QueryState,
        active: Option<&[usize]>,
    ) -> Result<Vec<f64>> {
        let slot = self.slot(node)?;
        let mut logits = self.node_logits(slot, state);
        if let Some(counts) = active {
            for (l, &(_, child)) in logits.iter_mut().zip(self.trie.children(node)) {
                if counts[child] == 0 {
                    *l = f64::NEG_INFINITY;
                }
            }
        }
        let lse = logsumexp_unchecked(&logits);
        Ok(logits.iter().map(|l| l - lse).collect())
    }

    /// Softmax over the children of an interior node, in child-token order.
    pub fn node_conditional(&self, node: NodeId, q: Item<'_>) -> Result<Vec<f64>> {
        let state = self.query_state(q)?;
        Ok(self
            .log_conditional_state(node, &state, None)?
            .into_iter()
            .map(f64::exp)
            .collect())
    }

    /// Exact `P_Θ(d | q)` over all documents by enumerating root-to-leaf paths.
    pub fn leaf_posterior(&self, q: Item<'_>) -> Result<Vec<f64>> {
        Ok(self
            .leaf_log_posterior(q, None)?
            .into_iter()
            .map(f64::exp)
            .collect())
    }

    /// Log leaf posterior restricted to documents with `active[doc]`, renormalized over them.
    pub fn leaf_log_posterior(&self, q: Item<'_>, active: Option<&[bool]>) -> Result<Vec<f64>> {
        if self.trie.leaf_tokens() > LEAF_TOKEN_BUDGET {
            return Err(LabError::Budget(format!(
                "{} leaf tokens exceed the enumeration budget of {LEAF_TOKEN_BUDGET}; use beam-based evaluation",
                self.trie.leaf_tokens()
            )));
        }
        let counts = active.map(|a| self.trie.active_counts(a)).transpose()?;
        let state = self.query_state(q)?;
        let mut out = vec![f64::NEG_INFINITY; self.trie.num_leaves()];
        let mut stack = vec![(Trie::ROOT, 0.0)];
        while let Some((node, lp)) = stack.pop() {
            if let Some(doc) = self.trie.doc(node) {
                out[doc] = lp;
                continue;
            }
            let logc = self.log_conditional_state(node, &state, counts.as_deref())?;
            for (&(_, child), l) in self.trie.children(node).iter().zip(logc) {
                if l > f64::NEG_INFINITY {
                    stack.push((child, lp + l));
                }
            }
        }
        Ok(out)
    }

    /// Teacher-forced NLL `−Σ_t log p(y_t | y_<t, q)` of `doc`'s docid and its gradient.
    pub fn nll_loss(&self, q: Item<'_>, doc: usize) -> Result<(f64, Gradients)> {
        let path = self
            .trie
            .path(doc)
            .ok_or_else(|| LabError::domain(format!("doc {doc} has no docid in the trie")))?;
        let state = self.query_state(q)?;
        let mut loss = 0.0;
        let mut grads = Gradients::new();
        let mut dhidden = vec![0.0; state.hidden.len()];
        for (node, pos) in path {
            let slot = self.slot(node)?;
            let logits = self.node_logits(slot, &state);
            let lse = logsumexp_unchecked(&logits);
            loss += lse - logits[pos];
            let mut g: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();
            g[pos] -= 1.0;
            match &self.params {
                Params::Tabular { .. } => grads.push(slot, state.index.expect("tabular state"), g),
                Params::Featurized { heads, .. } => {
                    let w = &heads[2 * slot];
                    let base = 2 + 2 * slot;
                    for (j, &gj) in g.iter().enumerate() {
                        if gj != 0.0 {
                            grads.push(base, j, state.hidden.iter().map(|h| gj * h).collect());
                            axpy(gj, w.row(j), &mut dhidden);
                        }
                    }
                    grads.push(base + 1, 0, g);
                }
            }
        }
        if let Params::Featurized { w1, .. } = &self.params {
            if w1.rows() > 0 {
                let mut db = vec![0.0; w1.rows()];
                for k in 0..w1.rows() {
                    if state.hidden[k] > 0.0 && dhidden[k] != 0.0 {
                        db[k] = dhidden[k];
                        grads.push(
                            0,
                            k,
                            state.features.iter().map(|x| dhidden[k] * x).collect(),
                        );
                    }
                }
                grads.push(1, 0, db);
            }
        }
        Ok((loss, grads))
    }

    /// Tabular model whose node conditionals are subtree-mass ratios under `world`.
    pub fn exact_from_world(world: &GroundTruthPosterior, trie: Trie) -> Result<Self> {
        if trie.num_leaves() != world.num_docs() {
            return Err(LabError::domain(format!(
                "trie has {} leaves, world has {} docs",
                trie.num_leaves(),
                world.num_docs()
            )));
        }
        let m = world.num_queries();
        let mut tables: Vec<Matrix> = trie
            .interior_nodes()
            .iter()
            .map(|&n| Matrix::zeros(m, trie.children(n).len()))
            .collect();
        let mut mass = vec![0.0; trie.num_nodes()];
        for q in 0..m {
            mass.iter_mut().for_each(|x| *x = 0.0);
            let row = world.row(q);
            for id in (0..trie.num_nodes()).rev() {
                if let Some(doc) = trie.doc(id) {
                    mass[id] = row[doc];
                }
                if let Some(p) = trie.parent(id) {
                    mass[p] += mass[id];
                }
            }
            for (slot, &node) in trie.interior_nodes().iter().enumerate() {
                let dst = tables[slot].row_mut(q);
                if mass[node] > 0.0 {
                    for (l, &(_, child)) in dst.iter_mut().zip(trie.children(node)) {
                        *l = if mass[child] > 0.0 {
                            mass[child].ln()
                        } else {
                            ZERO_MASS_LOGIT
                        };
                    }
                }
            }
        }
        Ok(GrModel {
            trie,
            params: Params::Tabular { tables },
        })
    }
}

/// Tabular model reproducing `world`'s posterior exactly; see [`GrModel::exact_from_world`].
pub fn construct_exact_trie_model(world: &GroundTruthPosterior, trie: Trie) -> Result<GrModel> {
    GrModel::exact_from_world(world, trie)
}

pub fn gr_nll_loss(model: &GrModel, q: Item<'_>, doc: usize) -> Result<(f64, Gradients)> {
    model.nll_loss(q, doc)
}

pub fn leaf_posterior(model: &GrModel, q: Item<'_>) -> Result<Vec<f64>> {
    model.leaf_posterior(q)
}

pub fn node_conditional(model: &GrModel, node: NodeId, q: Item<'_>) -> Result<Vec<f64>> {
    model.node_conditional(node, q)
}

impl Parameterized for GrModel {
    fn num_blocks(&self) -> usize {
        match &self.params {
            Params::Tabular { tables } => tables.len(),
            Params::Featurized { heads, .. } => 2 + heads.len(),
        }
    }

    fn block(&self, index: usize) -> &Matrix {
        match &self.params {
            Params::Tabular { tables } => &tables[index],
            Params::Featurized { w1, b1, heads } => match index {
                0 => w1,
                1 => b1,
                i => &heads[i - 2],
            },
        }
    }

    fn block_mut(&mut self, index: usize) -> &mut Matrix {
        match &mut self.params {
            Params::Tabular { tables } => &mut tables[index],
            Params::Featurized { w1, b1, heads } => match index {
                0 => w1,
                1 => b1,
                i => &mut heads[i - 2],
            },
        }
    }
}
