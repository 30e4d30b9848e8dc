use serde::{Deserialize, Serialize};

use super::model::GrModel;
use crate::docid::{NodeId, Token, Trie};
use crate::error::{LabError, Result};
use crate::inputs::Item;

#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    pub prefix: Vec<Token>,
    pub log_prob: f64,
    pub node: NodeId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamHit {
    pub doc: usize,
    pub docid: Vec<Token>,
    pub log_prob: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamOutput {
    pub hits: Vec<BeamHit>,
    pub warning: Option<String>,
}

/// Length-synchronous beam search over trie children.
///
/// Completed leaves stay in the beam and compete with open prefixes until every
/// hypothesis is a leaf. Ties rank the subtree with the smaller document index first.
pub fn constrained_beam_search(
    model: &GrModel,
    q: Item<'_>,
    beam_width: usize,
    k: usize,
    active: Option<&[bool]>,
) -> Result<BeamOutput> {
    if k == 0 || beam_width < k {
        return Err(LabError::domain(format!(
            "need beam_width >= k >= 1, got {beam_width} and {k}"
        )));
    }
    let trie = model.trie();
    let counts = active.map(|a| trie.active_counts(a)).transpose()?;
    let available = counts.as_ref().map_or(trie.num_leaves(), |c| c[Trie::ROOT]);
    if available == 0 {
        return Err(LabError::domain("no active documents to decode"));
    }
    let warning = (k > available).then(|| format!("k = {k} clamped to N = {available}"));
    let k = k.min(available);
    let state = model.query_state(q)?;
    let mut beam = vec![BeamHypothesis {
        prefix: Vec::new(),
        log_prob: 0.0,
        node: Trie::ROOT,
    }];
    while beam.iter().any(|h| !trie.is_leaf(h.node)) {
        let mut next = Vec::with_capacity(beam.len() * 2);
        for h in beam {
            if trie.is_leaf(h.node) {
                next.push(h);
                continue;
            }
            let logc = model.log_conditional_state(h.node, &state, counts.as_deref())?;
            for (&(token, child), l) in trie.children(h.node).iter().zip(logc) {
                if l == f64::NEG_INFINITY {
                    continue;
                }
                let mut prefix = h.prefix.clone();
                prefix.push(token);
                next.push(BeamHypothesis {
                    prefix,
                    log_prob: h.log_prob + l,
                    node: child,
                });
            }
        }
        next.sort_by(|a, b| {
            b.log_prob
                .total_cmp(&a.log_prob)
                .then(trie.min_doc(a.node).cmp(&trie.min_doc(b.node)))
        });
        next.truncate(beam_width);
        beam = next;
    }
    let hits = beam
        .into_iter()
        .take(k)
        .map(|h| BeamHit {
            doc: trie.doc(h.node).expect("finished beam holds leaves"),
            docid: h.prefix,
            log_prob: h.log_prob,
            probability: h.log_prob.exp(),
        })
        .collect();
    Ok(BeamOutput { hits, warning })
}
