//! Prefix trie over a docid space.

use serde::{Deserialize, Serialize};

use super::space::{DocidSpace, Token};
use crate::error::{LabError, Result};

pub type NodeId = usize;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrieNode {
    /// Sorted by token.
    children: Vec<(Token, NodeId)>,
    doc: Option<usize>,
    parent: Option<NodeId>,
    depth: usize,
    min_doc: usize,
    leaf_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trie {
    nodes: Vec<TrieNode>,
    leaf_of_doc: Vec<NodeId>,
    interior: Vec<NodeId>,
    interior_slot: Vec<Option<usize>>,
}

impl Trie {
    pub const ROOT: NodeId = 0;

    /// Builds the trie for docids indexed by document.
    pub fn from_docids(docids: &[Vec<Token>]) -> Result<Self> {
        if docids.is_empty() {
            return Err(LabError::domain("trie needs at least one docid"));
        }
        let mut nodes = vec![TrieNode {
            children: Vec::new(),
            doc: None,
            parent: None,
            depth: 0,
            min_doc: usize::MAX,
            leaf_count: 0,
        }];
        let mut leaf_of_doc = Vec::with_capacity(docids.len());
        for (doc, id) in docids.iter().enumerate() {
            if id.is_empty() {
                return Err(LabError::Invariant(format!("doc {doc} has an empty docid")));
            }
            let mut cur = Self::ROOT;
            for &t in id {
                if let Some(other) = nodes[cur].doc {
                    return Err(LabError::Invariant(format!(
                        "docid of doc {other} is a prefix of doc {doc}"
                    )));
                }
                cur = match nodes[cur].children.binary_search_by_key(&t, |c| c.0) {
                    Ok(pos) => nodes[cur].children[pos].1,
                    Err(pos) => {
                        let next = nodes.len();
                        let depth = nodes[cur].depth + 1;
                        nodes.push(TrieNode {
                            children: Vec::new(),
                            doc: None,
                            parent: Some(cur),
                            depth,
                            min_doc: usize::MAX,
                            leaf_count: 0,
                        });
                        nodes[cur].children.insert(pos, (t, next));
                        next
                    }
                };
            }
            if let Some(other) = nodes[cur].doc {
                return Err(LabError::Invariant(format!(
                    "docs {other} and {doc} share a docid"
                )));
            }
            if !nodes[cur].children.is_empty() {
                return Err(LabError::Invariant(format!(
                    "docid of doc {doc} is a proper prefix of another"
                )));
            }
            nodes[cur].doc = Some(doc);
            leaf_of_doc.push(cur);
        }
        // parents precede children, so a reverse sweep aggregates subtrees
        for id in (0..nodes.len()).rev() {
            if let Some(doc) = nodes[id].doc {
                nodes[id].min_doc = doc;
                nodes[id].leaf_count = 1;
            }
            if let Some(p) = nodes[id].parent {
                let (m, c) = (nodes[id].min_doc, nodes[id].leaf_count);
                nodes[p].min_doc = nodes[p].min_doc.min(m);
                nodes[p].leaf_count += c;
            }
        }
        let mut interior = Vec::new();
        let mut interior_slot = vec![None; nodes.len()];
        for (id, n) in nodes.iter().enumerate() {
            if n.doc.is_none() {
                interior_slot[id] = Some(interior.len());
                interior.push(id);
            }
        }
        Ok(Trie {
            nodes,
            leaf_of_doc,
            interior,
            interior_slot,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_leaves(&self) -> usize {
        self.leaf_of_doc.len()
    }

    pub fn children(&self, node: NodeId) -> &[(Token, NodeId)] {
        &self.nodes[node].children
    }

    pub fn is_leaf(&self, node: NodeId) -> bool {
        self.nodes[node].doc.is_some()
    }

    pub fn doc(&self, node: NodeId) -> Option<usize> {
        self.nodes[node].doc
    }

    pub fn parent(&self, node: NodeId) -> Option<NodeId> {
        self.nodes[node].parent
    }

    pub fn depth(&self, node: NodeId) -> usize {
        self.nodes[node].depth
    }

    /// Smallest document index in the subtree.
    pub fn min_doc(&self, node: NodeId) -> usize {
        self.nodes[node].min_doc
    }

    pub fn leaf_count(&self, node: NodeId) -> usize {
        self.nodes[node].leaf_count
    }

    pub fn leaf(&self, doc: usize) -> Option<NodeId> {
        self.leaf_of_doc.get(doc).copied()
    }

    /// Interior nodes in id order; the position is the node's parameter slot.
    pub fn interior_nodes(&self) -> &[NodeId] {
        &self.interior
    }

    pub fn interior_slot(&self, node: NodeId) -> Option<usize> {
        self.interior_slot[node]
    }

    pub fn child(&self, node: NodeId, token: Token) -> Option<NodeId> {
        let c = &self.nodes[node].children;
        c.binary_search_by_key(&token, |x| x.0).ok().map(|p| c[p].1)
    }

    pub fn walk(&self, prefix: &[Token]) -> Option<NodeId> {
        prefix.iter().try_fold(Self::ROOT, |n, &t| self.child(n, t))
    }

    /// True iff `docid` spells a full root-to-leaf path.
    pub fn contains(&self, docid: &[Token]) -> bool {
        self.walk(docid).is_some_and(|n| self.is_leaf(n))
    }

    /// `(interior node, child position)` for each step on the path to `doc`'s leaf.
    pub fn path(&self, doc: usize) -> Option<Vec<(NodeId, usize)>> {
        let mut node = self.leaf(doc)?;
        let mut steps = Vec::with_capacity(self.depth(node));
        while let Some(p) = self.parent(node) {
            let pos = self.nodes[p]
                .children
                .iter()
                .position(|c| c.1 == node)
                .expect("child listed under its parent");
            steps.push((p, pos));
            node = p;
        }
        steps.reverse();
        Some(steps)
    }

    /// Tokens spelling the path to `node`.
    pub fn prefix(&self, node: NodeId) -> Vec<Token> {
        let mut out = Vec::with_capacity(self.depth(node));
        let mut cur = node;
        while let Some(p) = self.parent(cur) {
            let t = self.nodes[p]
                .children
                .iter()
                .find(|c| c.1 == cur)
                .expect("child listed")
                .0;
            out.push(t);
            cur = p;
        }
        out.reverse();
        out
    }

    /// Per-node count of active leaves in the subtree.
    pub fn active_counts(&self, active: &[bool]) -> Result<Vec<usize>> {
        if active.len() != self.num_leaves() {
            return Err(LabError::domain(format!(
                "active mask has {} entries for {} leaves",
                active.len(),
                self.num_leaves()
            )));
        }
        let mut counts = vec![0usize; self.nodes.len()];
        for id in (0..self.nodes.len()).rev() {
            if let Some(doc) = self.nodes[id].doc {
                counts[id] = usize::from(active[doc]);
            }
            if let Some(p) = self.nodes[id].parent {
                counts[p] += counts[id];
            }
        }
        Ok(counts)
    }

    /// Total number of tokens over all root-to-leaf paths.
    pub fn leaf_tokens(&self) -> usize {
        self.leaf_of_doc.iter().map(|&l| self.depth(l)).sum()
    }
}

pub fn build_trie(space: &DocidSpace) -> Result<Trie> {
    Trie::from_docids(space.docids())
}
