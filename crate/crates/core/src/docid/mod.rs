//! Document identifiers: residual-quantization codes, unique docid assignment and the prefix trie.

mod rq;
mod space;
mod trie;

pub use rq::{rq_train, Codebook, Encoded};
pub use space::{assign_unique_docids, text_codes, text_docids, DocidMode, DocidSpace, Token};
pub use trie::{build_trie, NodeId, Trie, TrieNode};

use crate::error::Result;
use crate::numerics::{Matrix, RandomStream};

/// Codebook docids for the rows of `vectors`: RQ codes, then deterministic collision suffixes.
pub fn codebook_docids(
    vectors: &Matrix,
    stages: usize,
    base: usize,
    iters: usize,
    stream: &RandomStream,
) -> Result<(Codebook, DocidSpace)> {
    let codebook = rq_train(vectors, stages, base, iters, stream)?;
    let codes = (0..vectors.rows())
        .map(|i| codebook.encode(vectors.row(i)).map(|e| e.tokens))
        .collect::<Result<Vec<_>>>()?;
    let space = assign_unique_docids(&codes, base as u32, DocidMode::Codebook)?;
    Ok((codebook, space))
}
