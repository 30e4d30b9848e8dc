use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::numerics::Matrix;

/// Documents (and optionally queries) as hashed character n-gram vectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Corpus {
    pub feature_dim: usize,
    pub ngram_max: usize,
    pub doc_ids: Vec<String>,
    pub doc_texts: Vec<String>,
    pub docs: Matrix,
    pub query_ids: Vec<String>,
    pub query_texts: Vec<String>,
    pub queries: Matrix,
    /// Gold document per query; see [`Corpus::attach_queries`].
    pub query_gold: Vec<usize>,
}

struct TsvRows {
    ids: Vec<String>,
    texts: Vec<String>,
}

fn read_tsv(path: &Path) -> Result<TsvRows> {
    let raw = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    let mut ids = Vec::new();
    let mut texts = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in raw.lines().enumerate() {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| LabError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let (id, text) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("expected `id<TAB>text`".into()))?;
        if id.is_empty() {
            return Err(parse_err("empty id".into()));
        }
        if text.contains('\t') {
            return Err(parse_err("more than one tab".into()));
        }
        if !seen.insert(id.to_string()) {
            return Err(parse_err(format!("duplicate id `{id}`")));
        }
        ids.push(id.to_string());
        texts.push(text.to_string());
    }
    Ok(TsvRows { ids, texts })
}

fn featurize_all(texts: &[String], feature_dim: usize, ngram_max: usize) -> Matrix {
    let rows: Vec<Vec<f64>> = texts
        .iter()
        .map(|t| hashed_ngram_features(t, feature_dim, ngram_max))
        .collect();
    let mut m = Matrix::zeros(rows.len(), feature_dim);
    for (i, r) in rows.into_iter().enumerate() {
        m.row_mut(i).copy_from_slice(&r);
    }
    m
}

/// Reads `id<TAB>text` lines into a document corpus.
pub fn ingest_tsv(path: impl AsRef<Path>, feature_dim: usize, ngram_max: usize) -> Result<Corpus> {
    if feature_dim == 0 || ngram_max == 0 {
        return Err(LabError::domain(
            "feature_dim and ngram_max must be positive",
        ));
    }
    let rows = read_tsv(path.as_ref())?;
    let docs = featurize_all(&rows.texts, feature_dim, ngram_max);
    Ok(Corpus {
        feature_dim,
        ngram_max,
        doc_ids: rows.ids,
        doc_texts: rows.texts,
        docs,
        query_ids: Vec::new(),
        query_texts: Vec::new(),
        queries: Matrix::zeros(0, feature_dim),
        query_gold: Vec::new(),
    })
}

impl Corpus {
    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn num_queries(&self) -> usize {
        self.query_ids.len()
    }

    /// Loads queries from a TSV file. A query id names its gold document:
    /// either exactly a document id, or `<doc id>#<suffix>` when one document
    /// has several queries.
    pub fn attach_queries(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let rows = read_tsv(path)?;
        let mut gold = Vec::with_capacity(rows.ids.len());
        for (line, id) in rows.ids.iter().enumerate() {
            let target = match self.doc_ids.iter().position(|d| d == id) {
                Some(i) => Some(i),
                None => id
                    .rsplit_once('#')
                    .and_then(|(doc, _)| self.doc_ids.iter().position(|d| d == doc)),
            };
            let target = target.ok_or_else(|| LabError::Parse {
                path: path.to_path_buf(),
                line: line + 1,
                message: format!("query id `{id}` does not name a document"),
            })?;
            gold.push(target);
        }
        self.queries = featurize_all(&rows.texts, self.feature_dim, self.ngram_max);
        self.query_ids = rows.ids;
        self.query_texts = rows.texts;
        self.query_gold = gold;
        Ok(())
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const SIGN_SALT: u64 = 0x5bd1_e995_7f4a_7c15;

fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    bytes
        .iter()
        .fold(seed, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Bucket and sign of one n-gram.
pub(crate) fn ngram_slot(ngram: &str, feature_dim: usize) -> (usize, f64) {
    let bucket = (fnv1a(ngram.as_bytes(), FNV_OFFSET) % feature_dim as u64) as usize;
    let sign = if fnv1a(ngram.as_bytes(), FNV_OFFSET ^ SIGN_SALT) & 1 == 0 {
        1.0
    } else {
        -1.0
    };
    (bucket, sign)
}

pub(crate) fn char_ngrams(text: &str, ngram_max: usize) -> Vec<String> {
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    let mut out = Vec::new();
    for n in 1..=ngram_max {
        for w in chars.windows(n) {
            out.push(w.iter().collect());
        }
    }
    out
}

/// Signed hashed character n-grams (n = 1..=ngram_max), L2-normalized. Empty text maps to zero.
pub fn hashed_ngram_features(text: &str, feature_dim: usize, ngram_max: usize) -> Vec<f64> {
    let mut v = vec![0.0; feature_dim];
    for g in char_ngrams(text, ngram_max) {
        let (bucket, sign) = ngram_slot(&g, feature_dim);
        v[bucket] += sign;
    }
    let len = crate::numerics::norm(&v);
    if len > 0.0 {
        v.iter_mut().for_each(|x| *x /= len);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::dot;
    use std::io::Write;

    fn write_tsv(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn ingests_and_normalizes() {
        let f = write_tsv("a\tthe cat sat\nb\tthe cat sat\nc\t\n");
        let c = ingest_tsv(f.path(), 256, 3).unwrap();
        assert_eq!(c.num_docs(), 3);
        assert_eq!(c.docs.row(0), c.docs.row(1));
        assert!((crate::numerics::norm(c.docs.row(0)) - 1.0).abs() < 1e-12);
        assert!(c.docs.row(2).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn malformed_and_duplicate_lines_are_reported() {
        let f = write_tsv("a\tok\nno tab here\n");
        match ingest_tsv(f.path(), 16, 2) {
            Err(LabError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let f = write_tsv("a\tx\nb\ty\na\tz\n");
        match ingest_tsv(f.path(), 16, 2) {
            Err(LabError::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("duplicate"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn disjoint_collision_free_texts_are_orthogonal() {
        let dim = 1 << 16;
        // brute-force a pair of single-character alphabets with no shared n-grams and no bucket collisions
        let alphabet: Vec<char> = "abcdefghijklmnopqrstuvwxyz0123456789".chars().collect();
        let mut found = None;
        'outer: for (i, &a) in alphabet.iter().enumerate() {
            for &b in &alphabet[i + 1..] {
                let ta: String = [a, a, a].iter().collect();
                let tb: String = [b, b, b].iter().collect();
                let ba: HashSet<usize> = char_ngrams(&ta, 3)
                    .iter()
                    .map(|g| ngram_slot(g, dim).0)
                    .collect();
                let bb: HashSet<usize> = char_ngrams(&tb, 3)
                    .iter()
                    .map(|g| ngram_slot(g, dim).0)
                    .collect();
                if ba.is_disjoint(&bb) {
                    found = Some((ta, tb));
                    break 'outer;
                }
            }
        }
        let (ta, tb) = found.expect("collision-free pair");
        let va = hashed_ngram_features(&ta, dim, 3);
        let vb = hashed_ngram_features(&tb, dim, 3);
        assert_eq!(dot(&va, &vb), 0.0);
    }

    #[test]
    fn queries_link_to_gold_documents() {
        let docs = write_tsv("alpha\tfirst doc\nbeta\tsecond doc\n");
        let queries = write_tsv("beta\twhich is second\nalpha#2\tfirst?\n");
        let mut c = ingest_tsv(docs.path(), 64, 2).unwrap();
        c.attach_queries(queries.path()).unwrap();
        assert_eq!(c.query_gold, vec![1, 0]);
        let bad = write_tsv("gamma\tnothing\n");
        assert!(c.attach_queries(bad.path()).is_err());
    }
}
