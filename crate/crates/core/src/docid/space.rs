//! Unique, prefix-free document identifiers.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub type Token = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocidMode {
    Codebook,
    Text,
}

/// Bijection between documents and token sequences over `0..=base`, where `base` is the sentinel.
#[derive(Debug, Clone)]
pub struct DocidSpace {
    mode: DocidMode,
    base: u32,
    code_length: Option<usize>,
    docids: Vec<Vec<Token>>,
    lookup: HashMap<Vec<Token>, usize>,
}

impl DocidSpace {
    pub fn mode(&self) -> DocidMode {
        self.mode
    }

    /// Alphabet size `B` of raw codes (the sentinel is token `B`).
    pub fn base(&self) -> u32 {
        self.base
    }

    pub fn sentinel(&self) -> Token {
        self.base
    }

    pub fn code_length(&self) -> Option<usize> {
        self.code_length
    }

    pub fn max_length(&self) -> usize {
        self.docids.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.docids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docids.is_empty()
    }

    pub fn docid_of(&self, doc: usize) -> Option<&[Token]> {
        self.docids.get(doc).map(Vec::as_slice)
    }

    pub fn doc_of(&self, docid: &[Token]) -> Option<usize> {
        self.lookup.get(docid).copied()
    }

    pub fn docids(&self) -> &[Vec<Token>] {
        &self.docids
    }

    /// Builds a space from finished docids, checking the bijection and prefix-freeness.
    pub fn from_docids(
        mode: DocidMode,
        base: u32,
        code_length: Option<usize>,
        docids: Vec<Vec<Token>>,
    ) -> Result<Self> {
        let mut lookup = HashMap::with_capacity(docids.len());
        for (doc, id) in docids.iter().enumerate() {
            if id.is_empty() {
                return Err(LabError::Invariant(format!("doc {doc} has an empty docid")));
            }
            if let Some(&t) = id.iter().find(|&&t| t > base) {
                return Err(LabError::Invariant(format!(
                    "doc {doc}: token {t} exceeds sentinel {base}"
                )));
            }
            if let Some(prev) = lookup.insert(id.clone(), doc) {
                return Err(LabError::Invariant(format!(
                    "docs {prev} and {doc} share a docid"
                )));
            }
        }
        let space = DocidSpace {
            mode,
            base,
            code_length,
            docids,
            lookup,
        };
        space.check_prefix_free()?;
        Ok(space)
    }

    fn check_prefix_free(&self) -> Result<()> {
        let mut sorted: Vec<(&Vec<Token>, usize)> = self.docids.iter().zip(0..).collect();
        sorted.sort();
        // a prefix sorts immediately before some extension of it
        for w in sorted.windows(2) {
            if w[1].0.starts_with(w[0].0) {
                return Err(LabError::Invariant(format!(
                    "docid of doc {} is a prefix of doc {}",
                    w[0].1, w[1].1
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self, names: &[String]) -> Result<serde_json::Value> {
        if names.len() != self.len() {
            return Err(LabError::domain(format!(
                "{} names for {} docids",
                names.len(),
                self.len()
            )));
        }
        let mut map = serde_json::Map::new();
        for (name, id) in names.iter().zip(&self.docids) {
            if map
                .insert(name.clone(), serde_json::to_value(id)?)
                .is_some()
            {
                return Err(LabError::Invariant(format!("duplicate doc id `{name}`")));
            }
        }
        Ok(serde_json::json!({
            "mode": self.mode,
            "base": self.base,
            "code_length": self.code_length,
            "sentinel": self.sentinel(),
            "max_length": self.max_length(),
            "docids": map,
        }))
    }

    /// Inverse of [`DocidSpace::to_json`]; returns the space and the doc names in file order.
    pub fn from_json(value: &serde_json::Value) -> Result<(Self, Vec<String>)> {
        #[derive(Deserialize)]
        struct Header {
            mode: DocidMode,
            base: u32,
            code_length: Option<usize>,
            sentinel: u32,
            docids: serde_json::Map<String, serde_json::Value>,
        }
        let h: Header = serde_json::from_value(value.clone())?;
        if h.sentinel != h.base {
            return Err(LabError::Invariant(format!(
                "sentinel {} != base {}",
                h.sentinel, h.base
            )));
        }
        let mut names = Vec::with_capacity(h.docids.len());
        let mut ids = Vec::with_capacity(h.docids.len());
        for (name, v) in h.docids {
            names.push(name);
            ids.push(serde_json::from_value(v)?);
        }
        Ok((
            DocidSpace::from_docids(h.mode, h.base, h.code_length, ids)?,
            names,
        ))
    }
}

/// Base-`B` digits of `rank` with the given width; for `B = 1` a unary run of zeros.
fn digits(rank: usize, base: u32, width: usize) -> Vec<Token> {
    if base == 1 {
        return vec![0; rank];
    }
    let b = base as usize;
    let mut out = vec![0; width];
    let mut r = rank;
    for slot in out.iter_mut().rev() {
        *slot = (r % b) as Token;
        r /= b;
    }
    out
}

fn digit_width(group: usize, base: u32) -> usize {
    if base == 1 {
        return 0;
    }
    let mut width = 1;
    let mut capacity = base as usize;
    while capacity < group {
        width += 1;
        capacity = capacity.saturating_mul(base as usize);
    }
    width
}

/// Assigns prefix-free docids from raw codes (codebook mode) or title bytes (text mode).
///
/// Codebook mode requires equal-length codes over `0..base`. Unique codes become
/// `code ++ [S]`; a group of `g` identical codes becomes `code ++ digits(rank) ++ [S]`
/// with minimal fixed-width base-`B` digits, ranks in input order.
/// Text mode uses `base = 256` and `bytes ++ [S]`, or `bytes ++ [S] ++ digits ++ [S]`
/// for repeated titles.
pub fn assign_unique_docids(
    codes: &[Vec<Token>],
    base: u32,
    mode: DocidMode,
) -> Result<DocidSpace> {
    if base == 0 {
        return Err(LabError::domain("docid alphabet must be non-empty"));
    }
    let code_length = match mode {
        DocidMode::Codebook => {
            let len = codes.first().map_or(0, Vec::len);
            if codes.iter().any(|c| c.len() != len) {
                return Err(LabError::domain("codebook docids need equal-length codes"));
            }
            if len == 0 && !codes.is_empty() {
                return Err(LabError::domain("codebook docids need non-empty codes"));
            }
            Some(len)
        }
        DocidMode::Text => None,
    };
    if let Some((doc, t)) = codes
        .iter()
        .enumerate()
        .find_map(|(d, c)| c.iter().find(|&&t| t >= base).map(|&t| (d, t)))
    {
        return Err(LabError::domain(format!(
            "doc {doc}: token {t} outside [0, {base})"
        )));
    }
    let mut groups: HashMap<&[Token], Vec<usize>> = HashMap::new();
    for (doc, c) in codes.iter().enumerate() {
        groups.entry(c.as_slice()).or_default().push(doc);
    }
    let sentinel = base;
    let mut docids = vec![Vec::new(); codes.len()];
    for members in groups.values() {
        let width = digit_width(members.len(), base);
        for (rank, &doc) in members.iter().enumerate() {
            let mut id = codes[doc].clone();
            if members.len() > 1 {
                if mode == DocidMode::Text {
                    id.push(sentinel);
                }
                id.extend(digits(rank, base, width));
            }
            id.push(sentinel);
            docids[doc] = id;
        }
    }
    DocidSpace::from_docids(mode, base, code_length, docids)
}

/// Byte tokenization of titles for text-mode docids.
pub fn text_codes(titles: &[String]) -> Vec<Vec<Token>> {
    titles
        .iter()
        .map(|t| t.bytes().map(Token::from).collect())
        .collect()
}

/// Text-mode docids over byte tokens (`B = 256`).
pub fn text_docids(titles: &[String]) -> Result<DocidSpace> {
    assign_unique_docids(&text_codes(titles), 256, DocidMode::Text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn distinct_codes_get_sentinel_only() {
        let codes = vec![vec![0, 1], vec![1, 0], vec![2, 2]];
        let s = assign_unique_docids(&codes, 3, DocidMode::Codebook).unwrap();
        for (i, c) in codes.iter().enumerate() {
            let mut want = c.clone();
            want.push(3);
            assert_eq!(s.docid_of(i).unwrap(), want.as_slice());
        }
    }

    #[test]
    fn collision_group_gets_ranked_suffixes() {
        let codes = vec![vec![5, 5], vec![1, 2], vec![5, 5], vec![5, 5]];
        let s = assign_unique_docids(&codes, 8, DocidMode::Codebook).unwrap();
        assert_eq!(s.docid_of(0).unwrap(), &[5, 5, 0, 8]);
        assert_eq!(s.docid_of(2).unwrap(), &[5, 5, 1, 8]);
        assert_eq!(s.docid_of(3).unwrap(), &[5, 5, 2, 8]);
        assert_eq!(s.docid_of(1).unwrap(), &[1, 2, 8]);
    }

    #[test]
    fn large_groups_use_minimal_width() {
        assert_eq!(digit_width(1, 2), 1);
        assert_eq!(digit_width(2, 2), 1);
        assert_eq!(digit_width(3, 2), 2);
        assert_eq!(digit_width(256, 256), 1);
        assert_eq!(digit_width(257, 256), 2);
        assert_eq!(digits(5, 2, 3), vec![1, 0, 1]);
        let codes = vec![vec![0]; 5];
        let s = assign_unique_docids(&codes, 2, DocidMode::Codebook).unwrap();
        assert_eq!(s.docid_of(4).unwrap(), &[0, 1, 0, 0, 2]);
        let unary =
            assign_unique_docids(&[vec![0], vec![0], vec![0]], 1, DocidMode::Codebook).unwrap();
        assert_eq!(unary.docid_of(2).unwrap(), &[0, 0, 0, 1]);
    }

    #[test]
    fn text_mode_separates_title_from_digits() {
        let titles: Vec<String> = ["ab", "ab\u{0}", "ab", "a"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let s = text_docids(&titles).unwrap();
        assert_eq!(s.docid_of(1).unwrap(), &[97, 98, 0, 256]);
        assert_eq!(s.docid_of(0).unwrap(), &[97, 98, 256, 0, 256]);
        assert_eq!(s.docid_of(2).unwrap(), &[97, 98, 256, 1, 256]);
        assert_eq!(s.docid_of(3).unwrap(), &[97, 256]);
        assert_eq!(s.max_length(), 5);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        assert!(assign_unique_docids(&[vec![0, 1], vec![0]], 2, DocidMode::Codebook).is_err());
        assert!(assign_unique_docids(&[vec![3]], 2, DocidMode::Codebook).is_err());
        assert!(
            DocidSpace::from_docids(DocidMode::Text, 4, None, vec![vec![1, 4], vec![1, 4]])
                .is_err()
        );
        assert!(
            DocidSpace::from_docids(DocidMode::Text, 4, None, vec![vec![1], vec![1, 4]]).is_err()
        );
    }

    #[test]
    fn json_round_trip() {
        let codes = vec![vec![1, 1], vec![0, 1], vec![1, 1]];
        let s = assign_unique_docids(&codes, 2, DocidMode::Codebook).unwrap();
        let names: Vec<String> = vec!["x".into(), "y".into(), "z".into()];
        let v = s.to_json(&names).unwrap();
        assert_eq!(v["sentinel"], 2);
        assert_eq!(v["code_length"], 2);
        let (back, back_names) = DocidSpace::from_json(&v).unwrap();
        assert_eq!(back_names, names);
        assert_eq!(back.docids(), s.docids());
    }

    proptest! {
        #[test]
        fn random_codes_give_prefix_free_bijection(
            base in 1u32..5,
            len in 1usize..4,
            raw in proptest::collection::vec(proptest::collection::vec(0u32..1000, 3), 1..60),
        ) {
            let codes: Vec<Vec<Token>> = raw.iter().map(|c| c[..len].iter().map(|t| t % base).collect()).collect();
            let s = assign_unique_docids(&codes, base, DocidMode::Codebook).unwrap();
            for doc in 0..codes.len() {
                prop_assert_eq!(s.doc_of(s.docid_of(doc).unwrap()), Some(doc));
                prop_assert_eq!(*s.docid_of(doc).unwrap().last().unwrap(), base);
            }
        }

        #[test]
        fn random_titles_give_prefix_free_bijection(titles in proptest::collection::vec("[ab]{0,3}", 1..40)) {
            let s = text_docids(&titles).unwrap();
            for doc in 0..titles.len() {
                prop_assert_eq!(s.doc_of(s.docid_of(doc).unwrap()), Some(doc));
            }
        }
    }
}
