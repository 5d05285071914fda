//! Label embeddings from a plain-text word-vector file.
//!
//! A label is lowercased and split on whitespace, commas and hyphens;
//! parentheses are stripped so qualifiers such as `(domestic)` become
//! ordinary tokens. The label embedding is the mean of the vectors of its
//! in-vocabulary tokens.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifier of a class in a label vocabulary. Ordering is lexicographic
/// and is used for every tie-break.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub String);

impl ClassId {
    pub fn new(id: impl Into<String>) -> Self {
        ClassId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ClassId {
    fn from(s: &str) -> Self {
        ClassId(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Array2<f32>,
    source: String,
}

impl VectorStore {
    /// Builds a store from `(word, vector)` pairs.
    pub fn from_entries(entries: Vec<(String, Vec<f32>)>, source: impl Into<String>) -> Result<Self> {
        let Some(n) = entries.first().map(|(_, v)| v.len()) else {
            return Err(Error::format("word-vector file", "no entries"));
        };
        if n == 0 {
            return Err(Error::format("word-vector file", "entries have no values"));
        }
        let mut index = HashMap::with_capacity(entries.len());
        let mut words = Vec::with_capacity(entries.len());
        let mut vectors = Array2::zeros((entries.len(), n));
        for (i, (word, v)) in entries.into_iter().enumerate() {
            if v.len() != n {
                return Err(Error::VectorDimension {
                    line: i + 1,
                    expected: n,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("word vector `{word}`")));
            }
            if index.insert(word.clone(), i).is_some() {
                return Err(Error::DuplicateWord { word, line: i + 1 });
            }
            vectors.row_mut(i).assign(&ArrayView1::from(&v[..]));
            words.push(word);
        }
        Ok(VectorStore {
            words,
            index,
            vectors,
            source: source.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn get(&self, word: &str) -> Option<ArrayView1<'_, f32>> {
        self.index.get(word).map(|&i| self.vectors.row(i))
    }
}

/// Parses the plain-text format: `word v1 ... vn` per line, optionally
/// preceded by a `count dim` header line.
pub fn parse_word_vectors(text: &str, source: &str) -> Result<VectorStore> {
    let mut entries: Vec<(String, Vec<f32>)> = Vec::new();
    let mut lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    let mut header = None;
    if let Some(&(_, first)) = lines.first() {
        let parts: Vec<&str> = first.split_whitespace().collect();
        if let [count, dim] = parts[..] {
            if let (Ok(c), Ok(d)) = (count.parse::<usize>(), dim.parse::<usize>()) {
                header = Some((c, d));
                lines.remove(0);
            }
        }
    }
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut n = header.map(|h| h.1);
    for (line_no, line) in lines {
        let mut parts = line.split_whitespace();
        let word = parts.next().expect("non-empty line").to_string();
        let values = parts
            .map(|p| {
                p.parse::<f32>()
                    .map_err(|_| Error::format("word-vector file", format!("line {line_no}: cannot parse `{p}`")))
            })
            .collect::<Result<Vec<f32>>>()?;
        let expected = *n.get_or_insert(values.len());
        if values.len() != expected {
            return Err(Error::VectorDimension {
                line: line_no,
                expected,
                found: values.len(),
            });
        }
        if let Some(&first) = seen.get(&word) {
            log::debug!("`{word}` first seen on line {first}");
            return Err(Error::DuplicateWord { word, line: line_no });
        }
        seen.insert(word.clone(), line_no);
        entries.push((word, values));
    }
    if let Some((count, _)) = header {
        if count != entries.len() {
            return Err(Error::format(
                "word-vector file",
                format!("header announces {count} entries, found {}", entries.len()),
            ));
        }
    }
    VectorStore::from_entries(entries, source)
}

pub fn load_word_vectors(path: &Path) -> Result<VectorStore> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_word_vectors(&text, &path.display().to_string())
}

/// Lowercased label tokens.
pub fn tokenize(label: &str) -> Vec<String> {
    label
        .to_lowercase()
        .split(|c: char| c.is_whitespace() || c == ',' || c == '-')
        .map(|t| t.trim_matches(|c| c == '(' || c == ')'))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDescriptor {
    pub id: ClassId,
    pub label: String,
    pub tokens: Vec<String>,
}

impl ClassDescriptor {
    pub fn new(id: ClassId, label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        let tokens = tokenize(&label);
        if tokens.is_empty() {
            return Err(Error::UnembeddableLabel(label));
        }
        Ok(ClassDescriptor { id, label, tokens })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticEmbedding {
    pub class: ClassId,
    pub vector: Array1<f32>,
    /// Tokens that were skipped because they are not in the vocabulary.
    pub oov: Vec<String>,
}

pub fn embed_label(c: &ClassDescriptor, store: &VectorStore) -> Result<SemanticEmbedding> {
    let mut sum = Array1::<f64>::zeros(store.dim());
    let mut known = 0usize;
    let mut oov = Vec::new();
    for t in &c.tokens {
        match store.get(t) {
            Some(v) => {
                sum.zip_mut_with(&v, |s, &x| *s += x as f64);
                known += 1;
            }
            None => {
                log::warn!("label `{}`: token `{t}` not in vocabulary", c.label);
                oov.push(t.clone());
            }
        }
    }
    if known == 0 {
        return Err(Error::UnembeddableLabel(c.label.clone()));
    }
    Ok(SemanticEmbedding {
        class: c.id.clone(),
        vector: sum.mapv(|s| (s / known as f64) as f32),
        oov,
    })
}

/// Cosine similarity in double precision. Errors on a zero-norm vector.
pub fn cosine(a: ArrayView1<'_, f32>, b: ArrayView1<'_, f32>) -> Result<f64> {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b.iter()) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Data("cosine similarity of a zero-norm vector".into()));
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

/// Most similar candidate by cosine; ties go to the lowest class id.
pub fn nearest_neighbor(e: &SemanticEmbedding, candidates: &[SemanticEmbedding]) -> Result<(ClassId, f64)> {
    let mut best: Option<(&ClassId, f64)> = None;
    for c in candidates {
        let sim = cosine(e.vector.view(), c.vector.view())?;
        best = match best {
            Some((id, s)) if s > sim || (s == sim && id < &c.class) => Some((id, s)),
            _ => Some((&c.class, sim)),
        };
    }
    best.map(|(id, s)| (id.clone(), s))
        .ok_or_else(|| Error::Data("nearest neighbour over an empty candidate set".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn store(entries: &[(&str, &[f32])]) -> VectorStore {
        VectorStore::from_entries(
            entries.iter().map(|(w, v)| (w.to_string(), v.to_vec())).collect(),
            "test",
        )
        .unwrap()
    }

    fn emb(id: &str, v: &[f32]) -> SemanticEmbedding {
        SemanticEmbedding {
            class: ClassId::from(id),
            vector: Array1::from(v.to_vec()),
            oov: vec![],
        }
    }

    #[test]
    fn parses_plain_and_headed_files() {
        let s = parse_word_vectors("a 1 2\nb 3 4\nc 5 6\n", "x").unwrap();
        assert_eq!((s.len(), s.dim()), (3, 2));
        assert_eq!(s.get("b").unwrap().to_vec(), vec![3.0, 4.0]);
        let h = parse_word_vectors("2 3\r\nfire 1 0 0\r\ntruck 0 1 0\r\n", "x").unwrap();
        assert_eq!((h.len(), h.dim()), (2, 3));
    }

    #[test]
    fn dimension_mismatch_names_the_line() {
        let err = parse_word_vectors("a 1 2 3\nb 1 2\n", "x").unwrap_err();
        assert!(matches!(
            err,
            Error::VectorDimension {
                line: 2,
                expected: 3,
                found: 2
            }
        ));
    }

    #[test]
    fn duplicate_word_is_named() {
        let err = parse_word_vectors("b 1\na 2\nc 3\nd 4\na 5\n", "x").unwrap_err();
        match err {
            Error::DuplicateWord { word, line } => assert_eq!((word.as_str(), line), ("a", 5)),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn empty_and_garbage_files_error() {
        assert!(parse_word_vectors("", "x").is_err());
        assert!(parse_word_vectors("a 1 zz\n", "x").is_err());
        assert!(parse_word_vectors("a nan\n", "x").is_err());
        assert!(parse_word_vectors("3 2\na 1 2\n", "x").is_err());
    }

    #[test]
    fn tokenization() {
        assert_eq!(tokenize("Fire truck"), vec!["fire", "truck"]);
        assert_eq!(tokenize("Hi-hat, closed"), vec!["hi", "hat", "closed"]);
        assert_eq!(tokenize("Bird (domestic)"), vec!["bird", "domestic"]);
    }

    #[test]
    fn label_embedding_examples() {
        let s = store(&[("siren", &[0.3, -0.7]), ("fire", &[1.0, 0.0]), ("truck", &[0.0, 1.0])]);
        let one = embed_label(&ClassDescriptor::new("a".into(), "siren").unwrap(), &s).unwrap();
        assert_eq!(one.vector, array![0.3f32, -0.7]);
        let two = embed_label(&ClassDescriptor::new("b".into(), "fire truck").unwrap(), &s).unwrap();
        assert_eq!(two.vector, array![0.5f32, 0.5]);
        let oov = embed_label(&ClassDescriptor::new("c".into(), "fire zzzunknown").unwrap(), &s).unwrap();
        assert_eq!(oov.vector, array![1.0f32, 0.0]);
        assert_eq!(oov.oov, vec!["zzzunknown".to_string()]);
        let none = embed_label(&ClassDescriptor::new("d".into(), "qqq").unwrap(), &s);
        assert!(matches!(none, Err(Error::UnembeddableLabel(_))));
    }

    #[test]
    fn nearest_neighbor_examples() {
        let e = emb("q", &[1.0, 0.0]);
        let r = 1.0 / 2f32.sqrt();
        let (id, sim) = nearest_neighbor(&e, &[emb("a", &[0.0, 1.0]), emb("b", &[r, r])]).unwrap();
        assert_eq!(id.as_str(), "b");
        assert!((sim - 1.0 / 2f64.sqrt()).abs() < 1e-7);
        let (id, sim) = nearest_neighbor(&e, &[emb("x", &[2.0, 0.0]), emb("a", &[0.0, 1.0])]).unwrap();
        assert_eq!((id.as_str(), sim), ("x", 1.0));
        let (id, sim) = nearest_neighbor(&e, &[emb("c", &[0.0, 1.0]), emb("b", &[0.0, -3.0])]).unwrap();
        assert_eq!((id.as_str(), sim), ("b", 0.0));
        assert!(nearest_neighbor(&emb("z", &[0.0, 0.0]), &[e.clone()]).is_err());
        assert!(nearest_neighbor(&e, &[]).is_err());
    }

    fn vec_strategy() -> impl Strategy<Value = Vec<f32>> {
        proptest::collection::vec(-1.0f32..1.0, 3)
    }

    proptest! {
        #[test]
        fn embedding_ignores_token_order(a in vec_strategy(), b in vec_strategy(), c in vec_strategy()) {
            let s = store(&[("x", &a), ("y", &b), ("z", &c)]);
            let fwd = embed_label(&ClassDescriptor::new("1".into(), "x y z").unwrap(), &s).unwrap();
            let rev = embed_label(&ClassDescriptor::new("1".into(), "z x y").unwrap(), &s).unwrap();
            prop_assert_eq!(fwd.vector, rev.vector);
        }

        #[test]
        fn repeated_word_equals_word(a in vec_strategy(), k in 1usize..6) {
            let s = store(&[("w", &a)]);
            let label = vec!["w"; k].join(" ");
            let e = embed_label(&ClassDescriptor::new("1".into(), label).unwrap(), &s).unwrap();
            for (x, y) in e.vector.iter().zip(&a) {
                prop_assert!((x - y).abs() <= 1e-6 * y.abs().max(1.0));
            }
        }

        #[test]
        fn nearest_neighbor_is_scale_invariant(
            q in vec_strategy(),
            cands in proptest::collection::vec(vec_strategy(), 1..6),
            which in 0usize..6,
            factor in 0.1f32..10.0,
        ) {
            prop_assume!(q.iter().any(|v| v.abs() > 1e-3));
            prop_assume!(cands.iter().all(|c| c.iter().any(|v| v.abs() > 1e-3)));
            let e = emb("q", &q);
            let base: Vec<_> = cands.iter().enumerate().map(|(i, c)| emb(&format!("c{i}"), c)).collect();
            let mut scaled = base.clone();
            let k = which % scaled.len();
            scaled[k].vector.mapv_inplace(|v| v * factor);
            let (a, sa) = nearest_neighbor(&e, &base).unwrap();
            let (b, sb) = nearest_neighbor(&e, &scaled).unwrap();
            prop_assert!((sa - sb).abs() < 1e-5);
            if a != b {
                // only a near tie may flip
                let other = cosine(e.vector.view(), base.iter().find(|c| c.class == b).unwrap().vector.view()).unwrap();
                prop_assert!((sa - other).abs() < 1e-5);
            }
        }
    }
}
