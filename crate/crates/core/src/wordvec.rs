//! Word vectors: co-occurrence counting, PPMI factorization, the plain-text
//! vector format, and keyword stems derived from category names.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::corpus::{tokenize, Atom, PimsTree};
use crate::rng;
use crate::{Error, Result};

/// Sparse symmetric co-occurrence counts over a first-occurrence-ordered
/// vocabulary. Only `i <= j` keys are stored.
#[derive(Clone, Debug, PartialEq)]
pub struct Cooccurrence {
    pub vocab: Vec<String>,
    index: HashMap<String, usize>,
    counts: BTreeMap<(usize, usize), f64>,
}

impl Cooccurrence {
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn word_index(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let key = if i <= j { (i, j) } else { (j, i) };
        self.counts.get(&key).copied().unwrap_or(0.0)
    }

    pub fn count(&self, a: &str, b: &str) -> f64 {
        match (self.word_index(a), self.word_index(b)) {
            (Some(i), Some(j)) => self.get(i, j),
            _ => 0.0,
        }
    }

    pub fn nnz(&self) -> usize {
        self.counts.len()
    }

    /// Dense symmetric matrix with `M[i][j] = M[j][i] = count(i, j)`.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.vocab.len();
        let mut m = DMatrix::zeros(n, n);
        for (&(i, j), &c) in &self.counts {
            m[(i, j)] = c;
            m[(j, i)] = c;
        }
        m
    }
}

/// Counts unordered token pairs at distance `1..=window` inside each atom.
/// A word paired with another occurrence of itself lands on the diagonal.
pub fn build_cooccurrence(atoms: &[Atom], window: usize) -> Result<Cooccurrence> {
    if window == 0 {
        return Err(Error::invalid("window", "must be positive"));
    }
    if atoms.is_empty() {
        return Err(Error::Empty("no atoms".into()));
    }
    let mut vocab = Vec::new();
    let mut index = HashMap::new();
    let mut counts = BTreeMap::new();
    for atom in atoms {
        let ids: Vec<usize> = atom
            .tokens
            .iter()
            .map(|t| {
                *index.entry(t.clone()).or_insert_with(|| {
                    vocab.push(t.clone());
                    vocab.len() - 1
                })
            })
            .collect();
        for p in 0..ids.len() {
            for q in p + 1..ids.len().min(p + window + 1) {
                let key = (ids[p].min(ids[q]), ids[p].max(ids[q]));
                *counts.entry(key).or_insert(0.0) += 1.0;
            }
        }
    }
    Ok(Cooccurrence {
        vocab,
        index,
        counts,
    })
}

/// Positive pointwise mutual information of the dense count matrix:
/// `max(0, ln(M_ij * T / (r_i * r_j)))`, zero wherever `M_ij = 0`.
pub fn ppmi(cooc: &Cooccurrence) -> DMatrix<f64> {
    let m = cooc.to_dense();
    let n = m.nrows();
    let rows: Vec<f64> = (0..n).map(|i| m.row(i).sum()).collect();
    let total: f64 = rows.iter().sum();
    DMatrix::from_fn(n, n, |i, j| {
        let c = m[(i, j)];
        if c <= 0.0 {
            return 0.0;
        }
        (c * total / (rows[i] * rows[j])).ln().max(0.0)
    })
}

/// Rank-`d` eigen-factorization `M ≈ B diag(λ) Bᵀ` of a symmetric matrix,
/// keeping the `d` largest (signed) eigenvalues in decreasing order.
#[derive(Clone, Debug)]
pub struct SymmetricFactors {
    pub basis: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
    pub iterations: usize,
}

impl SymmetricFactors {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.basis * DMatrix::from_diagonal(&self.eigenvalues) * self.basis.transpose()
    }

    /// Rows `B diag(sqrt|λ|)`.
    pub fn scaled_rows(&self) -> DMatrix<f64> {
        let scale = self.eigenvalues.map(|l| l.abs().sqrt());
        &self.basis * DMatrix::from_diagonal(&scale)
    }
}

const MAX_SUBSPACE_ITERS: usize = 3000;
const SUBSPACE_TOL: f64 = 1e-10;

/// Orthogonal (subspace) iteration with a Rayleigh-Ritz step per sweep,
/// started from a seeded random block of `d` plus oversampling columns.
///
/// The iteration converges toward the eigenvalues of largest magnitude; the
/// `d` Ritz pairs with the largest signed eigenvalues are kept, since for a
/// PPMI matrix the positive part of the spectrum carries word similarity.
/// Each basis column's largest-magnitude entry is made positive.
pub fn factorize_symmetric(m: &DMatrix<f64>, d: usize, seed: u64) -> Result<SymmetricFactors> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::invalid("matrix", "not square"));
    }
    if d == 0 || d > n {
        return Err(Error::invalid(
            "dimension",
            format!("d = {d} must be in 1..={n} (vocabulary size)"),
        ));
    }
    let block = n.min(2 * d + 8);
    let norm = m.norm().max(f64::MIN_POSITIVE);
    let mut r = rng::rng(seed);
    let mut q = DMatrix::from_fn(n, block, |_, _| r.gen_range(-1.0..1.0));
    let mut lambda = DVector::zeros(block);
    let mut iterations = 0;
    for it in 1..=MAX_SUBSPACE_ITERS {
        iterations = it;
        q = (m * &q).qr().q();
        let mq = m * &q;
        let b = q.transpose() * &mq;
        let eig = SymmetricEigen::new((&b + b.transpose()) * 0.5);
        let mut order: Vec<usize> = (0..block).collect();
        order.sort_by(|&a, &c| {
            eig.eigenvalues[c]
                .total_cmp(&eig.eigenvalues[a])
                .then(a.cmp(&c))
        });
        let w = DMatrix::from_fn(block, block, |i, k| eig.eigenvectors[(i, order[k])]);
        lambda = DVector::from_fn(block, |k, _| eig.eigenvalues[order[k]]);
        q = &q * w;
        let qd = q.columns(0, d);
        let residual = (m * qd - qd * DMatrix::from_diagonal(&lambda.rows(0, d).into_owned())).norm() / norm;
        if block == n || residual < SUBSPACE_TOL {
            break;
        }
    }
    let mut basis = q.columns(0, d).into_owned();
    for mut col in basis.column_iter_mut() {
        let pivot = col.iter().copied().fold(0.0_f64, |best, v| {
            if v.abs() > best.abs() {
                v
            } else {
                best
            }
        });
        if pivot < 0.0 {
            col.neg_mut();
        }
    }
    Ok(SymmetricFactors {
        basis,
        eigenvalues: lambda.rows(0, d).into_owned(),
        iterations,
    })
}

/// Word vectors from the rank-`d` factorization of the PPMI matrix.
pub fn train_embeddings(cooc: &Cooccurrence, d: usize, seed: u64) -> Result<EmbeddingTable> {
    if cooc.nnz() == 0 {
        return Err(Error::Empty("co-occurrence matrix has no pairs".into()));
    }
    if d > cooc.vocab_size() {
        return Err(Error::invalid(
            "input dimensions",
            format!("d = {d} exceeds vocabulary size {}", cooc.vocab_size()),
        ));
    }
    let factors = factorize_symmetric(&ppmi(cooc), d, seed)?;
    let rows = factors.scaled_rows();
    let mut vectors = Vec::with_capacity(rows.len());
    for i in 0..rows.nrows() {
        vectors.extend(rows.row(i).iter());
    }
    EmbeddingTable::new(cooc.vocab.clone(), vectors, d)
}

/// Word → dense vector map.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<f64>,
    dim: usize,
}

impl EmbeddingTable {
    pub fn new(words: Vec<String>, vectors: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension", "must be positive"));
        }
        if vectors.len() != words.len() * dim {
            return Err(Error::LengthMismatch {
                expected: words.len() * dim,
                actual: vectors.len(),
            });
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("embedding", "non-finite component"));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::DuplicateWord {
                    word: w.clone(),
                    line: i + 1,
                });
            }
        }
        Ok(EmbeddingTable {
            words,
            index,
            vectors,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.index_of(word).map(|i| self.row(i))
    }

    /// One line per word: the word, then `d` space-separated values in
    /// shortest round-trip decimal form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, w) in self.words.iter().enumerate() {
            out.push_str(w);
            for v in self.row(i) {
                write!(out, " {v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut words = Vec::new();
        let mut vectors = Vec::new();
        let mut dim = None;
        let mut seen = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let word = fields.next().expect("non-blank line");
            let values: Vec<f64> = fields
                .map(|f| {
                    f.parse::<f64>().map_err(|e| Error::Malformed {
                        line: line_no,
                        reason: format!("{f:?}: {e}"),
                    })
                })
                .collect::<Result<_>>()?;
            match dim {
                None if values.is_empty() => {
                    return Err(Error::Malformed {
                        line: line_no,
                        reason: "no vector components".into(),
                    })
                }
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => return Err(Error::DimensionMismatch(line_no)),
                Some(_) => {}
            }
            if seen.insert(word.to_string(), line_no).is_some() {
                return Err(Error::DuplicateWord {
                    word: word.to_string(),
                    line: line_no,
                });
            }
            words.push(word.to_string());
            vectors.extend(values);
        }
        let dim = dim.ok_or_else(|| Error::Empty("word-vector file".into()))?;
        EmbeddingTable::new(words, vectors, dim)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    EmbeddingTable::parse(&text)
}

const SUFFIX_RULES: &[(&str, &str)] = &[
    ("ations", "ate"),
    ("ings", ""),
    ("ing", ""),
    ("es", ""),
    ("s", ""),
    ("ed", ""),
];
const MIN_STEM: usize = 3;

fn strip_once(word: &str) -> Option<String> {
    for &(suffix, replacement) in SUFFIX_RULES {
        let Some(base) = word.strip_suffix(suffix) else {
            continue;
        };
        if base.chars().count() < MIN_STEM {
            continue;
        }
        // "es" only after a sibilant (boxes, classes); otherwise "s" handles
        // it (voltages -> voltage). A double "ss" is never split.
        if suffix == "es" && !["s", "x", "z", "ch", "sh"].iter().any(|s| base.ends_with(s)) {
            continue;
        }
        if suffix == "s" && base.ends_with('s') {
            continue;
        }
        return Some(format!("{base}{replacement}"));
    }
    None
}

/// Suffix-stripping stemmer. Rules apply until none matches, which makes the
/// result a fixed point.
pub fn stem(token: &str) -> String {
    let mut word = token.to_string();
    while let Some(next) = strip_once(&word) {
        word = next;
    }
    word
}

/// Stems that mark an atom token as a keyword, and the factor its vector is
/// scaled by.
#[derive(Clone, Debug, PartialEq)]
pub struct KeywordSet {
    pub stems: BTreeSet<String>,
    pub weight: f64,
}

impl KeywordSet {
    /// No keywords, unit weight.
    pub fn none() -> Self {
        KeywordSet {
            stems: BTreeSet::new(),
            weight: 1.0,
        }
    }

    pub fn matches(&self, token: &str) -> bool {
        !self.stems.is_empty() && self.stems.contains(&stem(token))
    }

    /// Weight applied to `token`'s vector.
    pub fn factor(&self, token: &str) -> f64 {
        if self.matches(token) {
            self.weight
        } else {
            1.0
        }
    }
}

/// Every node name is split like atom text and each piece stemmed.
pub fn extract_keywords(tree: &PimsTree, weight: f64) -> KeywordSet {
    let stems = tree
        .nodes()
        .iter()
        .flat_map(|n| tokenize(n.path.name()))
        .map(|t| stem(&t))
        .collect();
    KeywordSet { stems, weight }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CategoryPath;

    fn atom(id: u64, words: &str) -> Atom {
        Atom {
            id,
            tokens: words.split_whitespace().map(String::from).collect(),
            category: CategoryPath::new(["c"]).unwrap(),
        }
    }

    #[test]
    fn cooccurrence_window_one() {
        let c = build_cooccurrence(&[atom(0, "a b a")], 1).unwrap();
        assert_eq!(c.count("a", "b"), 2.0);
        assert_eq!(c.count("b", "a"), 2.0);
        assert_eq!(c.count("a", "a"), 0.0);
        let c2 = build_cooccurrence(&[atom(0, "a b a")], 2).unwrap();
        assert_eq!(c2.count("a", "a"), 1.0);
        assert!(build_cooccurrence(&[atom(0, "a")], 0).is_err());
    }

    #[test]
    fn saturated_window_counts_all_pairs() {
        let a = atom(0, "p q r s p t");
        let n = a.tokens.len();
        for window in [n - 1, n + 3] {
            let c = build_cooccurrence(std::slice::from_ref(&a), window).unwrap();
            let total: f64 = c.counts.values().sum();
            assert_eq!(total, (n * (n - 1) / 2) as f64);
        }
    }

    #[test]
    fn ppmi_is_nonnegative_and_symmetric() {
        let atoms = [atom(0, "a b c a b"), atom(1, "c d e d"), atom(2, "a e")];
        let p = ppmi(&build_cooccurrence(&atoms, 2).unwrap());
        assert!(p.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert_eq!(p, p.transpose());
    }

    #[test]
    fn full_rank_factorization_reconstructs() {
        let atoms = [
            atom(0, "a b c a b d"),
            atom(1, "c d e d f"),
            atom(2, "a e f b"),
        ];
        let c = build_cooccurrence(&atoms, 2).unwrap();
        let p = ppmi(&c);
        let f = factorize_symmetric(&p, c.vocab_size(), 3).unwrap();
        let err = (f.reconstruct() - &p).norm() / p.norm();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn exclusive_pair_vectors_align() {
        let atoms = [
            atom(0, "a b a b a"),
            atom(1, "a b"),
            atom(2, "c d c d"),
        ];
        let c = build_cooccurrence(&atoms, 2).unwrap();
        let t = train_embeddings(&c, 2, 5).unwrap();
        let (a, b) = (t.get("a").unwrap(), t.get("b").unwrap());
        let cos = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
            / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt());
        assert!(cos > 0.9, "cosine {cos}");
    }

    #[test]
    fn dimension_bounds() {
        let c = build_cooccurrence(&[atom(0, "a b c")], 1).unwrap();
        assert!(train_embeddings(&c, 4, 0).is_err());
        assert!(train_embeddings(&c, 3, 0).is_ok());
        let lonely = build_cooccurrence(&[atom(0, "a")], 1).unwrap();
        assert!(train_embeddings(&lonely, 1, 0).is_err());
    }

    #[test]
    fn vector_text_format() {
        let t = EmbeddingTable::parse("a 1 2\nb 0.5 -3\nc 1e-3 4\n").unwrap();
        assert_eq!((t.len(), t.dim()), (3, 2));
        assert_eq!(t.get("b").unwrap(), &[0.5, -3.0]);
        let err = EmbeddingTable::parse("a 1 2\nb 1 2 3\n").unwrap_err();
        assert_eq!(err.to_string(), "dimension mismatch line 2");
        assert!(matches!(
            EmbeddingTable::parse("a 1\na 2\n").unwrap_err(),
            Error::DuplicateWord { line: 2, .. }
        ));
        assert!(EmbeddingTable::parse("").is_err());
        assert!(EmbeddingTable::parse("a 1 x\n").is_err());
    }

    #[test]
    fn save_and_load() {
        let t = EmbeddingTable::new(
            vec!["x".into(), "y".into()],
            vec![0.1, 1.0 / 3.0, -2.5e-300, std::f64::consts::PI],
            2,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.vec");
        t.save(&path).unwrap();
        assert_eq!(load_embeddings(&path).unwrap(), t);
    }

    #[test]
    fn stemmer_rules() {
        assert_eq!(stem("voltages"), "voltage");
        assert_eq!(stem("voltage"), "voltage");
        assert_eq!(stem("cat"), "cat");
        assert_eq!(stem("cats"), "cat");
        assert_eq!(stem("volts"), "volt");
        assert_eq!(stem("relations"), "relate");
        assert_eq!(stem("bearings"), "bear");
        assert_eq!(stem("boxes"), "box");
        assert_eq!(stem("classes"), "class");
        assert_eq!(stem("mechanics"), "mechanic");
        assert_eq!(stem("heated"), "heat");
        assert_eq!(stem("sing"), "sing");
    }

    #[test]
    fn keywords_from_tree() {
        let mut tree = PimsTree::new();
        tree.insert(&CategoryPath::new(["voltage"]).unwrap());
        tree.insert(&CategoryPath::new(["mechanics"]).unwrap());
        tree.insert(&CategoryPath::new(["mechanics", "RL-circuits"]).unwrap());
        let k = extract_keywords(&tree, 5.0);
        let expected: BTreeSet<String> = ["voltage", "mechanic", "rl", "circuit"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(k.stems, expected);
        assert_eq!(k.weight, 5.0);
        assert!(k.matches("voltages"));
        assert_eq!(k.factor("circuits"), 5.0);
        assert_eq!(k.factor("spring"), 1.0);
    }

    proptest::proptest! {
        #[test]
        fn stem_is_idempotent_and_shrinks(word in "[a-z]{0,12}") {
            let s = stem(&word);
            proptest::prop_assert_eq!(stem(&s), s.clone());
            proptest::prop_assert!(s.len() <= word.len());
        }
    }
}
