//! Labeled atom corpora: ingestion, the category tree, train/test
//! partitioning and randomly relabeled null sets.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{Error, Result};

/// Root-to-node list of category names.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct CategoryPath(Vec<String>);

impl CategoryPath {
    pub fn new<S: Into<String>>(segments: impl IntoIterator<Item = S>) -> Result<Self> {
        let segments: Vec<String> = segments.into_iter().map(Into::into).collect();
        if segments.is_empty() {
            return Err(Error::invalid("category", "empty path"));
        }
        if segments.iter().any(|s| s.is_empty()) {
            return Err(Error::invalid(
                "category",
                format!("empty segment in {:?}", segments),
            ));
        }
        Ok(CategoryPath(segments))
    }

    pub fn segments(&self) -> &[String] {
        &self.0
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn name(&self) -> &str {
        self.0.last().expect("non-empty path")
    }

    pub fn parent(&self) -> Option<CategoryPath> {
        (self.0.len() > 1).then(|| CategoryPath(self.0[..self.0.len() - 1].to_vec()))
    }
}

impl TryFrom<Vec<String>> for CategoryPath {
    type Error = Error;

    fn try_from(segments: Vec<String>) -> Result<Self> {
        CategoryPath::new(segments)
    }
}

impl From<CategoryPath> for Vec<String> {
    fn from(path: CategoryPath) -> Self {
        path.0
    }
}

impl fmt::Display for CategoryPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("/"))
    }
}

/// A paragraph-length unit of text with its category label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub id: u64,
    pub tokens: Vec<String>,
    pub category: CategoryPath,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeNode {
    pub path: CategoryPath,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

/// The user's category taxonomy.
///
/// Node ids are dense and assigned in insertion order, ancestors before
/// descendants. Top-level names hang off an implicit unnamed root that is
/// not itself a node, so corpora with several top-level categories work.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<CategoryPath>", into = "Vec<CategoryPath>")]
pub struct PimsTree {
    nodes: Vec<TreeNode>,
    index: HashMap<CategoryPath, usize>,
}

impl PimsTree {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts `path` and any missing ancestors; returns the node id.
    pub fn insert(&mut self, path: &CategoryPath) -> usize {
        if let Some(&id) = self.index.get(path) {
            return id;
        }
        let parent = path.parent().map(|p| self.insert(&p));
        let id = self.nodes.len();
        self.nodes.push(TreeNode {
            path: path.clone(),
            parent,
            children: Vec::new(),
        });
        if let Some(p) = parent {
            self.nodes[p].children.push(id);
        }
        self.index.insert(path.clone(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_index(&self, path: &CategoryPath) -> Option<usize> {
        self.index.get(path).copied()
    }

    pub fn resolve(&self, path: &CategoryPath) -> Result<usize> {
        self.node_index(path)
            .ok_or_else(|| Error::UnknownCategory(path.to_string()))
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn path(&self, id: usize) -> &CategoryPath {
        &self.nodes[id].path
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn roots(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.parent.is_none())
            .map(|(i, _)| i)
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.children.is_empty())
            .map(|(i, _)| i)
    }
}

impl From<Vec<CategoryPath>> for PimsTree {
    fn from(paths: Vec<CategoryPath>) -> Self {
        let mut tree = PimsTree::new();
        for p in &paths {
            tree.insert(p);
        }
        tree
    }
}

impl From<PimsTree> for Vec<CategoryPath> {
    fn from(tree: PimsTree) -> Self {
        tree.nodes.into_iter().map(|n| n.path).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Atoms, their taxonomy and a train/test tag per atom.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub atoms: Vec<Atom>,
    pub tree: PimsTree,
    pub split: Vec<Split>,
}

impl Dataset {
    /// Builds a dataset with every atom tagged train. The tree is the union
    /// of the atoms' category paths.
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Empty("no atoms".into()));
        }
        let mut tree = PimsTree::new();
        for atom in &atoms {
            if atom.tokens.is_empty() {
                return Err(Error::invalid(
                    "atom",
                    format!("atom {} has no tokens", atom.id),
                ));
            }
            tree.insert(&atom.category);
        }
        let split = vec![Split::Train; atoms.len()];
        Ok(Dataset { atoms, tree, split })
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn label(&self, i: usize) -> usize {
        self.tree
            .node_index(&self.atoms[i].category)
            .expect("dataset labels resolve in its tree")
    }

    pub fn indices(&self, which: Split) -> Vec<usize> {
        (0..self.atoms.len())
            .filter(|&i| self.split[i] == which)
            .collect()
    }

    pub fn train(&self) -> impl Iterator<Item = &Atom> + '_ {
        self.atoms
            .iter()
            .zip(&self.split)
            .filter(|(_, s)| **s == Split::Train)
            .map(|(a, _)| a)
    }

    pub fn test(&self) -> impl Iterator<Item = &Atom> + '_ {
        self.atoms
            .iter()
            .zip(&self.split)
            .filter(|(_, s)| **s == Split::Test)
            .map(|(a, _)| a)
    }

    /// Node ids used as labels anywhere in the dataset, ascending.
    pub fn observed_labels(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = (0..self.atoms.len()).map(|i| self.label(i)).collect();
        set.into_iter().collect()
    }
}

/// Lowercases and splits on every run of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Deserialize)]
struct JsonlRecord {
    text: String,
    category: Vec<String>,
}

/// Parses JSONL records `{"text": ..., "category": [...]}`. Blank lines are
/// ignored; ids follow record order.
pub fn parse_jsonl(content: &str) -> Result<Dataset> {
    let mut atoms = Vec::new();
    for (n, line) in content.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: JsonlRecord = serde_json::from_str(line).map_err(|e| Error::Malformed {
            line: line_no,
            reason: e.to_string(),
        })?;
        let category = CategoryPath::new(record.category).map_err(|e| Error::Malformed {
            line: line_no,
            reason: e.to_string(),
        })?;
        let tokens = tokenize(&record.text);
        if tokens.is_empty() {
            return Err(Error::EmptyAtom(line_no));
        }
        atoms.push(Atom {
            id: atoms.len() as u64,
            tokens,
            category,
        });
    }
    if atoms.is_empty() {
        return Err(Error::Empty("corpus has no records".into()));
    }
    Dataset::new(atoms)
}

pub fn ingest_jsonl(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&content)
}

/// Splits text into paragraphs separated by lines that are blank or
/// whitespace-only.
pub fn paragraphs(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                out.push(current.join("\n"));
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        out.push(current.join("\n"));
    }
    out
}

fn collect_txt(dir: &Path, files: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<_>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_txt(&path, files)?;
        } else if path.extension().is_some_and(|ext| ext == "txt") {
            files.push(path);
        }
    }
    Ok(())
}

/// Reads a directory tree where each subdirectory is a category segment and
/// each `.txt` file holds blank-line-separated paragraphs, one atom each.
/// Files are visited in sorted path order.
pub fn ingest_tree(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let mut files = Vec::new();
    collect_txt(dir, &mut files)?;
    if files.is_empty() {
        return Err(Error::Empty(format!("no .txt files under {}", dir.display())));
    }
    let mut atoms = Vec::new();
    for file in files {
        let rel = file
            .parent()
            .and_then(|p| p.strip_prefix(dir).ok())
            .unwrap_or_else(|| Path::new(""));
        let segments: Vec<String> = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect();
        let category = CategoryPath::new(segments).map_err(|_| {
            Error::invalid(
                "corpus layout",
                format!("{} is not inside a category directory", file.display()),
            )
        })?;
        let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        for (k, para) in paragraphs(&text).iter().enumerate() {
            let tokens = tokenize(para);
            if tokens.is_empty() {
                return Err(Error::EmptyParagraph(format!(
                    "{} paragraph {}",
                    file.display(),
                    k + 1
                )));
            }
            atoms.push(Atom {
                id: atoms.len() as u64,
                tokens,
                category: category.clone(),
            });
        }
    }
    Dataset::new(atoms)
}

/// Seeded, stratified train/test split.
///
/// The test partition has `round(N * test_fraction)` atoms (at least one,
/// at most `N - 1`). Each category receives `floor(n_c * test_fraction)`
/// test atoms, and the remainder goes to the categories with the largest
/// fractional quotas, ties to the lower node id.
pub fn partition(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<Dataset> {
    let n = dataset.len();
    if n < 2 {
        return Err(Error::invalid(
            "partition",
            format!("need at least 2 atoms, have {n}"),
        ));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(
            "test_fraction",
            format!("{test_fraction} is not in (0, 1)"),
        ));
    }
    let total = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);

    let mut by_label: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        by_label.entry(dataset.label(i)).or_default().push(i);
    }
    let groups: Vec<(usize, Vec<usize>)> = by_label.into_iter().collect();

    let mut quota: Vec<usize> = groups
        .iter()
        .map(|(_, members)| (members.len() as f64 * test_fraction).floor() as usize)
        .collect();
    let mut assigned: usize = quota.iter().sum();
    // the floors sum to at most round(N f), so this only trims when the
    // N - 1 cap lowered the total
    while assigned > total {
        let k = (0..groups.len()).rev().find(|&k| quota[k] > 0).expect("quota");
        quota[k] -= 1;
        assigned -= 1;
    }
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = groups[a].1.len() as f64 * test_fraction - quota[a] as f64;
        let rb = groups[b].1.len() as f64 * test_fraction - quota[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    while assigned < total {
        let mut progressed = false;
        for &k in &order {
            if assigned == total {
                break;
            }
            if quota[k] < groups[k].1.len() {
                quota[k] += 1;
                assigned += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }

    let mut split = vec![Split::Train; n];
    for ((label, members), &q) in groups.iter().zip(&quota) {
        let mut members = members.clone();
        members.shuffle(&mut rng::rng_for(seed, *label as u64));
        for &i in &members[..q] {
            split[i] = Split::Test;
        }
    }
    Ok(Dataset {
        atoms: dataset.atoms.clone(),
        tree: dataset.tree.clone(),
        split,
    })
}

/// A copy of the test partition with random labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NullSet {
    /// Ids of the test atoms, in dataset order.
    pub base: Vec<u64>,
    pub relabels: Vec<CategoryPath>,
    pub seed: u64,
}

/// Draws `k` null sets. Copy `i` relabels every test atom independently and
/// uniformly over the categories observed anywhere in the dataset, using the
/// stream derived from `(seed, i)`.
pub fn make_null_sets(dataset: &Dataset, k: usize, seed: u64) -> Result<Vec<NullSet>> {
    if k == 0 {
        return Err(Error::invalid("null copies", "k must be positive"));
    }
    let test: Vec<u64> = dataset.test().map(|a| a.id).collect();
    if test.is_empty() {
        return Err(Error::Empty("test partition".into()));
    }
    let labels = dataset.observed_labels();
    if labels.len() < 2 {
        return Err(Error::invalid(
            "null set",
            "need at least two observed categories",
        ));
    }
    Ok((0..k)
        .map(|copy| {
            let copy_seed = rng::derive(seed, copy as u64);
            let mut r = rng::rng(copy_seed);
            let relabels = test
                .iter()
                .map(|_| {
                    let node = labels[r.gen_range(0..labels.len())];
                    dataset.tree.path(node).clone()
                })
                .collect();
            NullSet {
                base: test.clone(),
                relabels,
                seed: copy_seed,
            }
        })
        .collect())
}
