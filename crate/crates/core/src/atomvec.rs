//! Atom embeddings: bag-of-words sum and mean, ∇ (difference-triangle)
//! sums, and distributed-memory paragraph vectors (PV-DM).

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Atom;
use crate::rng;
use crate::wordvec::{EmbeddingTable, KeywordSet};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMethod {
    BowSum,
    BowMean,
    Nabla,
    Pvdm,
}

impl EmbeddingMethod {
    pub const ALL: [EmbeddingMethod; 4] = [
        EmbeddingMethod::BowSum,
        EmbeddingMethod::BowMean,
        EmbeddingMethod::Pvdm,
        EmbeddingMethod::Nabla,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EmbeddingMethod::BowSum => "bow_sum",
            EmbeddingMethod::BowMean => "bow_mean",
            EmbeddingMethod::Nabla => "nabla",
            EmbeddingMethod::Pvdm => "pvdm",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BowMode {
    Sum,
    Mean,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AtomVector {
    pub values: Vec<f64>,
    pub method: EmbeddingMethod,
}

impl AtomVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

fn add_assign(acc: &mut [f64], v: &[f64]) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += x;
    }
}

/// In-vocabulary token vectors in atom order, each scaled by the keyword
/// weight when its stem is a keyword. Out-of-vocabulary tokens are dropped.
pub fn weight_tokens(atom: &Atom, table: &EmbeddingTable, keywords: &KeywordSet) -> Result<Vec<Vec<f64>>> {
    let rows: Vec<Vec<f64>> = atom
        .tokens
        .iter()
        .filter_map(|t| {
            table.get(t).map(|row| {
                let f = keywords.factor(t);
                row.iter().map(|v| v * f).collect()
            })
        })
        .collect();
    if rows.is_empty() {
        return Err(Error::Unembeddable(atom.id));
    }
    Ok(rows)
}

pub fn embed_bow(atom: &Atom, table: &EmbeddingTable, keywords: &KeywordSet, mode: BowMode) -> Result<AtomVector> {
    let rows = weight_tokens(atom, table, keywords)?;
    let mut acc = vec![0.0; table.dim()];
    for r in &rows {
        add_assign(&mut acc, r);
    }
    let method = match mode {
        BowMode::Sum => EmbeddingMethod::BowSum,
        BowMode::Mean => {
            let n = rows.len() as f64;
            acc.iter_mut().for_each(|v| *v /= n);
            EmbeddingMethod::BowMean
        }
    };
    Ok(AtomVector {
        values: acc,
        method,
    })
}

/// Inverted Pascal triangle of differences. Level 0 holds the token vectors
/// and entry `i` of level `j` is `level[j-1][i+1] - level[j-1][i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NablaTriangle {
    pub levels: Vec<Vec<Vec<f64>>>,
}

impl NablaTriangle {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let mut levels = vec![rows];
        while levels.last().is_some_and(|l| l.len() > 1) {
            let next = difference_level(levels.last().unwrap());
            levels.push(next);
        }
        NablaTriangle { levels }
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn level_sum(&self, j: usize) -> Option<Vec<f64>> {
        let level = self.levels.get(j)?;
        let mut acc = vec![0.0; level[0].len()];
        for v in level {
            add_assign(&mut acc, v);
        }
        Some(acc)
    }
}

fn difference_level(prev: &[Vec<f64>]) -> Vec<Vec<f64>> {
    prev.windows(2)
        .map(|w| w[1].iter().zip(&w[0]).map(|(b, a)| b - a).collect())
        .collect()
}

pub fn nabla_table(atom: &Atom, table: &EmbeddingTable, keywords: &KeywordSet) -> Result<NablaTriangle> {
    Ok(NablaTriangle::from_rows(weight_tokens(atom, table, keywords)?))
}

/// Sum of level `j` of an atom's difference triangle.
pub fn embed_nabla(atom: &Atom, table: &EmbeddingTable, keywords: &KeywordSet, level: usize) -> Result<AtomVector> {
    let rows = weight_tokens(atom, table, keywords)?;
    Ok(AtomVector {
        values: nabla_sum(rows, level)?,
        method: EmbeddingMethod::Nabla,
    })
}

/// Concatenation of the level sums for each entry of `levels`.
pub fn embed_nabla_levels(
    atom: &Atom,
    table: &EmbeddingTable,
    keywords: &KeywordSet,
    levels: &[usize],
) -> Result<AtomVector> {
    let rows = weight_tokens(atom, table, keywords)?;
    let mut values = Vec::with_capacity(levels.len() * table.dim());
    for &j in levels {
        values.extend(nabla_sum(rows.clone(), j)?);
    }
    Ok(AtomVector {
        values,
        method: EmbeddingMethod::Nabla,
    })
}

/// Level-`j` sum of the difference triangle over `rows`.
pub fn nabla_sum(rows: Vec<Vec<f64>>, level: usize) -> Result<Vec<f64>> {
    if level >= rows.len() {
        return Err(Error::LevelExceedsLength {
            level,
            tokens: rows.len(),
        });
    }
    let mut current = rows;
    for _ in 0..level {
        current = difference_level(&current);
    }
    let mut acc = vec![0.0; current[0].len()];
    for v in &current {
        add_assign(&mut acc, v);
    }
    Ok(acc)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PvdmParams {
    pub vec_size: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PvdmParams {
    fn default() -> Self {
        PvdmParams {
            vec_size: 20,
            window: 2,
            negatives: 5,
            epochs: 20,
            lr: 0.05,
            seed: 0,
        }
    }
}

/// Trained PV-DM model: context ("in") and prediction ("out") word vectors
/// plus one ID vector per training atom.
#[derive(Clone, Debug, PartialEq)]
pub struct PvdmModel {
    pub params: PvdmParams,
    words: Vec<String>,
    index: HashMap<String, usize>,
    word_in: Vec<f64>,
    word_out: Vec<f64>,
    /// Training-corpus frequency of each word; drives noise sampling.
    counts: Vec<f64>,
    pub atom_ids: BTreeMap<u64, Vec<f64>>,
    /// Negative-sampling objective per training position, after each epoch.
    pub loss_history: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn uniform_vec(r: &mut rng::Rng, k: usize) -> Vec<f64> {
    let half = 0.5 / k as f64;
    (0..k).map(|_| r.gen_range(-half..half)).collect()
}

/// One training position: target word, its context words and fixed noise
/// words.
struct Position {
    atom: usize,
    target: usize,
    context: Vec<usize>,
    noise: Vec<usize>,
}

impl PvdmModel {
    pub fn vec_size(&self) -> usize {
        self.params.vec_size
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    fn row(m: &[f64], i: usize, k: usize) -> &[f64] {
        &m[i * k..(i + 1) * k]
    }

    fn row_mut(m: &mut [f64], i: usize, k: usize) -> &mut [f64] {
        &mut m[i * k..(i + 1) * k]
    }

    fn ids(&self, atom: &Atom) -> Vec<usize> {
        atom.tokens
            .iter()
            .filter_map(|t| self.index.get(t).copied())
            .collect()
    }

    fn context(seq: &[usize], p: usize, window: usize) -> Vec<usize> {
        let lo = p.saturating_sub(window);
        let hi = (p + window + 1).min(seq.len());
        (lo..hi).filter(|&q| q != p).map(|q| seq[q]).collect()
    }

    /// Hidden vector `(id + Σ ctx·f) / (1 + |ctx|)`.
    fn hidden(&self, id: &[f64], context: &[(usize, f64)]) -> Vec<f64> {
        let k = self.params.vec_size;
        let mut h = id.to_vec();
        for &(c, f) in context {
            for (hv, w) in h.iter_mut().zip(Self::row(&self.word_in, c, k)) {
                *hv += w * f;
            }
        }
        let n = (1 + context.len()) as f64;
        h.iter_mut().for_each(|v| *v /= n);
        h
    }

    fn position_loss(&self, h: &[f64], target: usize, noise: &[usize]) -> f64 {
        let k = self.params.vec_size;
        let mut loss = -sigmoid(dot(Self::row(&self.word_out, target, k), h)).max(1e-300).ln();
        for &n in noise {
            loss -= sigmoid(-dot(Self::row(&self.word_out, n, k), h)).max(1e-300).ln();
        }
        loss
    }

    fn objective(&self, positions: &[Position], ids: &[Vec<f64>]) -> f64 {
        if positions.is_empty() {
            return 0.0;
        }
        let total: f64 = positions
            .iter()
            .map(|p| {
                let ctx: Vec<(usize, f64)> = p.context.iter().map(|&c| (c, 1.0)).collect();
                let h = self.hidden(&ids[p.atom], &ctx);
                self.position_loss(&h, p.target, &p.noise)
            })
            .sum();
        total / positions.len() as f64
    }

    /// Negative-sampling gradients for one position: the learning-rate
    /// scaled gradient for the hidden vector, and the scalar coefficient for
    /// each touched prediction row (row += coefficient * h).
    fn gradients(&self, h: &[f64], target: usize, noise: &[usize], lr: f64) -> (Vec<f64>, Vec<(usize, f64)>) {
        let k = self.params.vec_size;
        let mut grad_h = vec![0.0; k];
        let mut coeffs = Vec::with_capacity(1 + noise.len());
        let pairs = std::iter::once((target, 1.0)).chain(noise.iter().map(|&n| (n, 0.0)));
        for (w, label) in pairs {
            let out = Self::row(&self.word_out, w, k);
            let g = lr * (label - sigmoid(dot(out, h)));
            for (gh, o) in grad_h.iter_mut().zip(out) {
                *gh += g * o;
            }
            coeffs.push((w, g));
        }
        (grad_h, coeffs)
    }

    /// Fits a fresh ID vector for `atom` with every word matrix frozen.
    /// Context vectors of keyword tokens are scaled by the keyword weight.
    pub fn infer(&self, atom: &Atom, keywords: &KeywordSet, steps: usize, lr: f64, seed: u64) -> Result<AtomVector> {
        let k = self.params.vec_size;
        let seq: Vec<(usize, f64)> = atom
            .tokens
            .iter()
            .filter_map(|t| self.index.get(t).map(|&i| (i, keywords.factor(t))))
            .collect();
        if seq.is_empty() {
            return Err(Error::Unembeddable(atom.id));
        }
        let mut id = uniform_vec(&mut rng::rng(seed), k);
        let noise = self.noise_table();
        let mut r = rng::rng_for(seed, 1);
        let positions: Vec<(usize, Vec<(usize, f64)>, Vec<usize>)> = (0..seq.len())
            .map(|p| {
                let lo = p.saturating_sub(self.params.window);
                let hi = (p + self.params.window + 1).min(seq.len());
                let ctx = (lo..hi).filter(|&q| q != p).map(|q| seq[q]).collect();
                let negs = draw_noise(&noise, seq[p].0, self.params.negatives, &mut r);
                (seq[p].0, ctx, negs)
            })
            .collect();
        for _ in 0..steps {
            for (target, ctx, negs) in &positions {
                let h = self.hidden(&id, ctx);
                let (grad_h, _) = self.gradients(&h, *target, negs, lr);
                let n = (1 + ctx.len()) as f64;
                for (v, g) in id.iter_mut().zip(&grad_h) {
                    *v += g / n;
                }
            }
        }
        Ok(AtomVector {
            values: id,
            method: EmbeddingMethod::Pvdm,
        })
    }

    /// Cumulative unigram^0.75 table over words seen in training.
    fn noise_table(&self) -> Vec<(usize, f64)> {
        let mut acc = 0.0;
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0.0)
            .map(|(w, &c)| {
                acc += c.powf(0.75);
                (w, acc)
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let p = &self.params;
        let mut out = String::new();
        writeln!(out, "{PVDM_HEADER}").unwrap();
        writeln!(
            out,
            "params {} {} {} {} {} {}",
            p.vec_size, p.window, p.negatives, p.epochs, p.lr, p.seed
        )
        .unwrap();
        write!(out, "loss {}", self.loss_history.len()).unwrap();
        for l in &self.loss_history {
            write!(out, " {l}").unwrap();
        }
        out.push('\n');
        writeln!(out, "words {}", self.words.len()).unwrap();
        let k = p.vec_size;
        for (i, w) in self.words.iter().enumerate() {
            write!(out, "{w} {}", self.counts[i]).unwrap();
            for v in Self::row(&self.word_in, i, k).iter().chain(Self::row(&self.word_out, i, k)) {
                write!(out, " {v}").unwrap();
            }
            out.push('\n');
        }
        writeln!(out, "atoms {}", self.atom_ids.len()).unwrap();
        for (id, v) in &self.atom_ids {
            write!(out, "{id}").unwrap();
            for x in v {
                write!(out, " {x}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut next = |what: &str| {
            lines
                .next()
                .map(|(n, l)| (n + 1, l))
                .ok_or_else(|| Error::Malformed {
                    line: 0,
                    reason: format!("missing {what}"),
                })
        };
        let (n, header) = next("header")?;
        if header != PVDM_HEADER {
            return Err(Error::Malformed {
                line: n,
                reason: format!("expected {PVDM_HEADER:?}"),
            });
        }
        let (n, params) = next("params")?;
        let f = fields(params, "params", n)?;
        if f.len() != 6 {
            return Err(malformed(n, "params needs 6 fields"));
        }
        let params = PvdmParams {
            vec_size: num(f[0], n)?,
            window: num(f[1], n)?,
            negatives: num(f[2], n)?,
            epochs: num(f[3], n)?,
            lr: num(f[4], n)?,
            seed: num(f[5], n)?,
        };
        let k = params.vec_size;
        let (n, loss) = next("loss")?;
        let f = fields(loss, "loss", n)?;
        let count: usize = num(f.first().copied().unwrap_or(""), n)?;
        if f.len() != count + 1 {
            return Err(malformed(n, "loss count mismatch"));
        }
        let loss_history = f[1..].iter().map(|v| num(v, n)).collect::<Result<_>>()?;
        let (n, words_line) = next("words")?;
        let v: usize = num(fields(words_line, "words", n)?.first().copied().unwrap_or(""), n)?;
        let mut words = Vec::with_capacity(v);
        let mut index = HashMap::with_capacity(v);
        let mut word_in = Vec::with_capacity(v * k);
        let mut word_out = Vec::with_capacity(v * k);
        let mut counts = Vec::with_capacity(v);
        for _ in 0..v {
            let (n, line) = next("word row")?;
            let mut parts = line.split(' ');
            let w = parts.next().unwrap_or("").to_string();
            let vals: Vec<f64> = parts.map(|x| num(x, n)).collect::<Result<_>>()?;
            if vals.len() != 2 * k + 1 {
                return Err(Error::DimensionMismatch(n));
            }
            if index.insert(w.clone(), words.len()).is_some() {
                return Err(Error::DuplicateWord { word: w, line: n });
            }
            words.push(w);
            counts.push(vals[0]);
            word_in.extend_from_slice(&vals[1..=k]);
            word_out.extend_from_slice(&vals[k + 1..]);
        }
        let (n, atoms_line) = next("atoms")?;
        let m: usize = num(fields(atoms_line, "atoms", n)?.first().copied().unwrap_or(""), n)?;
        let mut atom_ids = BTreeMap::new();
        for _ in 0..m {
            let (n, line) = next("atom row")?;
            let mut parts = line.split(' ');
            let id: u64 = num(parts.next().unwrap_or(""), n)?;
            let vals: Vec<f64> = parts.map(|x| num(x, n)).collect::<Result<_>>()?;
            if vals.len() != k {
                return Err(Error::DimensionMismatch(n));
            }
            atom_ids.insert(id, vals);
        }
        Ok(PvdmModel {
            params,
            words,
            index,
            word_in,
            word_out,
            counts,
            atom_ids,
            loss_history,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

const PVDM_HEADER: &str = "metastim-pvdm 1";

fn malformed(line: usize, reason: &str) -> Error {
    Error::Malformed {
        line,
        reason: reason.into(),
    }
}

fn fields<'a>(line: &'a str, tag: &str, n: usize) -> Result<Vec<&'a str>> {
    let mut parts = line.split(' ');
    if parts.next() != Some(tag) {
        return Err(malformed(n, &format!("expected {tag:?} line")));
    }
    Ok(parts.collect())
}

fn num<T: std::str::FromStr>(s: &str, line: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| Error::Malformed {
        line,
        reason: format!("{s:?}: {e}"),
    })
}

fn draw_noise(table: &[(usize, f64)], target: usize, count: usize, r: &mut rng::Rng) -> Vec<usize> {
    let Some(&(_, total)) = table.last() else {
        return Vec::new();
    };
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        for _ in 0..10 {
            let x = r.gen_range(0.0..total);
            let pos = table.partition_point(|&(_, c)| c <= x).min(table.len() - 1);
            let w = table[pos].0;
            if w != target {
                out.push(w);
                break;
            }
        }
    }
    out
}

/// Trains PV-DM with negative sampling.
///
/// Each target token is predicted from the mean of the atom's ID vector and
/// the context vectors within `window`; ID, context and prediction vectors
/// are updated together by plain SGD, visiting atoms and positions in order.
/// Noise words are drawn once per position, so every epoch descends the same
/// objective. Context vectors start from `table` when its dimension equals
/// `vec_size` and from small seeded noise otherwise.
pub fn train_pvdm(atoms: &[Atom], table: &EmbeddingTable, params: &PvdmParams) -> Result<PvdmModel> {
    if atoms.is_empty() {
        return Err(Error::Empty("no training atoms".into()));
    }
    let k = params.vec_size;
    if k == 0 {
        return Err(Error::invalid("vec_size", "must be positive"));
    }
    let words = table.words().to_vec();
    let index: HashMap<String, usize> = words.iter().cloned().enumerate().map(|(i, w)| (w, i)).collect();
    let word_in = if table.dim() == k {
        (0..table.len()).flat_map(|i| table.row(i).to_vec()).collect()
    } else {
        let mut r = rng::rng_for(params.seed, 3);
        (0..table.len()).flat_map(|_| uniform_vec(&mut r, k)).collect()
    };
    let mut model = PvdmModel {
        params: params.clone(),
        words,
        index,
        word_in,
        word_out: vec![0.0; table.len() * k],
        counts: vec![0.0; table.len()],
        atom_ids: BTreeMap::new(),
        loss_history: Vec::new(),
    };

    let sequences: Vec<Vec<usize>> = atoms.iter().map(|a| model.ids(a)).collect();
    for seq in &sequences {
        for &w in seq {
            model.counts[w] += 1.0;
        }
    }
    let noise = model.noise_table();
    let mut r = rng::rng_for(params.seed, 1);
    let mut positions = Vec::new();
    for (a, seq) in sequences.iter().enumerate() {
        for p in 0..seq.len() {
            positions.push(Position {
                atom: a,
                target: seq[p],
                context: PvdmModel::context(seq, p, params.window),
                noise: draw_noise(&noise, seq[p], params.negatives, &mut r),
            });
        }
    }
    let mut init = rng::rng_for(params.seed, 2);
    let mut ids: Vec<Vec<f64>> = atoms.iter().map(|_| uniform_vec(&mut init, k)).collect();

    for _ in 0..params.epochs {
        for pos in &positions {
            let ctx: Vec<(usize, f64)> = pos.context.iter().map(|&c| (c, 1.0)).collect();
            let h = model.hidden(&ids[pos.atom], &ctx);
            let (grad_h, coeffs) = model.gradients(&h, pos.target, &pos.noise, params.lr);
            for (w, g) in coeffs {
                for (o, hv) in PvdmModel::row_mut(&mut model.word_out, w, k).iter_mut().zip(&h) {
                    *o += g * hv;
                }
            }
            let n = (1 + pos.context.len()) as f64;
            for (v, g) in ids[pos.atom].iter_mut().zip(&grad_h) {
                *v += g / n;
            }
            for &c in &pos.context {
                for (v, g) in PvdmModel::row_mut(&mut model.word_in, c, k).iter_mut().zip(&grad_h) {
                    *v += g / n;
                }
            }
        }
        let loss = model.objective(&positions, &ids);
        model.loss_history.push(loss);
    }
    model.atom_ids = atoms.iter().map(|a| a.id).zip(ids).collect();
    Ok(model)
}

/// Infers an ID vector for an unseen atom without keyword weighting.
pub fn infer_pvdm(model: &PvdmModel, atom: &Atom, steps: usize, lr: f64, seed: u64) -> Result<AtomVector> {
    model.infer(atom, &KeywordSet::none(), steps, lr, seed)
}
