//! Label space: one-hot node vectors, their PCA projection to a few
//! dimensions, the inverse map, and nearest-neighbor classification back to a
//! category.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};

use crate::corpus::{CategoryPath, PimsTree};
use crate::{Error, Result};

/// Indicator vector of a tree node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OneHot {
    pub len: usize,
    pub index: usize,
}

impl OneHot {
    pub fn values(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.len];
        v[self.index] = 1.0;
        v
    }
}

pub fn one_hot(category: &CategoryPath, tree: &PimsTree) -> Result<OneHot> {
    Ok(OneHot {
        len: tree.len(),
        index: tree.resolve(category)?,
    })
}

/// A point in the projected label space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelPoint(pub Vec<f64>);

impl LabelPoint {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Fitted PCA over label vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionModel {
    pub mean: DVector<f64>,
    /// `d_out × n` with orthonormal rows.
    pub components: DMatrix<f64>,
}

/// Singular values below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-9;

/// Variances along every principal direction of `labels`, decreasing, and
/// the numerical rank of the centered matrix.
pub fn pca_spectrum(labels: &DMatrix<f64>) -> Result<(Vec<f64>, usize)> {
    let (centered, _) = center(labels)?;
    let (values, _) = sorted_svd(centered);
    let n = labels.nrows() as f64;
    let rank = numerical_rank(&values);
    Ok((values.iter().map(|s| s * s / (n - 1.0)).collect(), rank))
}

fn center(labels: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if labels.nrows() < 2 {
        return Err(Error::invalid(
            "pca",
            format!("need at least 2 label vectors, have {}", labels.nrows()),
        ));
    }
    let mean = DVector::from_fn(labels.ncols(), |j, _| labels.column(j).mean());
    let mut centered = labels.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    Ok((centered, mean))
}

fn sorted_svd(centered: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let svd = SVD::new(centered, false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&i| svd.singular_values[i]).collect();
    let rows = DMatrix::from_fn(order.len(), v_t.ncols(), |r, c| v_t[(order[r], c)]);
    (values, rows)
}

fn numerical_rank(singular: &[f64]) -> usize {
    let top = singular.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return 0;
    }
    singular.iter().filter(|&&s| s > top * RANK_TOL).count()
}

/// Fits the top `d_out` principal directions of the row vectors in `labels`
/// (`N × n`). Each component's largest-magnitude entry is made positive.
pub fn fit_pca(labels: &DMatrix<f64>, d_out: usize) -> Result<ProjectionModel> {
    if d_out == 0 {
        return Err(Error::invalid("d_out", "must be at least 1"));
    }
    let (centered, mean) = center(labels)?;
    let (values, rows) = sorted_svd(centered);
    let rank = numerical_rank(&values);
    if d_out > rank {
        return Err(Error::RankExceeded {
            requested: d_out,
            rank,
        });
    }
    let mut components = rows.rows(0, d_out).into_owned();
    for mut row in components.row_iter_mut() {
        let pivot = row.iter().copied().fold(0.0_f64, |best, v| {
            if v.abs() > best.abs() {
                v
            } else {
                best
            }
        });
        if pivot < 0.0 {
            row.neg_mut();
        }
    }
    Ok(ProjectionModel { mean, components })
}

/// One-hot label matrix for a list of node ids.
pub fn label_matrix(labels: &[usize], nodes: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(labels.len(), nodes);
    for (r, &l) in labels.iter().enumerate() {
        m[(r, l)] = 1.0;
    }
    m
}

impl ProjectionModel {
    pub fn d_out(&self) -> usize {
        self.components.nrows()
    }

    pub fn nodes(&self) -> usize {
        self.components.ncols()
    }

    pub fn project(&self, c: &[f64]) -> Result<LabelPoint> {
        if c.len() != self.nodes() {
            return Err(Error::LengthMismatch {
                expected: self.nodes(),
                actual: c.len(),
            });
        }
        let centered = DVector::from_column_slice(c) - &self.mean;
        Ok(LabelPoint((&self.components * centered).iter().copied().collect()))
    }

    pub fn project_node(&self, node: usize) -> LabelPoint {
        let y = self
            .components
            .column(node)
            .iter()
            .zip(0..)
            .map(|(&c, k)| c - self.components.row(k).dot(&self.mean.transpose()))
            .collect();
        LabelPoint(y)
    }

    pub fn inverse_project(&self, y: &LabelPoint) -> Result<Vec<f64>> {
        if y.dim() != self.d_out() {
            return Err(Error::LengthMismatch {
                expected: self.d_out(),
                actual: y.dim(),
            });
        }
        let yv = DVector::from_column_slice(&y.0);
        Ok((self.components.transpose() * yv + &self.mean).iter().copied().collect())
    }

    /// Nodes that carried at least one fitted label, i.e. positive mean.
    pub fn candidates(&self) -> Vec<usize> {
        (0..self.nodes()).filter(|&i| self.mean[i] > 0.0).collect()
    }

    /// `d_out n`, the mean, then one line per component row.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.d_out(), self.nodes());
        let line = |out: &mut String, vals: &mut dyn Iterator<Item = f64>| {
            let parts: Vec<String> = vals.map(|v| v.to_string()).collect();
            writeln!(out, "{}", parts.join(" ")).unwrap();
        };
        line(&mut out, &mut self.mean.iter().copied());
        for row in self.components.row_iter() {
            line(&mut out, &mut row.iter().copied());
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut row = |expect: Option<usize>| -> Result<(usize, Vec<f64>)> {
            let (n, l) = lines.next().ok_or_else(|| Error::Malformed {
                line: 0,
                reason: "truncated projection model".into(),
            })?;
            let vals: Vec<f64> = l
                .split_whitespace()
                .map(|v| {
                    v.parse().map_err(|e| Error::Malformed {
                        line: n + 1,
                        reason: format!("{v:?}: {e}"),
                    })
                })
                .collect::<Result<_>>()?;
            if expect.is_some_and(|k| k != vals.len()) {
                return Err(Error::DimensionMismatch(n + 1));
            }
            Ok((n + 1, vals))
        };
        let (n, head) = row(Some(2))?;
        let (d_out, nodes) = (head[0] as usize, head[1] as usize);
        if head[0] != d_out as f64 || head[1] != nodes as f64 || d_out == 0 {
            return Err(Error::Malformed {
                line: n,
                reason: "header must be two positive integers".into(),
            });
        }
        let (_, mean) = row(Some(nodes))?;
        let mut comps = Vec::with_capacity(d_out * nodes);
        for _ in 0..d_out {
            comps.extend(row(Some(nodes))?.1);
        }
        Ok(ProjectionModel {
            mean: DVector::from_vec(mean),
            components: DMatrix::from_row_slice(d_out, nodes, &comps),
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

/// Where the nearest-neighbor search happens.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifyMode {
    /// Against the projected one-hots, before inverse projection.
    #[default]
    Projected,
    /// Against the one-hots themselves, after inverse projection.
    NodeSpace,
}

/// Nearest-neighbor lookup from a label point to a tree node. Candidates are
/// the nodes observed as labels when the projection was fitted.
#[derive(Clone, Debug)]
pub struct Classifier {
    model: ProjectionModel,
    candidates: Vec<usize>,
    projected: Vec<LabelPoint>,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the smallest value; near-equal values (relative 1e-12) resolve
/// to the earlier entry.
fn argmin_stable(dists: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, d) in dists.enumerate() {
        match best {
            Some((_, b)) if d >= b - 1e-12 * b.abs().max(1.0) => {}
            _ => best = Some((i, d)),
        }
    }
    best.map(|(i, _)| i)
}

impl Classifier {
    pub fn new(model: ProjectionModel) -> Result<Self> {
        let candidates = model.candidates();
        if candidates.is_empty() {
            return Err(Error::Empty("no candidate categories".into()));
        }
        let projected = candidates.iter().map(|&c| model.project_node(c)).collect();
        Ok(Classifier {
            model,
            candidates,
            projected,
        })
    }

    pub fn model(&self) -> &ProjectionModel {
        &self.model
    }

    pub fn candidates(&self) -> &[usize] {
        &self.candidates
    }

    pub fn projected_candidates(&self) -> &[LabelPoint] {
        &self.projected
    }

    /// Node id of the nearest candidate.
    pub fn nearest(&self, yhat: &LabelPoint, mode: ClassifyMode) -> Result<usize> {
        if yhat.dim() != self.model.d_out() {
            return Err(Error::LengthMismatch {
                expected: self.model.d_out(),
                actual: yhat.dim(),
            });
        }
        let pick = match mode {
            ClassifyMode::Projected => {
                argmin_stable(self.projected.iter().map(|p| squared_distance(&p.0, &yhat.0)))
            }
            ClassifyMode::NodeSpace => {
                let c = self.model.inverse_project(yhat)?;
                let norm: f64 = c.iter().map(|v| v * v).sum();
                argmin_stable(self.candidates.iter().map(|&i| norm - 2.0 * c[i] + 1.0))
            }
        };
        Ok(self.candidates[pick.expect("non-empty candidates")])
    }

    pub fn classify<'t>(&self, yhat: &LabelPoint, tree: &'t PimsTree, mode: ClassifyMode) -> Result<&'t CategoryPath> {
        let node = self.nearest(yhat, mode)?;
        if node >= tree.len() {
            return Err(Error::invalid("classifier", "tree does not match projection"));
        }
        Ok(tree.path(node))
    }
}

/// One-shot form of [`Classifier::classify`].
pub fn classify(yhat: &LabelPoint, model: &ProjectionModel, tree: &PimsTree, mode: ClassifyMode) -> Result<CategoryPath> {
    Classifier::new(model.clone())?
        .classify(yhat, tree, mode)
        .cloned()
}
