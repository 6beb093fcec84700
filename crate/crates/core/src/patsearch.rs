//! Pattern search over a mixed integer / quantized-real / categorical
//! lattice: exploratory meshes around a base point, accelerated pattern
//! moves while they keep improving, and a shrinking mesh when they don't.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Domain {
    Int { min: i64, max: i64, step: i64 },
    /// Reals on the grid `min + k·quantum`.
    Real { min: f64, max: f64, quantum: f64 },
    /// Categorical; lattice neighbors are adjacent list entries.
    Choice { options: Vec<String> },
}

impl Domain {
    pub fn levels(&self) -> i64 {
        match self {
            Domain::Int { min, max, step } => (max - min) / step + 1,
            Domain::Real { min, max, quantum } => ((max - min) / quantum + 1e-9).floor() as i64 + 1,
            Domain::Choice { options } => options.len() as i64,
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        match self {
            Domain::Int { min, max, step } if *step < 1 || min > max => {
                Err(format!("bad integer range {min}..={max} step {step}"))
            }
            Domain::Real { min, max, quantum }
                if !(*quantum > 0.0 && min.is_finite() && max.is_finite() && min <= max) =>
            {
                Err(format!("bad real range {min}..={max} quantum {quantum}"))
            }
            Domain::Choice { options } if options.is_empty() => Err("no options".into()),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetaValue {
    Int(i64),
    Real(f64),
    Choice(String),
}

impl MetaValue {
    pub fn as_i64(&self) -> Option<i64> {
        match self {
            MetaValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            MetaValue::Int(v) => Some(*v as f64),
            MetaValue::Real(v) => Some(*v),
            MetaValue::Choice(_) => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            MetaValue::Choice(s) => Some(s),
            _ => None,
        }
    }
}

/// Concrete meta-parameter values by variable name.
pub type MetaValues = BTreeMap<String, MetaValue>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    #[serde(flatten)]
    pub domain: Domain,
}

/// Lattice coordinates, one per variable, each in `0..levels`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MetaPoint(pub Vec<i64>);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaSpace {
    pub variables: Vec<Variable>,
}

fn choice(name: &str, options: &[&str]) -> Variable {
    Variable {
        name: name.into(),
        domain: Domain::Choice {
            options: options.iter().map(|s| s.to_string()).collect(),
        },
    }
}

fn int(name: &str, min: i64, max: i64, step: i64) -> Variable {
    Variable {
        name: name.into(),
        domain: Domain::Int { min, max, step },
    }
}

impl MetaSpace {
    /// The full pipeline meta-parameter space.
    pub fn standard() -> Self {
        MetaSpace {
            variables: vec![
                int("d_out", 1, 6, 1),
                int("input_dims", 4, 40, 4),
                Variable {
                    name: "keyword_weight".into(),
                    domain: Domain::Real {
                        min: 1.0,
                        max: 10.0,
                        quantum: 0.5,
                    },
                },
                choice("method", &["bow_sum", "bow_mean", "nabla", "pvdm"]),
                choice(
                    "optimizer",
                    &["sgd", "adam", "adagrad", "adadelta", "adamax", "rmsprop"],
                ),
                choice("architecture", &["ffnn", "rnn"]),
                choice("tuner", &["random", "hyperband"]),
                int("tuner_budget", 1, 10, 1),
                int("hyperband_r", 3, 27, 3),
                int("hyperband_eta", 2, 3, 1),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.variables.is_empty() {
            return Err(Error::invalid("meta_space", "no variables"));
        }
        for v in &self.variables {
            v.domain
                .validate()
                .map_err(|e| Error::invalid("meta_space", format!("{}: {e}", v.name)))?;
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.variables.len()
    }

    pub fn contains(&self, p: &MetaPoint) -> bool {
        p.0.len() == self.dims()
            && p.0.iter().zip(&self.variables).all(|(&c, v)| (0..v.domain.levels()).contains(&c))
    }

    pub fn encode(&self, values: &MetaValues) -> Result<MetaPoint> {
        let mut coords = Vec::with_capacity(self.dims());
        for v in &self.variables {
            let value = values
                .get(&v.name)
                .ok_or_else(|| Error::invalid("meta values", format!("missing {}", v.name)))?;
            let out_of_range = || Error::invalid("meta values", format!("{} = {value:?} outside space", v.name));
            let c = match (&v.domain, value) {
                (Domain::Int { min, max, step }, MetaValue::Int(x)) => {
                    if x < min || x > max || (x - min) % step != 0 {
                        return Err(out_of_range());
                    }
                    (x - min) / step
                }
                (Domain::Real { min, quantum, .. }, MetaValue::Int(_) | MetaValue::Real(_)) => {
                    let x = value.as_f64().unwrap();
                    let k = ((x - min) / quantum).round();
                    if (min + k * quantum - x).abs() > 1e-9 * x.abs().max(1.0) {
                        return Err(out_of_range());
                    }
                    k as i64
                }
                (Domain::Choice { options }, MetaValue::Choice(s)) => options
                    .iter()
                    .position(|o| o == s)
                    .ok_or_else(out_of_range)? as i64,
                _ => return Err(out_of_range()),
            };
            if !(0..v.domain.levels()).contains(&c) {
                return Err(out_of_range());
            }
            coords.push(c);
        }
        if values.len() != self.dims() {
            let extra = values.keys().find(|k| !self.variables.iter().any(|v| &v.name == *k));
            return Err(Error::invalid("meta values", format!("unknown variable {extra:?}")));
        }
        Ok(MetaPoint(coords))
    }

    pub fn decode(&self, p: &MetaPoint) -> Result<MetaValues> {
        if p.0.len() != self.dims() {
            return Err(Error::LengthMismatch {
                expected: self.dims(),
                actual: p.0.len(),
            });
        }
        let mut out = MetaValues::new();
        for (&c, v) in p.0.iter().zip(&self.variables) {
            if !(0..v.domain.levels()).contains(&c) {
                return Err(Error::invalid(
                    "meta point",
                    format!("{} coordinate {c} outside 0..{}", v.name, v.domain.levels()),
                ));
            }
            let value = match &v.domain {
                Domain::Int { min, step, .. } => MetaValue::Int(min + c * step),
                Domain::Real { min, quantum, .. } => MetaValue::Real(min + c as f64 * quantum),
                Domain::Choice { options } => MetaValue::Choice(options[c as usize].clone()),
            };
            out.insert(v.name.clone(), value);
        }
        Ok(out)
    }

    fn clamp(&self, coords: &mut [i64]) {
        for (c, v) in coords.iter_mut().zip(&self.variables) {
            *c = (*c).clamp(0, v.domain.levels() - 1);
        }
    }

    pub fn random_point(&self, seed: u64) -> MetaPoint {
        let mut r = rng::rng(seed);
        MetaPoint(self.variables.iter().map(|v| r.gen_range(0..v.domain.levels())).collect())
    }
}

/// `X ± μ·e_k` for every variable `k`, clamped into bounds; points that
/// clamp back onto `X` and repeats are dropped. Order: variable, then minus
/// before plus.
pub fn exploratory_mesh(x: &MetaPoint, mu: i64, space: &MetaSpace) -> Vec<MetaPoint> {
    let mut out: Vec<MetaPoint> = Vec::with_capacity(2 * x.0.len());
    for k in 0..x.0.len() {
        for sign in [-1, 1] {
            let mut c = x.0.clone();
            c[k] += sign * mu;
            space.clamp(&mut c);
            let p = MetaPoint(c);
            if &p != x && !out.contains(&p) {
                out.push(p);
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchParams {
    pub alpha: f64,
    pub mu0: i64,
    pub delta: i64,
    pub max_stall: usize,
    pub min_improvement: f64,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            alpha: 2.0,
            mu0: 3,
            delta: 1,
            max_stall: 3,
            min_improvement: 0.0,
        }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha", "must be positive"));
        }
        if self.mu0 < 1 || self.delta < 1 {
            return Err(Error::invalid("mu0/delta", "must be at least 1"));
        }
        if self.max_stall < 1 {
            return Err(Error::invalid("max_stall", "must be at least 1"));
        }
        if !(self.min_improvement >= 0.0) {
            return Err(Error::invalid("min_improvement", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    /// The random starting point.
    Base,
    /// A point of an exploratory mesh around the base point.
    Explore,
    /// A pattern-move point or a point of the mesh around it.
    Pattern,
    /// A new base point was adopted.
    Chosen,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub kind: StepKind,
    pub point: MetaPoint,
    pub fitness: f64,
    pub mesh: i64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub rows: Vec<TraceRow>,
}

impl SearchTrace {
    /// Fitness of each base point in adoption order.
    pub fn incumbents(&self) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| matches!(r.kind, StepKind::Base | StepKind::Chosen))
            .map(|r| r.fitness)
            .collect()
    }

    /// Number of exploratory / pattern sets evaluated.
    pub fn iterations(&self) -> usize {
        self.rows.iter().map(|r| r.iter).max().unwrap_or(0)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["iter", "kind", "point_json", "fitness", "mesh"])
            .expect("in-memory write");
        for r in &self.rows {
            let kind = serde_json::to_value(r.kind).expect("kind serializes");
            w.write_record([
                r.iter.to_string(),
                kind.as_str().unwrap_or_default().to_string(),
                serde_json::to_string(&r.point.0).expect("point serializes"),
                r.fitness.to_string(),
                r.mesh.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub best: MetaPoint,
    pub best_fitness: f64,
    pub base_fitness: f64,
    pub trace: SearchTrace,
    /// Distinct points evaluated.
    pub evaluations: usize,
}

struct Evaluator<'a, F> {
    fitness: F,
    memo: HashMap<MetaPoint, f64>,
    trace: &'a mut SearchTrace,
}

impl<F: FnMut(&MetaPoint) -> f64> Evaluator<'_, F> {
    fn eval(&mut self, p: &MetaPoint) -> f64 {
        if let Some(&f) = self.memo.get(p) {
            return f;
        }
        let f = (self.fitness)(p);
        let f = if f.is_finite() { f } else { f64::INFINITY };
        self.memo.insert(p.clone(), f);
        f
    }

    /// Evaluates a candidate set and returns its best member, ties to the
    /// earlier candidate.
    fn best_of(&mut self, iter: usize, kind: StepKind, mu: i64, points: Vec<MetaPoint>) -> Option<(MetaPoint, f64)> {
        let mut best: Option<(MetaPoint, f64)> = None;
        for p in points {
            let f = self.eval(&p);
            self.trace.rows.push(TraceRow {
                iter,
                kind,
                point: p.clone(),
                fitness: f,
                mesh: mu,
            });
            if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
                best = Some((p, f));
            }
        }
        best
    }
}

/// Minimizes `fitness` over the lattice. Non-finite fitness counts as +∞.
/// Stops after `max_stall` consecutive non-improving exploratory sets, when
/// the mesh shrinks below 1, or when an improvement phase gains no more than
/// `min_improvement`.
pub fn pattern_search<F>(space: &MetaSpace, fitness: F, params: &SearchParams, seed: u64) -> Result<SearchResult>
where
    F: FnMut(&MetaPoint) -> f64,
{
    space.validate()?;
    params.validate()?;
    let mut trace = SearchTrace::default();
    let mut ev = Evaluator {
        fitness,
        memo: HashMap::new(),
        trace: &mut trace,
    };
    let mut x = space.random_point(seed);
    let mut fx = ev.eval(&x);
    let base_fitness = fx;
    ev.trace.rows.push(TraceRow {
        iter: 0,
        kind: StepKind::Base,
        point: x.clone(),
        fitness: fx,
        mesh: params.mu0,
    });
    let mut mu = params.mu0;
    let mut stall = 0;
    let mut iter = 0;
    loop {
        iter += 1;
        let mesh = exploratory_mesh(&x, mu, space);
        let best = ev.best_of(iter, StepKind::Explore, mu, mesh);
        match best {
            Some((mut xn, mut fnew)) if fnew < fx => {
                mu = params.mu0;
                stall = 0;
                let phase_start = fx;
                while fnew < fx {
                    let prev = std::mem::replace(&mut x, xn);
                    fx = fnew;
                    ev.trace.rows.push(TraceRow {
                        iter,
                        kind: StepKind::Chosen,
                        point: x.clone(),
                        fitness: fx,
                        mesh: mu,
                    });
                    let mut moved: Vec<i64> = prev
                        .0
                        .iter()
                        .zip(&x.0)
                        .map(|(&a, &b)| (a as f64 + params.alpha * (b - a) as f64).round() as i64)
                        .collect();
                    space.clamp(&mut moved);
                    let p = MetaPoint(moved);
                    let mut candidates = Vec::new();
                    if p != x {
                        candidates.push(p.clone());
                    }
                    for q in exploratory_mesh(&p, mu, space) {
                        if q != x && !candidates.contains(&q) {
                            candidates.push(q);
                        }
                    }
                    iter += 1;
                    match ev.best_of(iter, StepKind::Pattern, mu, candidates) {
                        Some((p, f)) => (xn, fnew) = (p, f),
                        None => break,
                    }
                }
                if phase_start - fx <= params.min_improvement {
                    break;
                }
            }
            _ => {
                mu -= params.delta;
                stall += 1;
                if stall >= params.max_stall || mu < 1 {
                    break;
                }
            }
        }
    }
    if ev.memo.values().all(|f| f.is_infinite()) {
        return Err(Error::invalid("fitness", "no evaluation was finite"));
    }
    let evaluations = ev.memo.len();
    Ok(SearchResult {
        best: x,
        best_fitness: fx,
        base_fitness,
        trace,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(ranges: &[(i64, i64)]) -> MetaSpace {
        MetaSpace {
            variables: ranges
                .iter()
                .enumerate()
                .map(|(i, &(lo, hi))| int(&format!("v{i}"), lo, hi, 1))
                .collect(),
        }
    }

    fn optimal_values() -> MetaValues {
        let mut v = MetaValues::new();
        v.insert("d_out".into(), MetaValue::Int(4));
        v.insert("input_dims".into(), MetaValue::Int(20));
        v.insert("keyword_weight".into(), MetaValue::Real(5.0));
        v.insert("method".into(), MetaValue::Choice("pvdm".into()));
        v.insert("optimizer".into(), MetaValue::Choice("adam".into()));
        v.insert("architecture".into(), MetaValue::Choice("ffnn".into()));
        v.insert("tuner".into(), MetaValue::Choice("random".into()));
        v.insert("tuner_budget".into(), MetaValue::Int(5));
        v.insert("hyperband_r".into(), MetaValue::Int(9));
        v.insert("hyperband_eta".into(), MetaValue::Int(3));
        v
    }

    #[test]
    fn optimal_point_round_trips() {
        let space = MetaSpace::standard();
        let v = optimal_values();
        let p = space.encode(&v).unwrap();
        assert!(space.contains(&p));
        assert_eq!(space.decode(&p).unwrap(), v);
        let mut bad = p.clone();
        bad.0[3] = 4;
        assert!(space.decode(&bad).is_err());
        let mut off = v.clone();
        off.insert("keyword_weight".into(), MetaValue::Real(5.2));
        assert!(space.encode(&off).is_err());
        off.insert("keyword_weight".into(), MetaValue::Int(5));
        assert_eq!(space.encode(&off).unwrap(), p);
        off.insert("unknown".into(), MetaValue::Int(5));
        assert!(space.encode(&off).is_err());
    }

    proptest! {
        #[test]
        fn decode_encode_identity(seed in any::<u64>()) {
            let space = MetaSpace::standard();
            let p = space.random_point(seed);
            let v = space.decode(&p).unwrap();
            prop_assert_eq!(space.encode(&v).unwrap(), p);
            let json = serde_json::to_string(&v).unwrap();
            let back: MetaValues = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(space.encode(&back).unwrap(), space.encode(&v).unwrap());
        }
    }

    #[test]
    fn mesh_shapes() {
        let s = grid(&[(0, 10), (0, 10)]);
        assert_eq!(exploratory_mesh(&MetaPoint(vec![5, 5]), 1, &s).len(), 4);
        assert_eq!(exploratory_mesh(&MetaPoint(vec![0, 5]), 1, &s).len(), 3);
        let wide = exploratory_mesh(&MetaPoint(vec![5, 5]), 100, &s);
        assert_eq!(
            wide,
            [
                MetaPoint(vec![0, 5]),
                MetaPoint(vec![10, 5]),
                MetaPoint(vec![5, 0]),
                MetaPoint(vec![5, 10])
            ]
        );
        let single = grid(&[(0, 0)]);
        assert!(exploratory_mesh(&MetaPoint(vec![0]), 2, &single).is_empty());
    }

    #[test]
    fn finds_lattice_minimum() {
        let s = grid(&[(0, 20), (0, 20)]);
        let target = [13, 4];
        for seed in 0..20 {
            let f = |p: &MetaPoint| ((p.0[0] - target[0]).pow(2) + (p.0[1] - target[1]).pow(2)) as f64;
            let res = pattern_search(&s, f, &SearchParams::default(), seed).unwrap();
            assert_eq!(res.best.0, target, "seed {seed}");
            assert!(res.best_fitness <= res.base_fitness);
            let inc = res.trace.incumbents();
            assert!(inc.windows(2).all(|w| w[1] < w[0]));
        }
    }

    #[test]
    fn stalls_out_after_three_sets() {
        let s = grid(&[(0, 9), (0, 9)]);
        let start = s.random_point(7);
        let f = |p: &MetaPoint| ((p.0[0] - start.0[0]).abs() + (p.0[1] - start.0[1]).abs()) as f64;
        let res = pattern_search(&s, f, &SearchParams::default(), 7).unwrap();
        assert_eq!(res.best, start);
        assert_eq!(res.trace.iterations(), 3);
        assert_eq!(res.trace.incumbents(), [0.0]);
    }

    #[test]
    fn points_are_evaluated_once() {
        let s = grid(&[(0, 15), (0, 15), (0, 15)]);
        let mut calls = 0;
        let f = |p: &MetaPoint| {
            calls += 1;
            p.0.iter().map(|c| ((c - 6) * (c - 6)) as f64).sum::<f64>()
        };
        let res = pattern_search(&s, f, &SearchParams::default(), 3).unwrap();
        assert_eq!(calls, res.evaluations);
        for it in 1..=res.trace.iterations() {
            let mut pts: Vec<&MetaPoint> = res
                .trace
                .rows
                .iter()
                .filter(|r| r.iter == it && r.kind != StepKind::Chosen)
                .map(|r| &r.point)
                .collect();
            let n = pts.len();
            pts.sort();
            pts.dedup();
            assert_eq!(pts.len(), n);
        }
        let csv = res.trace.to_csv();
        assert!(csv.starts_with("iter,kind,point_json,fitness,mesh\n0,base,\"["));
    }

    #[test]
    fn non_finite_fitness() {
        let s = grid(&[(0, 5)]);
        assert!(pattern_search(&s, |_| f64::NAN, &SearchParams::default(), 0).is_err());
        let res = pattern_search(&s, |p| if p.0[0] == 2 { 1.0 } else { f64::NAN }, &SearchParams::default(), 0).unwrap();
        assert_eq!(res.best.0, [2]);
    }
}
