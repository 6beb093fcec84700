//! Hyper-parameter search: random search and hyperband. Fitness is the test
//! loss after a short training run; the caller supplies it as a closure.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::neural::{Activation, HyperParams, LayerSpec, OptimizerKind};
use crate::rng;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RealRange {
    Fixed(f64),
    Uniform { lo: f64, hi: f64 },
    LogUniform { lo: f64, hi: f64 },
    Choice(Vec<f64>),
}

impl RealRange {
    fn validate(&self, what: &'static str) -> Result<()> {
        let ok = match self {
            RealRange::Fixed(v) => v.is_finite(),
            RealRange::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi,
            RealRange::LogUniform { lo, hi } => *lo > 0.0 && hi.is_finite() && lo <= hi,
            RealRange::Choice(v) => !v.is_empty() && v.iter().all(|x| x.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(what, format!("empty or invalid range {self:?}")))
        }
    }

    fn sample(&self, r: &mut rng::Rng) -> f64 {
        match self {
            RealRange::Fixed(v) => *v,
            RealRange::Uniform { lo, hi } if lo == hi => *lo,
            RealRange::Uniform { lo, hi } => r.gen_range(*lo..*hi),
            RealRange::LogUniform { lo, hi } if lo == hi => *lo,
            RealRange::LogUniform { lo, hi } => r.gen_range(lo.ln()..hi.ln()).exp(),
            RealRange::Choice(v) => v[r.gen_range(0..v.len())],
        }
    }

    /// The finite value list, if there is one.
    fn values(&self) -> Option<Vec<f64>> {
        match self {
            RealRange::Fixed(v) => Some(vec![*v]),
            RealRange::Choice(v) => Some(v.clone()),
            RealRange::Uniform { lo, hi } | RealRange::LogUniform { lo, hi } if lo == hi => {
                Some(vec![*lo])
            }
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntRange {
    pub min: usize,
    pub max: usize,
}

/// Search space over [`HyperParams`]. Layer widths are multiples of 8.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperSpace {
    pub learning_rate: RealRange,
    pub optimizer: OptimizerKind,
    /// Ranges for the optimizer's own constants; keys as in
    /// [`OptimizerKind::param_keys`]. Unlisted keys keep their defaults.
    pub optimizer_params: BTreeMap<String, RealRange>,
    pub hidden_layers: IntRange,
    pub features: IntRange,
    pub activations: Vec<Activation>,
    pub dropout: RealRange,
    pub batch_size: usize,
}

impl Default for HyperSpace {
    fn default() -> Self {
        HyperSpace::for_optimizer(OptimizerKind::Adam)
    }
}

impl HyperSpace {
    /// Default space with the optimizer constant ranges suited to `kind`.
    pub fn for_optimizer(kind: OptimizerKind) -> Self {
        let mut optimizer_params = BTreeMap::new();
        for &key in kind.param_keys() {
            let range = match key {
                "beta1" => RealRange::Uniform { lo: 0.85, hi: 0.95 },
                "beta2" => RealRange::Uniform { lo: 0.9, hi: 0.999 },
                "rho" => RealRange::Uniform { lo: 0.85, hi: 0.99 },
                _ => continue,
            };
            optimizer_params.insert(key.to_string(), range);
        }
        HyperSpace {
            learning_rate: RealRange::LogUniform { lo: 1e-4, hi: 1e-2 },
            optimizer: kind,
            optimizer_params,
            hidden_layers: IntRange { min: 1, max: 3 },
            features: IntRange { min: 8, max: 64 },
            activations: Activation::ALL.to_vec(),
            dropout: RealRange::Fixed(0.0),
            batch_size: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.learning_rate.validate("learning_rate")?;
        if let Some(bad) = self.learning_rate.values().and_then(|v| v.into_iter().find(|x| *x <= 0.0)) {
            return Err(Error::invalid("learning_rate", format!("{bad} is not positive")));
        }
        for (key, range) in &self.optimizer_params {
            if !self.optimizer.param_keys().contains(&key.as_str()) {
                return Err(Error::invalid(
                    "optimizer_params",
                    format!("{key:?} is not a parameter of {}", self.optimizer),
                ));
            }
            range.validate("optimizer_params")?;
        }
        self.dropout.validate("dropout")?;
        if self.hidden_layers.min > self.hidden_layers.max {
            return Err(Error::invalid("hidden_layers", "min > max"));
        }
        if self.feature_steps().is_none() {
            return Err(Error::invalid("features", "no multiple of 8 in range"));
        }
        if self.activations.is_empty() {
            return Err(Error::invalid("activations", "empty set"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        Ok(())
    }

    /// Range of `k` with width `8k` inside `features`.
    fn feature_steps(&self) -> Option<(usize, usize)> {
        let lo = self.features.min.div_ceil(8).max(1);
        let hi = self.features.max / 8;
        (lo <= hi).then_some((lo, hi))
    }

    fn assemble(
        &self,
        lr: f64,
        params: BTreeMap<String, f64>,
        layers: Vec<LayerSpec>,
        dropout: f64,
    ) -> HyperParams {
        HyperParams {
            learning_rate: lr,
            optimizer: self.optimizer,
            optimizer_params: params,
            layers,
            epochs: 10,
            batch_size: self.batch_size,
            dropout,
        }
    }

    /// Every point of a finite space, in a fixed order, if there are at most
    /// `limit` of them.
    pub fn enumerate(&self, limit: usize) -> Option<Vec<HyperParams>> {
        let lrs = self.learning_rate.values()?;
        let dropouts = self.dropout.values()?;
        let mut param_sets = vec![BTreeMap::new()];
        for (key, range) in &self.optimizer_params {
            let values = range.values()?;
            param_sets = param_sets
                .into_iter()
                .flat_map(|m| {
                    values.iter().map(move |v| {
                        let mut m = m.clone();
                        m.insert(key.clone(), *v);
                        m
                    })
                })
                .take(limit + 1)
                .collect();
        }
        let (klo, khi) = self.feature_steps()?;
        let per_layer: Vec<LayerSpec> = (klo..=khi)
            .flat_map(|k| {
                self.activations.iter().map(move |&a| LayerSpec {
                    features: 8 * k,
                    activation: a,
                })
            })
            .collect();
        let mut stacks: Vec<Vec<LayerSpec>> = Vec::new();
        for depth in self.hidden_layers.min..=self.hidden_layers.max {
            let mut level: Vec<Vec<LayerSpec>> = vec![Vec::new()];
            for _ in 0..depth {
                level = level
                    .into_iter()
                    .flat_map(|s| {
                        per_layer.iter().map(move |l| {
                            let mut s = s.clone();
                            s.push(*l);
                            s
                        })
                    })
                    .take(limit + 1)
                    .collect();
            }
            stacks.extend(level);
            if stacks.len() > limit {
                return None;
            }
        }
        let total = lrs.len() * dropouts.len() * param_sets.len() * stacks.len();
        if total > limit {
            return None;
        }
        let mut out = Vec::with_capacity(total);
        for &lr in &lrs {
            for params in &param_sets {
                for stack in &stacks {
                    for &d in &dropouts {
                        out.push(self.assemble(lr, params.clone(), stack.clone(), d));
                    }
                }
            }
        }
        Some(out)
    }
}

/// Draws one configuration: log-uniform learning rate, uniform integers and
/// activations.
pub fn sample_hp(space: &HyperSpace, seed: u64) -> HyperParams {
    let mut r = rng::rng(seed);
    let lr = space.learning_rate.sample(&mut r);
    let params = space
        .optimizer_params
        .iter()
        .map(|(k, range)| (k.clone(), range.sample(&mut r)))
        .collect();
    let depth = r.gen_range(space.hidden_layers.min..=space.hidden_layers.max);
    let (klo, khi) = space.feature_steps().unwrap_or((1, 1));
    let layers = (0..depth)
        .map(|_| LayerSpec {
            features: 8 * r.gen_range(klo..=khi),
            activation: space.activations[r.gen_range(0..space.activations.len())],
        })
        .collect();
    let dropout = space.dropout.sample(&mut r);
    space.assemble(lr, params, layers, dropout)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TunerKind {
    Random,
    Hyperband,
    /// Reserved; selecting it is an error.
    Bayesian,
}

impl TunerKind {
    pub const SUPPORTED: [TunerKind; 2] = [TunerKind::Random, TunerKind::Hyperband];
}

/// Knobs for either tuner: `budget` trials for random search, `(r, eta)`
/// for hyperband; `epochs` is the fixed random-search resource.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TunerParams {
    pub budget: usize,
    pub r: usize,
    pub eta: usize,
    pub epochs: usize,
}

impl Default for TunerParams {
    fn default() -> Self {
        TunerParams {
            budget: 5,
            r: 9,
            eta: 3,
            epochs: 10,
        }
    }
}

/// One fitness evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    /// Configuration index; hyperband re-evaluates a configuration at each
    /// rung it survives to.
    pub index: usize,
    pub bracket: Option<usize>,
    pub rung: Option<usize>,
    pub epochs: usize,
    pub hp: HyperParams,
    /// `None` if the evaluation failed or was not finite.
    pub fitness: Option<f64>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuneResult {
    pub best: Trial,
    pub trials: Vec<Trial>,
}

impl TuneResult {
    fn from_trials(trials: Vec<Trial>) -> Result<Self> {
        let mut best: Option<&Trial> = None;
        for t in &trials {
            if let Some(f) = t.fitness {
                if best.is_none_or(|b| f < b.fitness.unwrap()) {
                    best = Some(t);
                }
            }
        }
        match best {
            Some(b) => Ok(TuneResult {
                best: b.clone(),
                trials,
            }),
            None => Err(Error::AllTrialsFailed(trials.len())),
        }
    }

    /// `trial,bracket,rung,epochs,fitness,hp_json`; empty fields for
    /// not-applicable or failed values.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["trial", "bracket", "rung", "epochs", "fitness", "hp_json"])
            .expect("in-memory write");
        for t in &self.trials {
            let hp = serde_json::to_string(&t.hp).expect("hyper-parameters serialize");
            let fitness = t.fitness.map(|f| f.to_string()).unwrap_or_default();
            w.write_record([
                t.index.to_string(),
                opt(t.bracket),
                opt(t.rung),
                t.epochs.to_string(),
                fitness,
                hp,
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }
}

fn seed_of(seed: u64, index: usize) -> u64 {
    rng::derive(seed, index as u64)
}

fn run_trial<F>(fitness: &mut F, hp: &HyperParams, epochs: usize, seed: u64) -> Option<f64>
where
    F: FnMut(&HyperParams, usize, u64) -> Result<f64>,
{
    fitness(hp, epochs, seed).ok().filter(|f| f.is_finite())
}

/// `budget` independent draws at `epochs` each, or every point once if the
/// space has at most `budget` points. Ties go to the earliest trial.
pub fn random_search<F>(
    space: &HyperSpace,
    budget: usize,
    epochs: usize,
    mut fitness: F,
    seed: u64,
) -> Result<TuneResult>
where
    F: FnMut(&HyperParams, usize, u64) -> Result<f64>,
{
    space.validate()?;
    if budget == 0 {
        return Err(Error::invalid("budget", "must be at least 1"));
    }
    let configs = space
        .enumerate(budget)
        .unwrap_or_else(|| (0..budget).map(|i| sample_hp(space, seed_of(seed, i))).collect());
    let trials = configs
        .into_iter()
        .enumerate()
        .map(|(i, hp)| {
            let s = rng::derive(seed_of(seed, i), 1);
            Trial {
                index: i,
                bracket: None,
                rung: None,
                epochs,
                fitness: run_trial(&mut fitness, &hp, epochs, s),
                hp,
                seed: s,
            }
        })
        .collect();
    TuneResult::from_trials(trials)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rung {
    pub n: usize,
    pub r: f64,
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bracket {
    pub s: usize,
    pub rungs: Vec<Rung>,
}

/// Hyperband's bracket plan: `s_max = ⌊log_η R⌋`; bracket `s` starts
/// `⌈(s_max+1)/(s+1)·η^s⌉` configurations at `R·η^{−s}` epochs, and rung `i`
/// holds `⌊n·η^{−i}⌋` of them at `r·η^i`.
pub fn bracket_schedule(r_max: usize, eta: usize) -> Result<Vec<Bracket>> {
    if r_max == 0 {
        return Err(Error::invalid("hyperband_r", "must be at least 1"));
    }
    if eta < 2 {
        return Err(Error::invalid("hyperband_eta", "must be at least 2"));
    }
    let mut s_max = 0;
    while eta.pow(s_max + 1) <= r_max {
        s_max += 1;
    }
    let brackets = (0..=s_max)
        .rev()
        .map(|s| {
            let pow = eta.pow(s);
            let n = ((s_max as usize + 1) * pow).div_ceil(s as usize + 1);
            let rungs = (0..=s)
                .map(|i| {
                    let r = r_max as f64 * (eta as f64).powi(i as i32 - s as i32);
                    Rung {
                        n: n / eta.pow(i),
                        r,
                        epochs: (r.round() as usize).max(1),
                    }
                })
                .collect();
            Bracket {
                s: s as usize,
                rungs,
            }
        })
        .collect();
    Ok(brackets)
}

/// Successive halving inside every bracket of [`bracket_schedule`]; returns
/// the lowest fitness seen across all evaluations.
pub fn hyperband<F>(
    space: &HyperSpace,
    r_max: usize,
    eta: usize,
    mut fitness: F,
    seed: u64,
) -> Result<TuneResult>
where
    F: FnMut(&HyperParams, usize, u64) -> Result<f64>,
{
    space.validate()?;
    let schedule = bracket_schedule(r_max, eta)?;
    let mut trials = Vec::new();
    let mut next_index = 0;
    for bracket in &schedule {
        let mut alive: Vec<(usize, HyperParams)> = (0..bracket.rungs[0].n)
            .map(|_| {
                let i = next_index;
                next_index += 1;
                (i, sample_hp(space, seed_of(seed, i)))
            })
            .collect();
        for (rung_idx, rung) in bracket.rungs.iter().enumerate() {
            let mut scored: Vec<(f64, usize, HyperParams)> = Vec::with_capacity(alive.len());
            for (i, hp) in alive {
                let s = rng::derive(seed_of(seed, i), 1 + rung_idx as u64);
                let f = run_trial(&mut fitness, &hp, rung.epochs, s);
                trials.push(Trial {
                    index: i,
                    bracket: Some(bracket.s),
                    rung: Some(rung_idx),
                    epochs: rung.epochs,
                    hp: hp.clone(),
                    fitness: f,
                    seed: s,
                });
                scored.push((f.unwrap_or(f64::INFINITY), i, hp));
            }
            scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            scored.truncate(rung.n / eta);
            alive = scored.into_iter().map(|(_, i, hp)| (i, hp)).collect();
        }
    }
    TuneResult::from_trials(trials)
}

/// Dispatches on `kind`.
pub fn tune<F>(
    kind: TunerKind,
    space: &HyperSpace,
    params: &TunerParams,
    fitness: F,
    seed: u64,
) -> Result<TuneResult>
where
    F: FnMut(&HyperParams, usize, u64) -> Result<f64>,
{
    match kind {
        TunerKind::Random => random_search(space, params.budget, params.epochs, fitness, seed),
        TunerKind::Hyperband => hyperband(space, params.r, params.eta, fitness, seed),
        TunerKind::Bayesian => Err(Error::Unsupported("bayesian tuner".into())),
    }
}
