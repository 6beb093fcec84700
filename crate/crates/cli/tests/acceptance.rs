//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Criteria run concurrently; the slow end-to-end ones drive
//! the `metastim` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::thread;
use std::time::{Duration, Instant};

use rand::Rng;

use metastim::atomvec::nabla_sum;
use metastim::labelspace::{fit_pca, label_matrix, pca_spectrum, Classifier, ClassifyMode, LabelPoint};
use metastim::neural::{
    gradient_check, init_network, Activation, ArchKind, ArchSpec, Features, HyperParams, OptimizerKind, OptimizerParams,
    OptimizerState,
};
use metastim::patsearch::{pattern_search, Domain, MetaPoint, MetaSpace, SearchParams, StepKind, Variable};
use metastim::pipeline::{run_training, PipelineConfig};
use metastim::rng::rng_for;
use metastim::synth::{generate, SynthParams};
use metastim::tuner::{bracket_schedule, hyperband, HyperSpace, IntRange, RealRange};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    check(
        elapsed.as_secs_f64() < limit_s,
        format!("took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64()),
    )
}

/// Explicit difference table: level j holds the j-th forward differences.
fn difference_table(e: &[Vec<f64>]) -> Vec<Vec<Vec<f64>>> {
    let mut table = vec![e.to_vec()];
    while table.last().unwrap().len() > 1 {
        let prev = table.last().unwrap();
        let next = prev
            .windows(2)
            .map(|w| w[1].iter().zip(&w[0]).map(|(b, a)| b - a).collect())
            .collect();
        table.push(next);
    }
    table
}

fn level_sum(table: &[Vec<Vec<f64>>], j: usize) -> Vec<f64> {
    let d = table[0][0].len();
    table[j].iter().fold(vec![0.0; d], |acc, r| acc.iter().zip(r).map(|(a, b)| a + b).collect())
}

fn c1_nabla() -> Outcome {
    let t = Instant::now();
    let e = vec![vec![1.0], vec![4.0], vec![9.0]];
    let table = difference_table(&e);
    check(level_sum(&table, 1) == [8.0] && level_sum(&table, 2) == [2.0], "oracle disagrees with worked example")?;
    let x1 = nabla_sum(e.clone(), 1).map_err(|e| e.to_string())?;
    let x2 = nabla_sum(e, 2).map_err(|e| e.to_string())?;
    check(x1 == [8.0] && x2 == [2.0], format!("worked example gave x1={x1:?} x2={x2:?}"))?;

    let mut r = rng_for(11, 0);
    let mut worst = 0.0_f64;
    let mut worst_deep = 0.0_f64;
    for _ in 0..1000 {
        let n = r.gen_range(2..40);
        let d = r.gen_range(1..12);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| r.gen_range(-3.0..3.0)).collect()).collect();
        let x = nabla_sum(rows.clone(), 1).map_err(|e| e.to_string())?;
        for k in 0..d {
            worst = worst.max((x[k] - (rows[n - 1][k] - rows[0][k])).abs());
        }
        let j = r.gen_range(1..n.min(6));
        let table = difference_table(&rows);
        let xj = nabla_sum(rows, j).map_err(|e| e.to_string())?;
        let oracle = level_sum(&table, j);
        for k in 0..d {
            worst_deep = worst_deep.max((xj[k] - oracle[k]).abs() / oracle[k].abs().max(1.0));
        }
    }
    check(worst <= 1e-12, format!("telescoping error {worst:e}"))?;
    check(worst_deep <= 1e-9, format!("deeper levels off by {worst_deep:e}"))?;
    within(t.elapsed(), 1.0)?;
    Ok(format!("x1=8, x2=2; telescoping max err {worst:.1e} over 1000 atoms"))
}

fn c2_gradients() -> Outcome {
    let t = Instant::now();
    let mut r = rng_for(22, 0);
    let mut worst = 0.0_f64;
    let mut nets = 0;
    for kind in [ArchKind::Ffnn, ArchKind::Rnn] {
        for act in Activation::ALL {
            for trial in 0..4 {
                let layers = if kind == ArchKind::Rnn { 1 } else { r.gen_range(1..=3) };
                let widths: Vec<usize> = (0..layers).map(|_| r.gen_range(1..=32)).collect();
                let arch = ArchSpec {
                    kind,
                    activations: vec![act; layers],
                    layer_widths: widths,
                    input_dim: r.gen_range(1..=8),
                    output_dim: r.gen_range(1..=3),
                };
                let model = init_network(&arch, 1000 + trial).map_err(|e| e.to_string())?;
                let xs: Vec<Features> = (0..3)
                    .map(|_| match kind {
                        ArchKind::Ffnn => Features::Vector((0..arch.input_dim).map(|_| r.gen_range(-1.0..1.0)).collect()),
                        ArchKind::Rnn => Features::Sequence(
                            (0..r.gen_range(1..5))
                                .map(|_| (0..arch.input_dim).map(|_| r.gen_range(-1.0..1.0)).collect())
                                .collect(),
                        ),
                    })
                    .collect();
                let ys: Vec<Vec<f64>> = (0..3)
                    .map(|_| (0..arch.output_dim).map(|_| r.gen_range(-1.0..1.0)).collect())
                    .collect();
                let batch: Vec<(&Features, &[f64])> = xs.iter().zip(&ys).map(|(x, y)| (x, y.as_slice())).collect();
                let err = gradient_check(&model, &batch, 1e-5).map_err(|e| e.to_string())?;
                worst = worst.max(err);
                nets += 1;
            }
        }
    }
    check(worst <= 1e-4, format!("max relative error {worst:e}"))?;
    within(t.elapsed(), 30.0)?;
    Ok(format!("{nets} random nets, max relative error {worst:.1e}"))
}

fn c3_optimizers() -> Outcome {
    let t = Instant::now();
    let (theta0, g, lr) = (1.0_f64, 0.5_f64, 0.1_f64);
    let mut worst = 0.0_f64;
    let mut detail = String::new();
    for kind in OptimizerKind::ALL {
        let p = OptimizerParams::new(kind, lr);
        let (b1, b2, rho, eps) = (p.beta1, p.beta2, p.rho, p.epsilon);
        let expected = match kind {
            OptimizerKind::Sgd => theta0 - lr * g,
            // bias-corrected moments equal g and g² after one step
            OptimizerKind::Adam => theta0 - lr * g / (g.abs() + eps),
            OptimizerKind::AdaGrad => theta0 - lr * g / (g.abs() + eps),
            OptimizerKind::AdaDelta => {
                let eg = (1.0 - rho) * g * g;
                theta0 - lr * (eps.sqrt() / (eg + eps).sqrt()) * g
            }
            OptimizerKind::AdaMax => theta0 - lr / (1.0 - b1) * ((1.0 - b1) * g) / (g.abs() + eps),
            OptimizerKind::RmsProp => theta0 - lr * g / (((1.0 - rho) * g * g).sqrt() + eps),
        };
        let _ = b2;
        let mut theta = [theta0];
        OptimizerState::new(p, 1).step(&mut theta, &[g]).map_err(|e| e.to_string())?;
        let err = (theta[0] - expected).abs();
        worst = worst.max(err);
        let _ = write!(detail, "{kind}={:.6} ", theta[0]);
        if kind == OptimizerKind::Sgd {
            let mut th = [1.0];
            OptimizerState::new(OptimizerParams::new(kind, 0.1), 1)
                .step(&mut th, &[2.0])
                .map_err(|e| e.to_string())?;
            check((th[0] - 0.8).abs() <= 1e-10, format!("sgd example gave {}", th[0]))?;
        }
        if kind == OptimizerKind::Adam {
            check(((theta0 - theta[0]) - lr).abs() <= 1e-6, "adam first step is not ≈ lr")?;
        }
    }
    check(worst <= 1e-10, format!("max deviation {worst:e}"))?;
    within(t.elapsed(), 1.0)?;
    Ok(format!("max deviation {worst:.1e}; {}", detail.trim_end()))
}

fn c4_pca() -> Outcome {
    let t = Instant::now();
    let mut worst = 0.0_f64;
    for c in [3usize, 4, 5] {
        let labels: Vec<usize> = (0..6 * c).map(|i| i % c).collect();
        let m = label_matrix(&labels, c);
        let (_, rank) = pca_spectrum(&m).map_err(|e| e.to_string())?;
        check(rank == c - 1, format!("C={c}: rank {rank}"))?;
        let model = fit_pca(&m, c - 1).map_err(|e| e.to_string())?;
        for node in 0..c {
            let mut onehot = vec![0.0; c];
            onehot[node] = 1.0;
            let y = model.project(&onehot).map_err(|e| e.to_string())?;
            let back = model.inverse_project(&y).map_err(|e| e.to_string())?;
            for (a, b) in back.iter().zip(&onehot) {
                worst = worst.max((a - b).abs());
            }
        }
        let d4 = fit_pca(&m, 4);
        check(d4.is_ok() == (c >= 5), format!("C={c}: d_out=4 accepted={}", d4.is_ok()))?;
    }
    check(worst <= 1e-10, format!("round-trip error {worst:e}"))?;
    within(t.elapsed(), 1.0)?;
    Ok(format!("rank C-1 for C=3,4,5; round-trip error {worst:.1e}; d_out=4 only for C>=5"))
}

/// Criteria 5 and 6 share one training run on the default synthetic corpus.
fn c5_c6_training() -> (Outcome, Outcome) {
    let t = Instant::now();
    let ds = match generate(&SynthParams::default()).and_then(|c| c.dataset()) {
        Ok(ds) => ds,
        Err(e) => return (Err(e.to_string()), Err(e.to_string())),
    };
    let cfg = PipelineConfig {
        d_out: 3,
        final_epochs: 200,
        null_copies: 5,
        ..PipelineConfig::default()
    };
    let out = match run_training(&cfg, &ds) {
        Ok(o) => o,
        Err(e) => return (Err(e.to_string()), Err(e.to_string())),
    };
    let train_time = t.elapsed();
    let c5 = (|| {
        let last = out.combined.last().ok_or("no epochs")?;
        check(last.epoch == 200, format!("ran {} epochs", last.epoch))?;
        let null = last.null_loss_mean.ok_or("no null loss")?;
        check(
            last.test_loss < 0.7 * null,
            format!("test {:.4} vs 0.7 x null {:.4}", last.test_loss, 0.7 * null),
        )?;
        within(train_time, 300.0)?;
        Ok(format!(
            "test {:.4} < 0.7 x null mean {:.4} (ratio {:.3}), train {:.4}",
            last.test_loss,
            null,
            last.test_loss / null,
            last.train_loss
        ))
    })();
    let c6 = (|| {
        let t = Instant::now();
        let dep = &out.deployed;
        let train: Vec<_> = out.prepared.dataset.train().collect();
        let mut hits = 0;
        for atom in &train {
            let (path, _) = dep.classify(atom, ClassifyMode::Projected).map_err(|e| e.to_string())?;
            hits += (path == atom.category) as usize;
        }
        let acc = hits as f64 / train.len() as f64;
        let classifier: Classifier = dep.classifier().map_err(|e| e.to_string())?;
        let proj = classifier.projected_candidates();
        let d = proj[0].dim();
        let (lo, hi) = (0..d).fold((vec![f64::MAX; d], vec![f64::MIN; d]), |(mut lo, mut hi), k| {
            for p in proj {
                lo[k] = lo[k].min(p.0[k]);
                hi[k] = hi[k].max(p.0[k]);
            }
            (lo, hi)
        });
        let mut r = rng_for(66, 0);
        let probes = 2000;
        let mut agree = 0;
        for _ in 0..probes {
            let y = LabelPoint((0..d).map(|k| r.gen_range(lo[k] - 0.5..hi[k] + 0.5)).collect());
            let a = classifier.nearest(&y, ClassifyMode::Projected).map_err(|e| e.to_string())?;
            let b = classifier.nearest(&y, ClassifyMode::NodeSpace).map_err(|e| e.to_string())?;
            agree += (a == b) as usize;
        }
        let agreement = agree as f64 / probes as f64;
        check(acc >= 0.9, format!("training accuracy {acc:.3}"))?;
        check(agreement >= 0.99, format!("mode agreement {agreement:.4}"))?;
        within(t.elapsed(), 60.0)?;
        Ok(format!(
            "training accuracy {:.1}% ({hits}/{}), mode agreement {:.1}% of {probes} probes",
            100.0 * acc,
            train.len(),
            100.0 * agreement
        ))
    })();
    (c5, c6)
}

fn int_var(name: &str, max: i64) -> Variable {
    Variable {
        name: name.into(),
        domain: Domain::Int { min: 0, max, step: 1 },
    }
}

fn c7_pattern_search() -> Outcome {
    let t = Instant::now();
    let space = MetaSpace {
        variables: vec![int_var("a", 9), int_var("b", 9), int_var("c", 9)],
    };
    let mut r = rng_for(77, 0);
    let cases = 20;
    for case in 0..cases {
        let centre: Vec<f64> = (0..3).map(|_| r.gen_range(-1.0..10.0)).collect();
        let weights: Vec<f64> = (0..3).map(|_| r.gen_range(0.5..3.0)).collect();
        let coupling = r.gen_range(0.0..0.3);
        // positive definite: diagonal dominates the single off-diagonal term
        let f = |p: &MetaPoint| {
            let d: Vec<f64> = (0..3).map(|k| p.0[k] as f64 - centre[k]).collect();
            (0..3).map(|k| weights[k] * d[k] * d[k]).sum::<f64>() + coupling * d[0] * d[1]
        };
        let mut brute = (f64::INFINITY, MetaPoint(vec![]));
        for a in 0..10 {
            for b in 0..10 {
                for c in 0..10 {
                    let p = MetaPoint(vec![a, b, c]);
                    let v = f(&p);
                    if v < brute.0 {
                        brute = (v, p);
                    }
                }
            }
        }
        let res = pattern_search(&space, f, &SearchParams::default(), case).map_err(|e| e.to_string())?;
        check(
            (res.best_fitness - brute.0).abs() <= 1e-12,
            format!("case {case}: found {:?} ({}) vs brute force {:?} ({})", res.best, res.best_fitness, brute.1, brute.0),
        )?;
        let inc = res.trace.incumbents();
        check(inc.windows(2).all(|w| w[1] <= w[0]), format!("case {case}: incumbents not monotone"))?;
        // the search ends with exactly three non-improving exploratory sets
        let last_chosen = res.trace.rows.iter().filter(|r| r.kind == StepKind::Chosen).map(|r| r.iter).max().unwrap_or(0);
        let tail: Vec<usize> = (last_chosen + 1..=res.trace.iterations()).collect();
        check(tail.len() >= 3, format!("case {case}: stopped after {} non-improving sets", tail.len()))?;
        let trailing_explore = tail
            .iter()
            .rev()
            .take_while(|&&i| res.trace.rows.iter().any(|r| r.iter == i && r.kind == StepKind::Explore))
            .count();
        check(trailing_explore == 3, format!("case {case}: {trailing_explore} trailing exploratory sets"))?;
    }
    // a flat fitness never improves: exactly three sets, then stop
    let flat = pattern_search(&space, |_: &MetaPoint| 1.0, &SearchParams::default(), 5).map_err(|e| e.to_string())?;
    check(flat.trace.iterations() == 3, format!("flat fitness ran {} sets", flat.trace.iterations()))?;
    within(t.elapsed(), 5.0)?;
    Ok(format!("{cases} quadratics matched brute force on 10^3 lattice; stall stop after 3 sets"))
}

fn tiny_space() -> HyperSpace {
    HyperSpace {
        learning_rate: RealRange::LogUniform { lo: 1e-4, hi: 1e-1 },
        hidden_layers: IntRange { min: 1, max: 3 },
        ..HyperSpace::for_optimizer(OptimizerKind::Adam)
    }
}

fn c8_hyperband() -> Outcome {
    let t = Instant::now();
    for (r_max, eta, expect) in [
        (9usize, 3usize, vec![vec![(9usize, 1.0_f64), (3, 3.0), (1, 9.0)], vec![(5, 3.0), (1, 9.0)], vec![(3, 9.0)]]),
        (
            27,
            3,
            vec![
                vec![(27, 1.0), (9, 3.0), (3, 9.0), (1, 27.0)],
                vec![(12, 3.0), (4, 9.0), (1, 27.0)],
                vec![(6, 9.0), (2, 27.0)],
                vec![(4, 27.0)],
            ],
        ),
    ] {
        // formula enumeration in floating point
        let s_max = ((r_max as f64).ln() / (eta as f64).ln() + 1e-9).floor() as i32;
        let mut formula = Vec::new();
        for s in (0..=s_max).rev() {
            let n = ((s_max + 1) as f64 / (s + 1) as f64 * (eta as f64).powi(s)).ceil() as usize;
            let r = r_max as f64 * (eta as f64).powi(-s);
            formula.push(
                (0..=s)
                    .map(|i| ((n as f64 * (eta as f64).powi(-i)).floor() as usize, r * (eta as f64).powi(i)))
                    .collect::<Vec<_>>(),
            );
        }
        check(formula == expect, format!("R={r_max}: formula {formula:?}"))?;
        let got: Vec<Vec<(usize, f64)>> = bracket_schedule(r_max, eta)
            .map_err(|e| e.to_string())?
            .iter()
            .map(|b| b.rungs.iter().map(|r| (r.n, r.r)).collect())
            .collect();
        check(got.len() == formula.len(), format!("R={r_max}: {} brackets", got.len()))?;
        for (g, f) in got.iter().zip(&formula) {
            check(
                g.len() == f.len() && g.iter().zip(f).all(|(a, b)| a.0 == b.0 && (a.1 - b.1).abs() < 1e-9),
                format!("R={r_max}: bracket {g:?} vs {f:?}"),
            )?;
        }
    }

    let fitness = |hp: &HyperParams, epochs: usize, _seed: u64| -> metastim::Result<f64> {
        Ok((hp.learning_rate.ln() + 5.0).powi(2) + hp.layers.len() as f64 * 0.1 + 1.0 / epochs as f64)
    };
    let res = hyperband(&tiny_space(), 27, 3, fitness, 8).map_err(|e| e.to_string())?;
    let schedule = bracket_schedule(27, 3).map_err(|e| e.to_string())?;
    let mut rungs_checked = 0;
    for b in &schedule {
        for i in 0..b.rungs.len() - 1 {
            let mut here: Vec<(f64, usize)> = res
                .trials
                .iter()
                .filter(|t| t.bracket == Some(b.s) && t.rung == Some(i))
                .map(|t| (t.fitness.unwrap(), t.index))
                .collect();
            check(here.len() == b.rungs[i].n, format!("bracket {} rung {i}: {} trials", b.s, here.len()))?;
            here.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut want: Vec<usize> = here.iter().take(b.rungs[i].n / 3).map(|p| p.1).collect();
            let mut next: Vec<usize> = res
                .trials
                .iter()
                .filter(|t| t.bracket == Some(b.s) && t.rung == Some(i + 1))
                .map(|t| t.index)
                .collect();
            want.sort();
            next.sort();
            check(want == next, format!("bracket {} rung {i}: survivors {next:?}, top {want:?}", b.s))?;
            rungs_checked += 1;
        }
    }
    within(t.elapsed(), 5.0)?;
    Ok(format!("schedules for R=9,27 (eta=3) match; survivors are the top floor(n/eta) in {rungs_checked} rungs"))
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_metastim")
}

fn run_cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(bin()).args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "`metastim {}` exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn c9_metaopt(root: &Path) -> Outcome {
    let t = Instant::now();
    let corpus_dir = root.join("c9_corpus");
    run_cli(&["gen-corpus", "--out", corpus_dir.to_str().unwrap()])?;
    let config = root.join("c9.json");
    fs::write(
        &config,
        serde_json::json!({
            "corpus": corpus_dir.join("corpus.jsonl"),
            "tuner_params": { "budget": 5, "epochs": 10 },
            "trial_epochs": 10,
        })
        .to_string(),
    )
    .map_err(|e| e.to_string())?;
    let runs: Vec<_> = ["c9_a", "c9_b"]
        .iter()
        .map(|name| {
            let out = root.join(name);
            let config = config.clone();
            thread::spawn(move || {
                run_cli(&["metaopt", "--config", config.to_str().unwrap(), "--seed", "0", "--out", out.to_str().unwrap()])
                    .map(|_| out)
            })
        })
        .collect();
    let dirs: Vec<_> = runs.into_iter().map(|h| h.join().unwrap()).collect::<Result<_, _>>()?;
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()));
    let (trace_a, trace_b) = (read(&dirs[0].join("trace.csv"))?, read(&dirs[1].join("trace.csv"))?);
    check(trace_a == trace_b, "traces differ between identical runs")?;
    check(
        read(&dirs[0].join("best_meta.json"))? == read(&dirs[1].join("best_meta.json"))?,
        "best meta-points differ",
    )?;
    let best: serde_json::Value = serde_json::from_str(&read(&dirs[0].join("best_meta.json"))?).map_err(|e| e.to_string())?;
    let fit = |k: &str| best[k].as_f64().unwrap_or(f64::INFINITY);
    let (chosen, base) = (fit("fitness"), fit("base_fitness"));
    check(chosen.is_finite(), "no finite fitness found")?;
    check(chosen <= base, format!("chosen {chosen} > base {base}"))?;
    within(t.elapsed(), 1200.0)?;
    Ok(format!(
        "identical traces ({} rows); chosen fitness {chosen:.5} <= base {base}; {} evaluations",
        trace_a.lines().count() - 1,
        best["evaluations"]
    ))
}

fn c10_configs(root: &Path) -> Outcome {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut notes = Vec::new();
    for name in ["table5_optimal", "table3_dim0"] {
        let path = configs.join(format!("{name}.json"));
        let cfg = PipelineConfig::load(&path).map_err(|e| format!("{name}: {e}"))?;
        cfg.validate().map_err(|e| format!("{name}: {e}"))?;
        let out = root.join(format!("c10_{name}"));
        let stdout = run_cli(&["train", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()])?;
        check(out.join("checkpoint/manifest.json").is_file(), format!("{name}: no checkpoint"))?;
        check(out.join("losses.csv").is_file(), format!("{name}: no losses.csv"))?;
        notes.push(format!("{name}: {}", stdout.trim()));
    }
    let t5 = PipelineConfig::load(configs.join("table5_optimal.json")).map_err(|e| e.to_string())?;
    check(
        t5.d_out == 4 && t5.input_dims == 20 && t5.keyword_weight == 5.0,
        "table5 values drifted",
    )?;
    Ok(notes.join("; "))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let root = tmp.path().to_path_buf();
    let start = Instant::now();

    let slow_root = root.clone();
    let c9 = thread::spawn(move || c9_metaopt(&slow_root));
    let c10_root = root.clone();
    let c10 = thread::spawn(move || c10_configs(&c10_root));
    let c56 = thread::spawn(c5_c6_training);

    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "nabla embedding algebra", c1_nabla()),
        (2, "backprop vs finite differences", c2_gradients()),
        (3, "optimizer one-step oracles", c3_optimizers()),
        (4, "PCA rank and round trip", c4_pca()),
    ];
    let (c5, c6) = c56.join().unwrap_or_else(|_| (Err("panicked".into()), Err("panicked".into())));
    results.push((5, "null-set protocol", c5));
    results.push((6, "classifier accuracy and mode agreement", c6));
    results.push((7, "pattern search", c7_pattern_search()));
    results.push((8, "hyperband schedule and survivors", c8_hyperband()));
    results.push((9, "end-to-end metaopt determinism", c9.join().unwrap_or_else(|_| Err("panicked".into()))));
    results.push((10, "reproduction configs train", c10.join().unwrap_or_else(|_| Err("panicked".into()))));

    let mut failed = 0;
    for (n, name, outcome) in &results {
        match outcome {
            Ok(msg) => println!("PASS criterion {n:>2} ({name}): {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {n:>2} ({name}): {msg}");
            }
        }
    }
    println!(
        "acceptance: {}/{} criteria passed in {:.1}s",
        results.len() - failed,
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
