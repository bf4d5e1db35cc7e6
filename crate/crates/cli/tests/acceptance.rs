//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the libtest
//! harness so the lines and the ablation table are always printed.

use std::collections::BTreeSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use pin_cli::{cmd_gradcheck, cmd_synth, cmd_train, RunConfig, TrainSummary, DEV_HISTORY_FILE, DEV_REPORT_FILE, LOSS_FILE, TEST_REPORT_FILE};
use pin_core::config::{Ablation, ModelDims};
use pin_core::cooperation::fuse_slot;
use pin_core::data::{load_corpus, pad_batch, write_corpus, Corpus, EncodedSample, Sample, SynthSpec, UtteranceBatch};
use pin_core::encoder::{bilstm_forward, gaussian_self_attention, GaussianAttentionParams, LstmParams};
use pin_core::metrics::{extract_chunks, intent_error_rate, sentence_accuracy, slot_f1, Chunk};
use pin_core::model::{GroupStatus, Mode, PinModel, Sizes, TrainMode};
use pin_core::tensor::{ParamStore, Tape};
use pin_core::Rng;

type Check = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

const SEEDS: [u64; 3] = [1, 2, 3];

fn variants() -> [(Ablation, &'static str); 5] {
    let none = Ablation::default();
    [
        (none, "Full PIN model"),
        (Ablation { no_slot2intent: true, ..none }, "w/o Slot2Intent module"),
        (Ablation { no_intent2slot: true, ..none }, "w/o Intent2Slot module"),
        (Ablation { no_gaussian_attention: true, ..none }, "w/o Gaussian self-attention"),
        (Ablation { no_cooperation: true, ..none }, "w/o cooperation mechanism"),
    ]
}

fn gradient_fidelity() -> Check {
    let start = Instant::now();
    let checks = cmd_gradcheck(Ablation::default(), 1).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let mut worst = (0.0f64, "");
    for c in &checks {
        match c.status {
            GroupStatus::Checked(e) if e > worst.0 => worst = (e, c.name),
            GroupStatus::Checked(_) => {}
            GroupStatus::Unused { .. } => return Err(format!("{} unexpectedly unused", c.name)),
        }
    }
    ensure!(checks.len() == 12, "{} groups checked", checks.len());
    ensure!(worst.0 <= 1e-4, "{} error {:.3e} > 1e-4", worst.1, worst.0);
    ensure!(elapsed <= Duration::from_secs(120), "took {:?}", elapsed);
    Ok(format!("12 groups, worst {:.3e} ({}), {:.1?}", worst.0, worst.1, elapsed))
}

fn analytic_oracles() -> Check {
    let mut tape = Tape::new();
    let x = tape.leaf(vec![1.0, -1.0], &[1, 2], false).map_err(|e| e.to_string())?;
    let s = tape.softmax(x, 1).map_err(|e| e.to_string())?;
    let v = tape.value(s).to_vec();
    ensure!((v[0] - 0.88080).abs() <= 1e-4 && (v[1] - 0.11920).abs() <= 1e-4, "softmax gave {:?}", v);

    let mut store = ParamStore::new();
    let att = GaussianAttentionParams::new(&mut store, "att").unwrap();
    let bound = att.bind(&store, &mut tape);
    let x = tape.leaf(vec![0.7, -2.5, 3.0, 0.1], &[1, 4], false).unwrap();
    let c = gaussian_self_attention(&mut tape, x, &[true], &bound).unwrap();
    ensure!(tape.value(c) == tape.value(x), "T=1 attention is not the identity");

    let mut rng = Rng::new(4);
    let (fwd, bwd) = (
        LstmParams::new(&mut store, "f", 3, 4, &mut rng).unwrap(),
        LstmParams::new(&mut store, "b", 3, 4, &mut rng).unwrap(),
    );
    for id in fwd.ids().into_iter().chain(bwd.ids()) {
        store.get_mut(id).values.iter_mut().for_each(|v| *v = 0.0);
    }
    let (bf, bb) = (fwd.bind(&store, &mut tape), bwd.bind(&store, &mut tape));
    let emb: Vec<_> = (0..5)
        .map(|_| {
            let vals = (0..6).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
            tape.leaf(vals, &[2, 3], false).unwrap()
        })
        .collect();
    let hs = bilstm_forward(&mut tape, &emb, &[5, 3], &bf, &bb).unwrap();
    ensure!(hs.iter().all(|&h| tape.value(h).iter().all(|&v| v == 0.0)), "zero-weight LSTM produced nonzero states");

    for k in [2usize, 7, 31] {
        let u = tape.constant(vec![1.0 / k as f64; k], &[1, k]).unwrap();
        let nll = tape.nll(u, &[Some(k / 2)]).unwrap();
        let err = (tape.item(nll) - (k as f64).ln()).abs();
        ensure!(err <= 1e-12, "uniform cross-entropy off by {:e} for K={}", err, k);
    }

    let width = 6;
    for _ in 0..1000 {
        let mut draw = |lo: f64, hi: f64| (0..width).map(|_| rng.uniform_range(lo, hi)).collect::<Vec<_>>();
        let (a, b, r) = (draw(-5.0, 5.0), draw(-5.0, 5.0), draw(0.0, 1.0));
        let mut t = Tape::new();
        let (av, bv, rv) = (
            t.leaf(a.clone(), &[1, width], false).unwrap(),
            t.leaf(b.clone(), &[1, width], false).unwrap(),
            t.leaf(r, &[1, width], false).unwrap(),
        );
        let out = fuse_slot(&mut t, av, bv, rv).unwrap();
        for (k, &o) in t.value(out).iter().enumerate() {
            let (lo, hi) = (a[k].min(b[k]), a[k].max(b[k]));
            ensure!(o >= lo - 1e-12 && o <= hi + 1e-12, "fusion {} outside [{}, {}]", o, lo, hi);
        }
    }
    Ok("softmax, T=1 attention, zero LSTM, uniform CE, 1000 convexity triples".into())
}

const TAGS: [&str; 7] = ["O", "B-a", "I-a", "B-b", "I-b", "B-c", "I-c"];

fn random_tags(rng: &mut Rng, len: usize) -> Vec<String> {
    (0..len).map(|_| TAGS[rng.below(TAGS.len())].to_string()).collect()
}

/// Every `(type, start, end)` whose first tag opens a chunk of that type,
/// whose remaining tags continue it, and which the next tag does not extend.
fn brute_force_chunks(tags: &[String]) -> BTreeSet<(String, usize, usize)> {
    let kind = |t: &str| t.get(2..).map(str::to_string);
    let mut out = BTreeSet::new();
    for s in 0..tags.len() {
        let Some(x) = kind(&tags[s]) else { continue };
        let prev_same = s > 0 && kind(&tags[s - 1]).as_deref() == Some(x.as_str());
        let opens = tags[s].starts_with("B-") || !prev_same;
        if !opens {
            continue;
        }
        for e in s..tags.len() {
            let inside = (s + 1..=e).all(|i| tags[i] == format!("I-{}", x));
            let closed = tags.get(e + 1).is_none_or(|t| *t != format!("I-{}", x));
            if inside && closed {
                out.insert((x.clone(), s, e));
            }
        }
    }
    out
}

fn metric_oracles() -> Check {
    let mut rng = Rng::new(77);
    for pair in 0..200 {
        let n = rng.inclusive(1, 6);
        let lens: Vec<usize> = (0..n).map(|_| rng.inclusive(1, 10)).collect();
        let gold: Vec<Vec<String>> = lens.iter().map(|&l| random_tags(&mut rng, l)).collect();
        let pred: Vec<Vec<String>> = lens.iter().map(|&l| random_tags(&mut rng, l)).collect();
        let (mut g_total, mut p_total, mut hits) = (0usize, 0usize, 0usize);
        for (g, p) in gold.iter().zip(&pred) {
            let (gs, ps) = (brute_force_chunks(g), brute_force_chunks(p));
            let mine: BTreeSet<(String, usize, usize)> = extract_chunks(g).into_iter().map(|c: Chunk| (c.kind, c.start, c.end)).collect();
            ensure!(mine == gs, "chunk sets differ on {:?}", g);
            g_total += gs.len();
            p_total += ps.len();
            hits += gs.intersection(&ps).count();
        }
        let p = if p_total == 0 { 0.0 } else { hits as f64 / p_total as f64 };
        let r = if g_total == 0 { 0.0 } else { hits as f64 / g_total as f64 };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        let s = slot_f1(&gold, &pred).map_err(|e| e.to_string())?;
        ensure!(
            (s.precision - p).abs() < 1e-12 && (s.recall - r).abs() < 1e-12 && (s.f1 - f).abs() < 1e-12,
            "pair {}: got ({}, {}, {}), oracle ({}, {}, {})",
            pair, s.precision, s.recall, s.f1, p, r, f
        );
    }

    let split = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
    let s = slot_f1(&[split("O B-artist I-artist O O")], &[split("O B-artist I-artist O B-album")]).unwrap();
    ensure!(s.precision == 0.5 && s.recall == 1.0 && (s.f1 - 2.0 / 3.0).abs() < 1e-15, "hand fixture gave {:?}", s);

    for corpus in 0..100 {
        let n = rng.inclusive(1, 12);
        let lens: Vec<usize> = (0..n).map(|_| rng.inclusive(1, 8)).collect();
        let gt: Vec<Vec<String>> = lens.iter().map(|&l| random_tags(&mut rng, l)).collect();
        let pt: Vec<Vec<String>> = gt
            .iter()
            .map(|g| if rng.bernoulli(0.5) { g.clone() } else { random_tags(&mut rng, g.len()) })
            .collect();
        let gi: Vec<usize> = (0..n).map(|_| rng.below(3)).collect();
        let pi: Vec<usize> = gi.iter().map(|&g| if rng.bernoulli(0.6) { g } else { rng.below(3) }).collect();
        let err = intent_error_rate(&gi, &pi).unwrap();
        let acc = gi.iter().zip(&pi).filter(|(a, b)| a == b).count() as f64 / n as f64;
        ensure!((err + acc - 1.0).abs() < 1e-12, "corpus {}: error + accuracy != 1", corpus);
        let both = (0..n).filter(|&i| gi[i] == pi[i] && gt[i] == pt[i]).count() as f64 / n as f64;
        let sent = sentence_accuracy(&gi, &gt, &pi, &pt).unwrap();
        ensure!(sent == both, "corpus {}: sentence accuracy {} vs {}", corpus, sent, both);
        let tags_ok = (0..n).filter(|&i| gt[i] == pt[i]).count() as f64 / n as f64;
        ensure!(sent <= acc.min(tags_ok), "corpus {}: sentence accuracy above its parts", corpus);
        ensure!(sentence_accuracy(&gi, &gt, &gi, &gt).unwrap() == 1.0, "corpus {}: perfect prediction", corpus);
    }
    Ok("200 random pairs, hand fixture P=0.5 R=1 F1=2/3, 100 random corpora".into())
}

fn sample(tokens: &str, tags: &str, intent: &str) -> Sample {
    let words = |s: &str| s.split_whitespace().map(String::from).collect();
    Sample {
        tokens: words(tokens),
        tags: words(tags),
        intent: intent.into(),
    }
}

fn run_config(data: &Path, out: &Path, pairs: &[(&str, String)]) -> RunConfig {
    let mut overrides = vec![
        ("data".to_string(), data.display().to_string()),
        ("out".to_string(), out.display().to_string()),
    ];
    overrides.extend(pairs.iter().map(|(k, v)| (k.to_string(), v.clone())));
    RunConfig::resolve(None, &overrides).expect("valid run config")
}

fn overfit(tmp: &Path) -> Check {
    let set = vec![
        sample("book a table at noon", "O O O O B-time", "BookRestaurant"),
        sample("play some jazz", "O O B-genre", "PlayMusic"),
        sample("play songs by adele now", "O O O B-artist O", "PlayMusic"),
        sample("reserve for two people", "O O B-party I-party", "BookRestaurant"),
    ];
    let data = tmp.join("four");
    write_corpus(&Corpus { train: set.clone(), dev: set.clone(), test: set }, &data).map_err(|e| e.to_string())?;
    let cfg = run_config(
        &data,
        &tmp.join("overfit"),
        &[
            ("emb_dim", "16".into()),
            ("hidden", "16".into()),
            ("learning_rate", "0.03".into()),
            ("dropout_rate", "0".into()),
            ("batch_size", "4".into()),
            ("max_epochs", "200".into()),
            ("patience", "200".into()),
        ],
    );
    let start = Instant::now();
    let summary = cmd_train(&cfg, |_| {}).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let first_below = summary.outcome.history.iter().find(|r| r.train_loss < 0.01).map(|r| r.epoch);
    let last = summary.outcome.history.last().unwrap().train_loss;
    ensure!(first_below.is_some(), "joint loss never below 0.01 (final {:.5})", last);
    ensure!(elapsed <= Duration::from_secs(60), "took {:?}", elapsed);
    Ok(format!(
        "loss < 0.01 from epoch {}, final {:.5}, {:.1?}",
        first_below.unwrap(),
        last,
        elapsed
    ))
}

struct RunResult {
    ablation: Ablation,
    summary: TrainSummary,
    elapsed: Duration,
}

/// Full and ablated runs on the purity-1 synthetic corpus for every seed.
fn synthetic_runs(tmp: &Path) -> Vec<RunResult> {
    let mut results = Vec::new();
    for seed in SEEDS {
        let data = tmp.join(format!("synth{}", seed));
        cmd_synth(&SynthSpec { seed, ..SynthSpec::default() }, &data).expect("synthetic corpus");
        for (ablation, _) in variants() {
            let mut pairs = vec![
                ("seed", seed.to_string()),
                ("emb_dim", "32".into()),
                ("hidden", "32".into()),
                ("learning_rate", "0.01".into()),
                ("max_epochs", "30".into()),
            ];
            let flags = [
                ("no_slot2intent", ablation.no_slot2intent),
                ("no_intent2slot", ablation.no_intent2slot),
                ("no_gaussian_attention", ablation.no_gaussian_attention),
                ("no_cooperation", ablation.no_cooperation),
            ];
            pairs.extend(flags.iter().filter(|f| f.1).map(|f| (f.0, "true".to_string())));
            let out = tmp.join(format!("run{}_{}", seed, ablation.label().replace(' ', "_")));
            let start = Instant::now();
            let summary = cmd_train(&run_config(&data, &out, &pairs), |_| {}).expect("training run");
            let elapsed = start.elapsed();
            eprintln!(
                "  [{}] seed {}: best dev acc {:.4} at epoch {}, test acc {:.4}, {:.1?}",
                ablation.label(),
                seed,
                summary.outcome.best_dev.sentence_accuracy,
                summary.outcome.best_epoch,
                summary.test.sentence_accuracy,
                elapsed
            );
            results.push(RunResult { ablation, summary, elapsed });
        }
    }
    results
}

fn synthetic_end_to_end(runs: &[RunResult]) -> Check {
    let full: Vec<&RunResult> = runs.iter().filter(|r| r.ablation == Ablation::default()).collect();
    ensure!(full.len() == SEEDS.len(), "{} full runs", full.len());
    let mut parts = Vec::new();
    for (seed, r) in SEEDS.iter().zip(&full) {
        let best = r
            .summary
            .outcome
            .history
            .iter()
            .filter(|e| e.epoch <= 30)
            .map(|e| e.dev.sentence_accuracy)
            .fold(0.0, f64::max);
        ensure!(best >= 0.95, "seed {}: best dev sentence accuracy {:.4} < 0.95", seed, best);
        ensure!(r.elapsed <= Duration::from_secs(600), "seed {}: took {:?}", seed, r.elapsed);
        parts.push(format!("seed {}: {:.4} in {:.0?}", seed, best, r.elapsed));
    }
    Ok(parts.join(", "))
}

fn mean(runs: &[RunResult], ablation: Ablation, f: impl Fn(&TrainSummary) -> f64) -> f64 {
    let xs: Vec<f64> = runs.iter().filter(|r| r.ablation == ablation).map(|r| f(&r.summary)).collect();
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn ablation_table(runs: &[RunResult]) -> String {
    let mut t = format!(
        "{:<30} {:>12} {:>14} {:>15}\n",
        "Model", "Slot (F1)", "Intent (Acc)", "Overall (Acc)"
    );
    for (ablation, label) in variants() {
        let f1 = mean(runs, ablation, |s| s.test.slot_f1) * 100.0;
        let intent = mean(runs, ablation, |s| 1.0 - s.test.intent_error_rate) * 100.0;
        let overall = mean(runs, ablation, |s| s.test.sentence_accuracy) * 100.0;
        t.push_str(&format!("{:<30} {:>12.2} {:>14.2} {:>15.2}\n", label, f1, intent, overall));
    }
    t
}

fn ablation_non_inferiority(runs: &[RunResult]) -> Check {
    let acc = |a: Ablation| mean(runs, a, |s| s.test.sentence_accuracy) * 100.0;
    let full = acc(Ablation::default());
    let mut parts = vec![format!("full {:.2}%", full)];
    let mut failures = Vec::new();
    for (ablation, label) in variants().into_iter().skip(1).take(2) {
        let other = acc(ablation);
        parts.push(format!("{} {:.2}%", label, other));
        if full < other - 1.0 {
            failures.push(format!("{} leads by {:.2} pp", label, other - full));
        }
    }
    ensure!(failures.is_empty(), "{} ({})", failures.join("; "), parts.join(", "));
    Ok(format!("mean test sentence accuracy: {}", parts.join(", ")))
}

const SIZES: Sizes = Sizes {
    vocab: 15,
    slots: 6,
    intents: 4,
};

fn random_samples(rng: &mut Rng, n: usize, max_len: usize) -> Vec<EncodedSample> {
    (0..n)
        .map(|_| {
            let len = rng.inclusive(1, max_len);
            EncodedSample {
                tokens: (0..len).map(|_| rng.inclusive(1, SIZES.vocab - 1)).collect(),
                slots: (0..len).map(|_| rng.below(SIZES.slots)).collect(),
                intent: rng.below(SIZES.intents),
            }
        })
        .collect()
}

fn batch_of(samples: &[EncodedSample]) -> UtteranceBatch {
    pad_batch(&samples.iter().collect::<Vec<_>>())
}

fn structural_zero_gradients() -> Check {
    let mut rng = Rng::new(31);
    let batch = batch_of(&random_samples(&mut rng, 6, 8));
    let mut parts = Vec::new();
    for (ablation, label) in variants().into_iter().skip(1) {
        let mut model = PinModel::new(SIZES, ModelDims { emb_dim: 6, hidden: 5 }, ablation, 3).map_err(|e| e.to_string())?;
        let mut tape = Tape::new();
        let (mut d, mut f) = (Rng::new(1), Rng::new(2));
        let mode = Mode::Train(TrainMode {
            dropout_rate: 0.4,
            dropout_rng: &mut d,
            teacher_forcing_rate: 0.5,
            forcing_rng: &mut f,
        });
        let loss = model.losses(&mut tape, &batch, mode, 0.5).map_err(|e| e.to_string())?.joint;
        tape.backward(loss).map_err(|e| e.to_string())?;
        model.store.zero_grad();
        model.store.accumulate_grads(&tape);
        let inactive = model.inactive_ids();
        ensure!(!inactive.is_empty(), "{}: nothing disabled", label);
        let mut entries = 0;
        for id in inactive {
            let p = model.store.get(id);
            ensure!(p.grad.iter().all(|&g| g == 0.0), "{}: {} has nonzero gradient", label, p.name);
            entries += p.grad.len();
        }
        parts.push(format!("{} ({} entries)", ablation.label(), entries));
    }
    Ok(parts.join(", "))
}

fn determinism(tmp: &Path) -> Check {
    let spec = SynthSpec {
        train: 60,
        dev: 20,
        test: 20,
        seed: 5,
        ..SynthSpec::default()
    };
    let data = tmp.join("det_data");
    cmd_synth(&spec, &data).map_err(|e| e.to_string())?;
    let pairs = [
        ("emb_dim", "8".to_string()),
        ("hidden", "8".into()),
        ("max_epochs", "3".into()),
        ("learning_rate", "0.01".into()),
        ("seed", "4".into()),
    ];
    let (a, b) = (tmp.join("det_a"), tmp.join("det_b"));
    cmd_train(&run_config(&data, &a, &pairs), |_| {}).map_err(|e| e.to_string())?;
    cmd_train(&run_config(&data, &b, &pairs), |_| {}).map_err(|e| e.to_string())?;
    for f in [LOSS_FILE, DEV_HISTORY_FILE, DEV_REPORT_FILE, TEST_REPORT_FILE] {
        ensure!(fs::read(a.join(f)).unwrap() == fs::read(b.join(f)).unwrap(), "{} differs between runs", f);
    }

    let again = tmp.join("det_data_again");
    cmd_synth(&spec, &again).map_err(|e| e.to_string())?;
    let reloaded = tmp.join("det_data_reloaded");
    write_corpus(&load_corpus(&data).map_err(|e| e.to_string())?, &reloaded).map_err(|e| e.to_string())?;
    for split in ["train", "valid", "test"] {
        for file in ["seq.in", "seq.out", "label"] {
            let original = fs::read(data.join(split).join(file)).unwrap();
            ensure!(original == fs::read(again.join(split).join(file)).unwrap(), "synth {}/{} not reproducible", split, file);
            ensure!(original == fs::read(reloaded.join(split).join(file)).unwrap(), "round trip changed {}/{}", split, file);
        }
    }
    Ok("loss history and reports byte-identical; synth, load, serialize byte-identical".into())
}

fn padding_invariance() -> Check {
    let mut rng = Rng::new(55);
    let mut worst = 0.0f64;
    for b in 0..20 {
        let n = rng.inclusive(2, 8);
        let set = random_samples(&mut rng, n, 12);
        let model = PinModel::new(SIZES, ModelDims { emb_dim: 6, hidden: 5 }, Ablation::default(), b).map_err(|e| e.to_string())?;
        let loss = |batch: &UtteranceBatch| {
            let mut tape = Tape::new();
            let l = model.losses(&mut tape, batch, Mode::Eval, 0.5).unwrap();
            tape.item(l.joint)
        };
        let padded = loss(&batch_of(&set));
        let separate: f64 = set.iter().map(|s| loss(&batch_of(std::slice::from_ref(s)))).sum();
        worst = worst.max((padded - separate).abs());
    }
    ensure!(worst <= 1e-10, "worst difference {:e}", worst);
    Ok(format!("20 mixed-length batches, worst |difference| {:.2e}", worst))
}

fn run(name: &str, f: impl FnOnce() -> Check) -> bool {
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {}", msg))
    });
    match result {
        Ok(detail) => {
            println!("PASS  {}: {}", name, detail);
            true
        }
        Err(detail) => {
            println!("FAIL  {}: {}", name, detail);
            false
        }
    }
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temporary directory");
    let tmp = dir.path();
    let mut ok = true;
    ok &= run("gradient fidelity", gradient_fidelity);
    ok &= run("analytic unit oracles", analytic_oracles);
    ok &= run("metric oracle", metric_oracles);
    ok &= run("overfit capability", || overfit(tmp));

    let runs = catch_unwind(AssertUnwindSafe(|| synthetic_runs(tmp)));
    match &runs {
        Ok(runs) => {
            ok &= run("synthetic end-to-end", || synthetic_end_to_end(runs));
            let table = ablation_table(runs);
            println!("\nAblation on the synthetic corpus (test split, mean of seeds 1-3, %):\n{}", table);
            let report = Path::new(env!("CARGO_TARGET_TMPDIR")).join("ablation_table.txt");
            if fs::write(&report, &table).is_ok() {
                println!("(written to {})\n", report.display());
            }
            ok &= run("ablation non-inferiority", || ablation_non_inferiority(runs));
        }
        Err(_) => {
            ok &= run("synthetic end-to-end", || Err("training runs panicked".into()));
            ok &= run("ablation non-inferiority", || Err("training runs panicked".into()));
        }
    }

    ok &= run("ablation structural checks", structural_zero_gradients);
    ok &= run("determinism", || determinism(tmp));
    ok &= run("padding invariance", padding_invariance);
    if ok {
        println!("\nacceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("\nacceptance: some criteria FAILED");
        ExitCode::FAILURE
    }
}
