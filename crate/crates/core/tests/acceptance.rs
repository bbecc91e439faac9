//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! The optional full-scale comparison runs only when `BULLYSCAN_DATASET`,
//! `BULLYSCAN_EMB1`, `BULLYSCAN_EMBED_URL`, `BULLYSCAN_EMBED_MODEL` and
//! `EMBED_API_KEY` are all set; otherwise it reports SKIP.

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use bullyscan::corpus::{
    clean_fragment, derive_label, normalize_repeats, preprocess, tokenize, Corpus, Delimiter,
    RawRecord, BULLYING,
};
use bullyscan::embeddings::{Embedder, ProviderConfig};
use bullyscan::metrics::{ConfusionMatrix, MetricsReport};
use bullyscan::nn::{adam_step, grad_check, AdamState, EmbeddingTable, Model, ModelInput, ParamSet, Vocab};
use bullyscan::synthetic::{lexicon_corpus, sample_post, SyntheticSpec, LEXICON};
use bullyscan::trainer::{encode_checkpoint, evaluate, predict, split_data, train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Tolerances and budgets.
const GRAD_STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const ADAM_TRACE_TOL: f64 = 1e-12;
const ADAM_FIRST_STEP_REL: f64 = 0.01;
const HAND_F1_TOL: f64 = 1e-9;
const E2E_MIN_ACCURACY: f64 = 95.0;
const E2E_MIN_MACRO_F1: f64 = 0.95;
const E2E_MIN_TRAIN_ACCURACY: f64 = 99.0;
const E2E_MIN_LEXICON_RECALL: f64 = 0.95;
const E2E_BUDGET: Duration = Duration::from_secs(120);
const FULL_SCALE_TARGET_ACCURACY: f64 = 80.0;
const FULL_SCALE_ACCURACY_BAND: f64 = 5.0;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gradient_correctness() -> Check {
    let started = Instant::now();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Model::init(8, 8, &mut rng);
        let xs: Vec<Vec<f64>> = (0..4).map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let tokens: Vec<String> = (0..6).map(|i| format!("t{i}")).collect();
        let table = EmbeddingTable::init(Vocab::build(tokens.iter().map(String::as_str)), 8, &mut rng);
        let table_model = Model::init(8, 8, &mut rng).with_table(table);
        let idx = vec![1, 4, 1, 6];
        for (mode, m, input) in [
            ("provider", &model, ModelInput::Vectors(xs.clone())),
            ("table", &table_model, ModelInput::Tokens(idx.clone())),
        ] {
            for y in [0.0, 1.0] {
                let r = grad_check(m, &input, y, GRAD_STEP, GRAD_TOL).map_err(|e| e.to_string())?;
                ensure(!r.clamp_engaged, || format!("{mode} seed {seed}: probability clamp engaged"))?;
                for (name, err) in &r.per_tensor {
                    ensure(*err < GRAD_TOL, || format!("{mode} seed {seed} y {y}: {name} rel err {err:.3e}"))?;
                }
                worst = worst.max(r.max_relative_error);
                checked += r.parameters_checked;
            }
        }
    }
    let elapsed = started.elapsed();
    ensure(elapsed < GRAD_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("max rel err {worst:.2e} over {checked} parameters in {:.1}s", elapsed.as_secs_f64()))
}

struct Scalars(Vec<f64>);

impl ParamSet for Scalars {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.0]
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.0]
    }
}

fn optimizer_trace() -> Check {
    // Reference values from 40-digit arithmetic, lr 0.1.
    let mut p = Scalars(vec![1.0, -2.0]);
    let mut state = AdamState::new(&p);
    let expected = [
        [0.900_000_001_999_999_960_000_000_8, -2.099_999_999_666_666_667_777_778],
        [0.873_366_298_707_846_162_559_376_4, -2.199_999_999_333_333_335_555_556],
    ];
    for (step, g) in [[0.5, 3.0], [-0.25, 3.0]].iter().enumerate() {
        adam_step(&mut p, &Scalars(g.to_vec()), &mut state, 0.1).map_err(|e| e.to_string())?;
        for k in 0..2 {
            let diff = (p.0[k] - expected[step][k]).abs();
            ensure(diff <= ADAM_TRACE_TOL, || format!("step {} param {k}: off by {diff:.3e}", step + 1))?;
        }
    }
    for g in [1e-3, 0.5, 7.0, -42.0] {
        let lr = 0.001;
        let mut q = Scalars(vec![0.3]);
        let mut s = AdamState::new(&q);
        adam_step(&mut q, &Scalars(vec![g]), &mut s, lr).map_err(|e| e.to_string())?;
        let moved = (q.0[0] - 0.3).abs();
        ensure((moved - lr).abs() <= ADAM_FIRST_STEP_REL * lr, || format!("gradient {g}: first step {moved:.6e}"))?;
    }
    Ok("two-step trace within 1e-12, first step within 1% of lr".into())
}

fn brute_force_metrics(truths: &[i8], preds: &[i8]) -> (f64, f64) {
    let correct = truths.iter().zip(preds).filter(|(a, b)| a == b).count();
    let mut f1 = 0.0;
    for c in [1i8, -1] {
        let tp = truths.iter().zip(preds).filter(|&(&t, &p)| t == c && p == c).count();
        let pred = preds.iter().filter(|&&p| p == c).count();
        let act = truths.iter().filter(|&&t| t == c).count();
        if pred + act > 0 {
            f1 += (2 * tp) as f64 / (pred + act) as f64;
        }
    }
    (100.0 * correct as f64 / truths.len() as f64, f1 / 2.0)
}

fn metrics_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..1000 {
        let n = rng.gen_range(1..300);
        let truths: Vec<i8> = (0..n).map(|_| if rng.gen_bool(0.2) { -1 } else { 1 }).collect();
        let preds: Vec<i8> = (0..n).map(|_| if rng.gen_bool(0.3) { -1 } else { 1 }).collect();
        let cm = ConfusionMatrix::from_pairs(&truths, &preds).map_err(|e| e.to_string())?;
        let (acc, f1) = brute_force_metrics(&truths, &preds);
        ensure(cm.accuracy().unwrap() == acc && cm.macro_f1().unwrap() == f1, || format!("instance {i} differs"))?;
    }
    let r = MetricsReport::from_pairs(&[1, -1, -1, -1], &[1, 1, -1, -1]).map_err(|e| e.to_string())?;
    let want = 11.0 / 15.0;
    ensure((r.macro_f1 - want).abs() < HAND_F1_TOL, || format!("hand case macro F1 {}", r.macro_f1))?;
    Ok(format!("1000 instances exact, hand case {:.4}", r.macro_f1))
}

fn label_oracle(ans: &[Option<&str>; 3], sev: &[Option<u8>; 3]) -> i8 {
    let v: Vec<String> = ans.iter().map(|a| a.unwrap_or("0").trim().to_lowercase()).collect();
    let pair = |i: usize, j: usize| v[i] == v[j] && !matches!(v[i].as_str(), "" | "0" | "no");
    let agree = pair(0, 1) || pair(0, 2) || pair(1, 2);
    if agree && sev.iter().flatten().any(|&s| s > 0) {
        -1
    } else {
        1
    }
}

fn label_derivation() -> Check {
    let answers = [None, Some("Yes"), Some("yes "), Some("No"), Some("0"), Some(""), Some("NO")];
    let severities: Vec<Option<u8>> = std::iter::once(None).chain((0..=10).map(Some)).collect();
    let mut n = 0;
    for a0 in answers {
        for a1 in answers {
            for a2 in answers {
                for s0 in &severities {
                    for s1 in &severities {
                        for s2 in &severities {
                            let ans = [a0, a1, a2];
                            let sev = [*s0, *s1, *s2];
                            let raw = RawRecord {
                                ans: ans.map(|x| x.map(str::to_string)),
                                severity: sev,
                                ..RawRecord::default()
                            };
                            let (got, want) = (derive_label(&raw), label_oracle(&ans, &sev));
                            ensure(got == want, || format!("{ans:?} {sev:?}: got {got}, want {want}"))?;
                            n += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(format!("{n} combinations"))
}

fn preprocessing_goldens() -> Check {
    ensure(normalize_repeats("goooood") == "good", || "goooood".into())?;
    let alphabet: Vec<char> = "aaoo!? xé".chars().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10_000 {
        let s: String = (0..rng.gen_range(0..30)).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect();
        let once = normalize_repeats(&s);
        ensure(normalize_repeats(&once) == once, || format!("not idempotent on {s:?}"))?;
    }
    let fixtures = [
        ("<b>bold</b> text", "bold text"),
        ("line<br/>break<p>para</p>", "line break para"),
        ("fish &amp; chips", "fish & chips"),
        ("&lt;i&gt;x&lt;/i&gt;", "x"),
        ("i <3 you", "i <3 you"),
        ("<div>  spaced&nbsp;&nbsp;out </div>", "spaced out"),
    ];
    for (input, want) in fixtures {
        let got = clean_fragment(input);
        ensure(got == want, || format!("{input:?} -> {got:?}, want {want:?}"))?;
    }
    Ok(format!("goldens, 10^4 idempotence strings, {} markup fixtures", fixtures.len()))
}

/// Perceptron on token counts: zero training errors certifies linear separability.
fn bag_of_words_separable(c: &Corpus) -> Result<usize, String> {
    let mut index: HashMap<String, usize> = HashMap::new();
    let rows: Vec<(Vec<usize>, f64)> = c
        .records
        .iter()
        .map(|r| {
            let text = r.text();
            let feats = tokenize(&text)
                .map(|t| {
                    let n = index.len();
                    *index.entry(t.to_string()).or_insert(n)
                })
                .collect();
            (feats, if r.label == BULLYING { 1.0 } else { -1.0 })
        })
        .collect();
    let mut w = vec![0.0; index.len()];
    let mut b = 0.0;
    for epoch in 1..=100 {
        let mut errors = 0;
        for (feats, y) in &rows {
            let score: f64 = feats.iter().map(|&f| w[f]).sum::<f64>() + b;
            if y * score <= 0.0 {
                errors += 1;
                feats.iter().for_each(|&f| w[f] += y);
                b += y;
            }
        }
        if errors == 0 {
            return Ok(epoch);
        }
    }
    Err("perceptron did not converge in 100 epochs".into())
}

fn default_run(corpus: &Corpus) -> Result<(Vec<u8>, MetricsReport, MetricsReport, f64), String> {
    let cfg = TrainConfig::default();
    let (train_set, test_set) = split_data(corpus, cfg.split_fraction, cfg.seed).map_err(|e| e.to_string())?;
    let embedder = Embedder::from_config(&cfg.provider, None).map_err(|e| e.to_string())?;
    let ckpt = train(&cfg, &train_set, Some(&embedder)).map_err(|e| e.to_string())?;
    let held_out = evaluate(&ckpt, Some(&embedder), &test_set).map_err(|e| e.to_string())?;
    let on_train = evaluate(&ckpt, Some(&embedder), &train_set).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let mut flagged = 0;
    for _ in 0..200 {
        let text = sample_post(&mut rng, true);
        if predict(&ckpt, Some(&embedder), &text).map_err(|e| e.to_string())?.label == BULLYING {
            flagged += 1;
        }
    }
    Ok((encode_checkpoint(&ckpt), held_out, on_train, flagged as f64 / 200.0))
}

struct E2e {
    checkpoint: Vec<u8>,
    report: MetricsReport,
}

fn end_to_end(store: &mut Option<E2e>) -> Check {
    let started = Instant::now();
    let corpus = lexicon_corpus(&SyntheticSpec::default());
    ensure(corpus.len() == 1000, || format!("{} records", corpus.len()))?;
    let lexicon: BTreeSet<&str> = LEXICON.into_iter().collect();
    for r in &corpus.records {
        let text = r.text();
        let has = tokenize(&text).any(|t| lexicon.contains(t));
        ensure(has == (r.label == BULLYING), || format!("record {} label disagrees with lexicon", r.record_id))?;
    }
    let epochs = bag_of_words_separable(&corpus)?;
    let (checkpoint, held_out, on_train, recall) = default_run(&corpus)?;
    let elapsed = started.elapsed();
    let detail = format!(
        "held-out accuracy {:.2}%, macro F1 {:.4}, train accuracy {:.2}%, lexicon posts flagged {:.1}%, separable after {epochs} perceptron epochs, {:.1}s",
        held_out.accuracy,
        held_out.macro_f1,
        on_train.accuracy,
        100.0 * recall,
        elapsed.as_secs_f64()
    );
    ensure(held_out.accuracy >= E2E_MIN_ACCURACY, || detail.clone())?;
    ensure(held_out.macro_f1 >= E2E_MIN_MACRO_F1, || detail.clone())?;
    ensure(on_train.accuracy >= E2E_MIN_TRAIN_ACCURACY, || detail.clone())?;
    ensure(recall >= E2E_MIN_LEXICON_RECALL, || detail.clone())?;
    ensure(elapsed < E2E_BUDGET, || detail.clone())?;
    *store = Some(E2e {
        checkpoint,
        report: held_out,
    });
    Ok(detail)
}

fn determinism(first: &Option<E2e>) -> Check {
    let first = first.as_ref().ok_or("end-to-end run did not complete")?;
    let corpus = lexicon_corpus(&SyntheticSpec::default());
    let (checkpoint, report, _, _) = default_run(&corpus)?;
    ensure(checkpoint == first.checkpoint, || "checkpoint bytes differ".into())?;
    let a = serde_json::to_string(&first.report).unwrap();
    let b = serde_json::to_string(&report).unwrap();
    ensure(a == b, || "metric reports differ".into())?;
    Ok(format!("{}-byte checkpoints and metric reports identical", checkpoint.len()))
}

fn full_scale() -> Outcome {
    let vars = ["BULLYSCAN_DATASET", "BULLYSCAN_EMB1", "BULLYSCAN_EMBED_URL", "BULLYSCAN_EMBED_MODEL", "EMBED_API_KEY"];
    let values: Vec<Option<String>> = vars.iter().map(|v| std::env::var(v).ok().filter(|s| !s.is_empty())).collect();
    if let Some(missing) = vars.iter().zip(&values).find(|(_, v)| v.is_none()) {
        return Outcome::Skip(format!("{} not set", missing.0));
    }
    let v: Vec<String> = values.into_iter().flatten().collect();
    match run_full_scale(&v[0], &v[1], &v[2], &v[3]) {
        Ok(d) => Outcome::Pass(d),
        Err(e) => Outcome::Fail(e),
    }
}

fn run_full_scale(dataset: &str, emb1: &str, url: &str, model: &str) -> Check {
    let pre = preprocess(&PathBuf::from(dataset), Delimiter::Auto).map_err(|e| e.to_string())?;
    let base = TrainConfig::default();
    let (train_set, test_set) = split_data(&pre.corpus, base.split_fraction, base.seed).map_err(|e| e.to_string())?;
    let mut scores = Vec::new();
    for (baseline_mode, provider) in [
        (true, base.provider.clone()),
        (false, ProviderConfig::file(emb1)),
        (false, ProviderConfig::remote(url, model)),
    ] {
        let cfg = TrainConfig {
            baseline_mode,
            provider,
            ..base.clone()
        };
        let emb = if baseline_mode {
            None
        } else {
            Some(Embedder::from_config(&cfg.provider, None).map_err(|e| e.to_string())?)
        };
        let ckpt = train(&cfg, &train_set, emb.as_ref()).map_err(|e| e.to_string())?;
        let r = evaluate(&ckpt, emb.as_ref(), &test_set).map_err(|e| e.to_string())?;
        scores.push((r.accuracy, r.macro_f1));
    }
    let [baseline, file, remote] = [scores[0], scores[1], scores[2]];
    let detail = format!("baseline {baseline:?}, file hybrid {file:?}, remote hybrid {remote:?}");
    ensure(remote.0 > file.0 && file.0 > baseline.0, || format!("accuracy order: {detail}"))?;
    ensure(remote.1 > file.1 && file.1 > baseline.1, || format!("macro F1 order: {detail}"))?;
    ensure((remote.0 - FULL_SCALE_TARGET_ACCURACY).abs() <= FULL_SCALE_ACCURACY_BAND, || detail.clone())?;
    Ok(detail)
}

fn outcome(c: Check) -> Outcome {
    match c {
        Ok(d) => Outcome::Pass(d),
        Err(e) => Outcome::Fail(e),
    }
}

fn main() -> ExitCode {
    let mut e2e = None;
    let results = vec![
        ("gradient correctness", outcome(gradient_correctness())),
        ("optimizer trace", outcome(optimizer_trace())),
        ("metrics oracle", outcome(metrics_oracle())),
        ("label derivation", outcome(label_derivation())),
        ("preprocessing goldens", outcome(preprocessing_goldens())),
        ("end-to-end learnability", outcome(end_to_end(&mut e2e))),
        ("determinism", outcome(determinism(&e2e))),
        ("full-scale embedding comparison", full_scale()),
    ];
    let mut failed = 0;
    for (name, o) in &results {
        match o {
            Outcome::Pass(d) => println!("PASS {name}: {d}"),
            Outcome::Skip(d) => println!("SKIP {name}: {d}"),
            Outcome::Fail(d) => {
                failed += 1;
                println!("FAIL {name}: {d}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
