//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines always reach the console.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use capmatch::aggregate::{
    bin_models, marginal_consistency_check, summarize, ArchitectureFamily, BinSpec, ModelMetadata,
    DEFAULT_MARGINAL_TOLERANCE,
};
use capmatch::audit::{audit_identity_check, implied_coverage, AuditFractions, AuditReport};
use capmatch::eval::{
    average_robustness, effective_robustness_ratio, score_predictions, EvalSample, EvalSet, PredictionRecord, Scores,
    ShiftKind,
};
use capmatch::labeling::{decide_label, find_matches, tokenize, ClassEntry, MatchStrategy, TermDictionary};
use capmatch::labelset::{partition_into_k, remap_prediction, subset, LabelSet};
use capmatch::pipeline::{execute, Exit, RunConfig};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn close(got: f64, want: f64, tol: f64) -> bool {
    (got - want).abs() <= tol
}

fn metric_goldens() -> Verdict {
    let avg = average_robustness(&[0.791, 0.373, 0.378, 0.153]).unwrap();
    let err = effective_robustness_ratio(0.424, 0.870).unwrap();
    let err_vl = effective_robustness_ratio(0.123, 0.236).unwrap();
    // the ratio of the unrounded average as well
    let err_raw = effective_robustness_ratio(avg, 0.870).unwrap();
    let pass = close(avg, 0.424, 0.0005) && close(err, 0.487, 0.001) && close(err_vl, 0.521, 0.001) && close(err_raw, 0.487, 0.001);
    verdict(
        pass,
        format!("avg_rob={avg:.5} err={err:.5} (raw {err_raw:.5}) err_vl={err_vl:.5}"),
    )
}

fn models_for(values: &[f64], prefix: &str, fill: impl Fn(ModelMetadata) -> ModelMetadata) -> Vec<ModelMetadata> {
    let mut out: Vec<ModelMetadata> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| fill(ModelMetadata::new(format!("{prefix}{i:02}")).with_metric("avg_rob", v)))
        .collect();
    // weaker models in the same bin; they must fall outside the top ten
    let floor = values.iter().cloned().fold(f64::INFINITY, f64::min);
    for j in 0..7 {
        out.push(fill(
            ModelMetadata::new(format!("{prefix}weak{j}")).with_metric("avg_rob", floor - 0.01 - 0.02 * j as f64),
        ));
    }
    out
}

fn figure_reproduction() -> Verdict {
    let small = [0.630, 0.617, 0.591, 0.587, 0.577, 0.575, 0.556, 0.552, 0.549, 0.543];
    let mid = [0.705, 0.701, 0.659, 0.648, 0.646, 0.645, 0.643, 0.640, 0.635, 0.625];
    let large = [0.746, 0.745, 0.732, 0.746, 0.715, 0.714, 0.72, 0.701, 0.694, 0.695];
    let in100_large = [0.929, 0.913, 0.907, 0.900, 0.891, 0.895, 0.860, 0.861, 0.843, 0.842];
    let vit = [0.746, 0.745, 0.732, 0.72, 0.715, 0.714, 0.705, 0.701, 0.7, 0.695];
    let conv = [0.759, 0.695, 0.692, 0.665, 0.659, 0.657, 0.652, 0.645, 0.632, 0.63];
    let params = |p: u64| {
        move |m: ModelMetadata| ModelMetadata {
            parameter_count: Some(p),
            ..m
        }
    };
    let family = |f: ArchitectureFamily| {
        move |m: ModelMetadata| ModelMetadata {
            architecture_family: Some(f),
            ..m
        }
    };
    let metric = vec!["avg_rob".to_string()];
    let mut checks = Vec::new();

    let mut in1000 = models_for(&small, "s", params(25_000_000));
    in1000.extend(models_for(&mid, "m", params(50_000_000)));
    in1000.extend(models_for(&large, "l", params(100_000_001)));
    let binning = bin_models(&in1000, &BinSpec::parameter_count()).unwrap();
    let sums = summarize(&in1000, &binning, &metric, 10).unwrap();
    for (s, want) in sums.iter().zip([0.578, 0.655, 0.720]) {
        checks.push((format!("IN1000 {}", s.bin), s.top_k_mean, want));
    }
    let in100 = models_for(&in100_large, "x", params(300_000_000));
    let binning = bin_models(&in100, &BinSpec::parameter_count()).unwrap();
    let sums = summarize(&in100, &binning, &metric, 10).unwrap();
    checks.push(("IN100 >100m".into(), sums[0].top_k_mean, 0.884));

    let mut arch = models_for(&vit, "v", family(ArchitectureFamily::Vit));
    arch.extend(models_for(&conv, "c", family(ArchitectureFamily::Convolution)));
    let binning = bin_models(&arch, &BinSpec::architecture_family()).unwrap();
    let sums = summarize(&arch, &binning, &metric, 10).unwrap();
    for want in [("vit", 0.717), ("convolution", 0.668)] {
        let s = sums.iter().find(|s| s.bin == want.0).expect("bin present");
        checks.push((format!("IN1000 {}", s.bin), s.top_k_mean, want.1));
    }
    let pass = checks.len() == 6 && checks.iter().all(|(_, got, want)| close(*got, *want, 0.001));
    let detail = checks
        .iter()
        .map(|(name, got, want)| format!("{name}={got:.4}/{want}"))
        .collect::<Vec<_>>()
        .join(" ");
    verdict(pass, detail)
}

fn marginal_consistency() -> Verdict {
    let rows = [
        ("VOLO-D5-224", vec![0.594, 0.725, 0.723], vec![0.814, 0.55, 0.652, 0.707]),
        ("VGG-16", vec![0.266, 0.402, 0.433], vec![0.66, 0.251, 0.363, 0.195]),
    ];
    let tol = DEFAULT_MARGINAL_TOLERANCE;
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, by_label, by_shift) in &rows {
        let v = marginal_consistency_check(by_label, by_shift, tol).unwrap();
        pass &= v.pass;
        detail.push(format!("{name} diff={:.5}", v.difference));
        let mut perturbed_failures = 0;
        let mut perturbations = 0;
        for side in 0..2 {
            let base = if side == 0 { by_label } else { by_shift };
            for i in 0..base.len() {
                for delta in [0.05, -0.05] {
                    let mut p = base.clone();
                    p[i] += delta;
                    let (a, b) = if side == 0 { (&p, by_shift) } else { (by_label, &p) };
                    perturbations += 1;
                    if !marginal_consistency_check(a, b, tol).unwrap().pass {
                        perturbed_failures += 1;
                    }
                }
            }
        }
        pass &= perturbed_failures == perturbations;
        detail.push(format!("{perturbed_failures}/{perturbations} perturbations rejected"));
    }
    verdict(pass, detail.join(" "))
}

fn ngram_oracle(tokens: &[String], terms: &HashMap<String, u32>, max_len: usize) -> Vec<(usize, usize, u32)> {
    let mut out = Vec::new();
    for start in 0..tokens.len() {
        for len in (1..=max_len.min(tokens.len() - start)).rev() {
            if let Some(&c) = terms.get(&tokens[start..start + len].join(" ")) {
                out.push((start, len, c));
            }
        }
    }
    out
}

fn matcher_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let vocab: Vec<String> = (0..400).map(|i| format!("w{i}")).collect();
    let mut taken = HashMap::new();
    let mut entries = Vec::new();
    for class in 0..100u32 {
        let mut terms = Vec::new();
        while terms.len() < 4 {
            let len = rng.random_range(1..=3);
            let t: Vec<&str> = (0..len).map(|_| vocab[rng.random_range(0..vocab.len())].as_str()).collect();
            let t = t.join(" ");
            if !taken.contains_key(&t) {
                taken.insert(t.clone(), class);
                terms.push(t);
            }
        }
        entries.push(ClassEntry::new(class, format!("class{class}"), terms));
    }
    let dict = TermDictionary::new("random100", entries).unwrap();
    let captions: Vec<String> = (0..10_000)
        .map(|_| {
            let n = rng.random_range(0..40);
            let words: Vec<&str> = (0..n).map(|_| vocab[rng.random_range(0..vocab.len())].as_str()).collect();
            let seps = [" ", ", ", " - ", "! ", "\t"];
            let mut s = String::new();
            for (i, w) in words.iter().enumerate() {
                if i > 0 {
                    s.push_str(seps[rng.random_range(0..seps.len())]);
                }
                if rng.random_bool(0.1) {
                    s.push_str(&w.to_uppercase());
                } else {
                    s.push_str(w);
                }
            }
            s
        })
        .collect();

    let strict = MatchStrategy::strict();
    let sc = MatchStrategy::single_class();
    let mc = MatchStrategy::multi_class(25).unwrap();
    let started = Instant::now();
    let (mut mismatches, mut containment_failures, mut spans) = (0usize, 0usize, 0usize);
    for caption in &captions {
        let tokens = tokenize(caption);
        let outcome = find_matches(&tokens, &dict);
        let got: Vec<(usize, usize, u32)> = outcome.spans.iter().map(|s| (s.start, s.len, s.class_id)).collect();
        spans += got.len();
        if got != ngram_oracle(&tokens, &taken, 3) {
            mismatches += 1;
        }
        let a = decide_label(&outcome, &strict).labels;
        let b = decide_label(&outcome, &sc).labels;
        let c = decide_label(&outcome, &mc).labels;
        if !(a.iter().all(|x| b.contains(x)) && b.iter().all(|x| c.contains(x))) {
            containment_failures += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        mismatches == 0 && containment_failures == 0 && secs < 10.0,
        format!("10000 captions, {spans} spans, {mismatches} oracle mismatches, {containment_failures} containment failures, {secs:.2}s (< 10 s)"),
    )
}

fn audit_identities() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut bad, mut bit_exact) = (0usize, 0usize);
    let n = 100_000;
    for _ in 0..n {
        let total: u64 = rng.random_range(1..1_000_000);
        let labeled = rng.random_range(0..=total);
        let correct = rng.random_range(0..=labeled);
        let r = AuditReport::from_counts(total, labeled, correct);
        // each stored fraction must be the correctly rounded quotient of the
        // counts; the f64 product of two of them carries one more rounding
        let product = r.label_accuracy * r.coverage;
        let exact_fields = r.utilization == correct as f64 / total as f64
            && r.coverage == labeled as f64 / total as f64
            && (labeled == 0 || r.label_accuracy == correct as f64 / labeled as f64);
        let ulp = f64::EPSILON * r.utilization.max(f64::MIN_POSITIVE);
        if product == r.utilization {
            bit_exact += 1;
        }
        if !(exact_fields && r.counts_consistent() && (product - r.utilization).abs() <= 2.0 * ulp) {
            bad += 1;
        }
    }
    let coverage = implied_coverage(0.89, 0.72).unwrap();
    let published = audit_identity_check(
        AuditFractions {
            label_accuracy: 0.89,
            coverage: 0.809,
            utilization: 0.72,
        },
        1e-3,
    );
    let pass = bad == 0 && close(coverage, 0.809, 0.0005) && published.consistent;
    verdict(
        pass,
        format!(
            "{n} fuzzed audits, {bad} failures ({bit_exact} bit-identical in f64, rest within 2 ulp); implied coverage {coverage:.4}, residual {:.5}",
            published.residual
        ),
    )
}

fn dense(values: Vec<f64>, id: usize) -> PredictionRecord {
    PredictionRecord {
        sample_id: id.to_string(),
        eval_set: "val".into(),
        checkpoint: None,
        scores: Scores::Dense(values),
    }
}

fn subset_monotonicity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let full = LabelSet::dense("full", 100);
    let mut ids: Vec<u32> = (0..100).collect();
    let (mut checked, mut violations, mut gains) = (0usize, 0usize, 0usize);
    for i in 0..10_000 {
        ids.shuffle(&mut rng);
        let size = rng.random_range(1..=100);
        let mut chosen = ids[..size].to_vec();
        chosen.sort_unstable();
        let sub = subset(&full, &chosen, "sub").unwrap();
        // coarse scores so ties occur
        let scores: Vec<f64> = (0..100).map(|_| (rng.random_range(0..20) as f64) / 20.0).collect();
        let gt = rng.random_range(0..100u32);
        if !sub.contains(gt) {
            continue;
        }
        checked += 1;
        let pred = dense(scores, i);
        let before = pred.scores.predicted_class(&full) == Some(gt);
        let remapped = remap_prediction(&pred, &full, &sub).unwrap();
        let after = remapped.scores.predicted_class(&sub) == Some(gt);
        if before && !after {
            violations += 1;
        }
        if after && !before {
            gains += 1;
        }
    }

    // class-balanced set over 128 classes, 8 samples each, 4 parts of 32
    let parent = LabelSet::dense("bal", 128);
    let samples: Vec<EvalSample> = (0..1024)
        .map(|i| EvalSample {
            sample_id: i.to_string(),
            gt: (i % 128) as u32,
        })
        .collect();
    let eval = EvalSet {
        id: "val".into(),
        labelset_id: "bal".into(),
        shift_kind: ShiftKind::Base,
        samples,
    };
    let preds: Vec<PredictionRecord> = (0..1024)
        .map(|i| {
            let mut v: Vec<f64> = (0..128).map(|_| rng.random_range(0.0..1.0)).collect();
            if rng.random_bool(0.6) {
                v[i % 128] += 0.5;
            }
            dense(v, i)
        })
        .collect();
    let parts = partition_into_k(&parent, 4, 9).unwrap().parts;
    let mut part_acc = Vec::new();
    let (mut pooled_correct, mut pooled_total) = (0u64, 0u64);
    let mut class_acc = Vec::new();
    for part in &parts {
        let r = score_predictions("m", &preds, &eval.restricted_to(part), &parent, part).unwrap();
        part_acc.push(r.accuracy);
        pooled_correct += r.correct;
        pooled_total += r.total;
        class_acc.extend(r.per_class_accuracy.values().copied());
    }
    let mean_parts = part_acc.iter().sum::<f64>() / part_acc.len() as f64;
    let pooled = pooled_correct as f64 / pooled_total as f64;
    let mean_classes = class_acc.iter().sum::<f64>() / class_acc.len() as f64;
    let identity = mean_parts == pooled && pooled == mean_classes && class_acc.len() == 128;
    verdict(
        violations == 0 && checked > 0 && identity,
        format!(
            "{checked} in-subset samples, {violations} lost, {gains} gained; partition mean {mean_parts} = pooled {pooled} = class mean {mean_classes}"
        ),
    )
}

fn confusion_identities() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut bad = 0usize;
    let runs = 300;
    for run in 0..runs {
        let n_classes = rng.random_range(2..40u32);
        let ls = LabelSet::dense("ls", n_classes);
        let n = rng.random_range(1..400);
        let samples: Vec<EvalSample> = (0..n)
            .map(|i| EvalSample {
                sample_id: format!("s{i}"),
                gt: rng.random_range(0..n_classes),
            })
            .collect();
        let preds: Vec<PredictionRecord> = (0..n)
            .map(|i| {
                let scores = match rng.random_range(0..3) {
                    0 => Scores::Argmax(rng.random_range(0..n_classes)),
                    1 => Scores::Dense((0..n_classes).map(|_| rng.random_range(0..5) as f64).collect()),
                    _ => {
                        let mut top: Vec<(u32, f64)> =
                            (0..3).map(|_| (rng.random_range(0..n_classes), rng.random_range(0.0..1.0))).collect();
                        top.sort_by(|a, b| b.1.total_cmp(&a.1));
                        top.dedup_by_key(|t| t.0);
                        Scores::TopK(top.into_iter().map(|(class, score)| capmatch::eval::ScoredClass { class, score }).collect())
                    }
                };
                PredictionRecord {
                    sample_id: format!("s{i}"),
                    eval_set: "e".into(),
                    checkpoint: None,
                    scores,
                }
            })
            .collect();
        let eval = EvalSet {
            id: "e".into(),
            labelset_id: "ls".into(),
            shift_kind: ShiftKind::Base,
            samples: samples.clone(),
        };
        // a third of the runs evaluate over a random subset
        let space = if run % 3 == 0 {
            let keep: Vec<u32> = (0..n_classes).filter(|c| c % 2 == 0).collect();
            subset(&ls, &keep, "half").unwrap()
        } else {
            ls.clone()
        };
        let eval = eval.restricted_to(&space);
        if eval.samples.is_empty() {
            continue;
        }
        let preds = if space.len() != ls.len() {
            preds.into_iter().filter(|p| !matches!(p.scores, Scores::Argmax(_))).collect::<Vec<_>>()
        } else {
            preds
        };
        let keep: std::collections::HashSet<&str> = preds.iter().map(|p| p.sample_id.as_str()).collect();
        let eval = EvalSet {
            samples: eval.samples.into_iter().filter(|s| keep.contains(s.sample_id.as_str())).collect(),
            ..eval
        };
        if eval.samples.is_empty() {
            continue;
        }
        let r = score_predictions("m", &preds, &eval, &ls, &space).unwrap();
        let mut counts = vec![0u64; space.len()];
        for s in &eval.samples {
            counts[space.position(s.gt).unwrap()] += 1;
        }
        let rows_ok = (0..space.len()).all(|i| r.row_sum(i) == counts[i]);
        let trace_ok = r.trace() == r.correct && r.trace() as f64 / r.total as f64 == r.accuracy;
        let total_ok = r.total == eval.samples.len() as u64;
        if !(rows_ok && trace_ok && total_ok) {
            bad += 1;
        }
    }
    verdict(bad == 0, format!("{runs} fuzzed evaluations, {bad} identity failures"))
}

fn throughput() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let nouns: Vec<String> = (0..1000).map(|i| format!("thing{i}")).collect();
    let mut classes = Vec::new();
    let mut used = 0;
    for c in 0..100u32 {
        let terms: Vec<String> = (0..5)
            .map(|j| {
                let t = if j < 3 {
                    nouns[used].clone()
                } else {
                    format!("{} {}", nouns[used], nouns[used + 1])
                };
                used += 2;
                t
            })
            .collect();
        classes.push(serde_json::json!({"id": c, "name": format!("c{c}"), "terms": terms}));
    }
    let dict = serde_json::json!({"labelset_id": "synthetic100", "classes": classes});
    let dict_path = d.join("dict.json");
    fs::write(&dict_path, dict.to_string()).unwrap();

    let filler = ["a", "photo", "of", "the", "my", "new", "with", "at", "in", "beautiful", "day", "2008"];
    let manifest = d.join("manifest.jsonl");
    let mut w = std::io::BufWriter::new(fs::File::create(&manifest).unwrap());
    for i in 0..1_000_000u32 {
        let mut title = String::new();
        for k in 0..rng.random_range(3..10) {
            if k > 0 {
                title.push(' ');
            }
            if rng.random_bool(0.25) {
                title.push_str(&nouns[rng.random_range(0..nouns.len())]);
            } else {
                title.push_str(filler[rng.random_range(0..filler.len())]);
            }
        }
        let tag = &nouns[rng.random_range(0..nouns.len())];
        writeln!(
            w,
            "{{\"sample_id\":{i},\"title\":\"{title}\",\"tags\":[\"{tag}\",\"nikon\"],\"gt_label\":{}}}",
            rng.random_range(0..100)
        )
        .unwrap();
    }
    w.flush().unwrap();
    drop(w);

    let mut times = Vec::new();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let config = RunConfig {
            command: Some("label".into()),
            manifest: Some(manifest.clone()),
            dictionary: Some(dict_path.clone()),
            output: Some(d.join(run)),
            ..Default::default()
        };
        let started = Instant::now();
        let outcome = execute(config);
        times.push(started.elapsed().as_secs_f64());
        if outcome.exit != Exit::Success {
            return verdict(false, format!("label run failed: {:?}", outcome.log.errors));
        }
        let files = ["labels.jsonl", "audit.json", "audit.txt", "histogram.json", "histogram.csv"];
        outputs.push(files.map(|f| fs::read(d.join(run).join(f)).unwrap()));
    }
    let identical = outputs[0] == outputs[1];
    let lines = outputs[0][0].iter().filter(|&&b| b == b'\n').count();
    let threads = rayon::current_num_threads();
    let profile = if cfg!(debug_assertions) { "debug assertions on" } else { "release" };
    verdict(
        identical && lines == 1_000_000 && times.iter().all(|&t| t < 60.0),
        format!(
            "1000000 records, {lines} lines, runs {:.1}s / {:.1}s (< 60 s, {threads} threads, {profile}), byte-identical: {identical}",
            times[0], times[1]
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 8] = [
        ("1 metric goldens", metric_goldens),
        ("2 figure-data reproduction", figure_reproduction),
        ("3 marginal consistency", marginal_consistency),
        ("4 matcher oracle equivalence", matcher_oracle),
        ("5 audit identities", audit_identities),
        ("6 subset monotonicity", subset_monotonicity),
        ("7 confusion identities", confusion_identities),
        ("8 throughput", throughput),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let v = check();
        println!("{} criterion {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
