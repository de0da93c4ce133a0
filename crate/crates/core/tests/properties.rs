use std::collections::HashMap;

use proptest::prelude::*;

use capmatch::aggregate::{bin_models, top_k_average, Bin, BinSpec, ModelMetadata};
use capmatch::eval::{average_robustness, effective_robustness_ratio};
use capmatch::io::process_lines_ordered;
use capmatch::labeling::{
    decide_label, find_matches, tokenize, ClassEntry, ExclusionMode, Labeler, MatchStrategy, TermDictionary,
};

const VOCAB: &[&str] = &["red", "fox", "dog", "cat", "big", "hot", "sea", "lion", "a", "the"];

fn word() -> impl Strategy<Value = String> {
    prop::sample::select(VOCAB).prop_map(str::to_string)
}

/// Up to six classes, each with one or two phrases of one to three words;
/// phrases shared between classes are dropped.
fn dictionary() -> impl Strategy<Value = TermDictionary> {
    prop::collection::vec(prop::collection::vec(prop::collection::vec(word(), 1..=3), 1..=2), 1..=6).prop_filter_map(
        "needs a term",
        |classes| {
            let mut owner: HashMap<String, usize> = HashMap::new();
            let mut entries = Vec::new();
            for (i, phrases) in classes.iter().enumerate() {
                let mut terms = Vec::new();
                for p in phrases {
                    let t = p.join(" ");
                    if *owner.entry(t.clone()).or_insert(i) == i {
                        terms.push(t);
                    }
                }
                if !terms.is_empty() {
                    entries.push(ClassEntry::new(i as u32, format!("c{i}"), terms));
                }
            }
            TermDictionary::new("p", entries).ok()
        },
    )
}

fn caption() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(word(), 0..25)
}

/// Every (start, len) window whose joined text is a term, by start then
/// longest first.
fn ngram_oracle(tokens: &[String], dict: &TermDictionary) -> Vec<(usize, usize, u32)> {
    let terms: HashMap<&str, u32> = dict.terms().iter().map(|t| (t.text.as_str(), t.class_id)).collect();
    let mut out = Vec::new();
    for start in 0..tokens.len() {
        for len in (1..=dict.max_term_len().min(tokens.len() - start)).rev() {
            if let Some(&c) = terms.get(tokens[start..start + len].join(" ").as_str()) {
                out.push((start, len, c));
            }
        }
    }
    out
}

proptest! {
    #[test]
    fn matcher_agrees_with_ngram_oracle(dict in dictionary(), words in caption()) {
        let tokens = tokenize(&words.join(" "));
        let got: Vec<(usize, usize, u32)> =
            find_matches(&tokens, &dict).spans.iter().map(|s| (s.start, s.len, s.class_id)).collect();
        prop_assert_eq!(got, ngram_oracle(&tokens, &dict));
    }

    #[test]
    fn matches_sit_on_token_boundaries(dict in dictionary(), words in caption()) {
        // a character-level substring search padded with spaces finds
        // exactly the token-aligned occurrences
        let text = words.join(" ");
        let padded = format!(" {text} ");
        let outcome = find_matches(&tokenize(&text), &dict);
        for term in dict.terms() {
            let needle = format!(" {} ", term.text);
            let char_hits = padded.match_indices(&needle).count()
                + overlapping_extra(&padded, &needle);
            let token_hits = outcome.spans.iter().filter(|s| s.term(&dict) == term.text).count();
            prop_assert_eq!(char_hits, token_hits, "term {:?} in {:?}", term.text, text);
        }
    }

    #[test]
    fn strategies_are_nested(dict in dictionary(), words in caption()) {
        let outcome = find_matches(&tokenize(&words.join(" ")), &dict);
        let strict = decide_label(&outcome, &MatchStrategy::strict()).labels;
        let sc = decide_label(&outcome, &MatchStrategy::single_class()).labels;
        let mc = decide_label(&outcome, &MatchStrategy::multi_class(25).unwrap()).labels;
        prop_assert!(strict.iter().all(|c| sc.contains(c)));
        prop_assert!(sc.iter().all(|c| mc.contains(c)));
        prop_assert!(mc.iter().all(|c| outcome.distinct_classes.contains(c)));
        prop_assert_eq!(sc.is_empty(), outcome.is_empty());
        prop_assert!(mc.len() <= 25);
    }

    #[test]
    fn exclusions_only_remove_classes(dict in dictionary(), words in caption(), excl in word(), victim in 0u32..6) {
        let entries: Vec<ClassEntry> = dict
            .entries()
            .iter()
            .cloned()
            .map(|e| if e.class_id == victim { e.with_excludes([excl.clone()]) } else { e })
            .collect();
        let with = TermDictionary::new("p", entries).unwrap();
        let tokens = tokenize(&words.join(" "));
        let mc = MatchStrategy::multi_class(100).unwrap();
        let plain = Labeler::new(&dict, mc).with_exclusion(ExclusionMode::None).label_tokens(&tokens);
        let excluded = Labeler::new(&with, mc).with_exclusion(ExclusionMode::PerClass).label_tokens(&tokens);
        prop_assert!(excluded.decision.labels.iter().all(|c| plain.decision.labels.contains(c)));
        if tokens.contains(&excl) {
            prop_assert!(!excluded.decision.labels.contains(&victim));
        } else {
            prop_assert_eq!(&excluded.decision.labels, &plain.decision.labels);
        }
    }

    #[test]
    fn parallel_map_keeps_input_order(lines in prop::collection::vec("[a-z ]{0,12}", 0..200), batch in 1usize..40) {
        let text = lines.join("\n");
        let mut got = Vec::new();
        process_lines_ordered(text.as_bytes(), batch, |n, l| (n, l.to_uppercase()), |v| {
            got.push(v);
            Ok(())
        })
        .unwrap();
        let want: Vec<(usize, String)> = lines
            .iter()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| (i + 1, l.to_uppercase()))
            .collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn average_robustness_is_symmetric_and_bounded(mut v in prop::collection::vec(0.0f64..=1.0, 1..12), seed in any::<u64>()) {
        let a = average_robustness(&v).unwrap();
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo - 1e-12 <= a && a <= hi + 1e-12);
        let n = v.len();
        v.rotate_left((seed as usize) % n);
        v.reverse();
        prop_assert!((average_robustness(&v).unwrap() - a).abs() < 1e-12);
    }

    #[test]
    fn err_is_scale_invariant(avg in 0.0f64..1.0, base in 0.01f64..1.0, c in 0.01f64..1.0) {
        let a = effective_robustness_ratio(avg, base).unwrap();
        let b = effective_robustness_ratio(avg * c, base * c).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn top_k_monotone_and_extremes(values in prop::collection::vec(0.0f64..1.0, 1..30), k in 1usize..15, bump in 0usize..30, delta in 0.0f64..0.5) {
        let models: Vec<ModelMetadata> =
            values.iter().enumerate().map(|(i, &v)| ModelMetadata::new(format!("m{i:02}")).with_metric("x", v)).collect();
        let bin = Bin { label: "all".into(), members: (0..models.len()).collect() };
        let mean = top_k_average(&models, &bin, "x", k).unwrap().top_k_mean;
        let mut raised = models.clone();
        let i = bump % models.len();
        *raised[i].metrics.get_mut("x").unwrap() += delta;
        prop_assert!(top_k_average(&raised, &bin, "x", k).unwrap().top_k_mean >= mean - 1e-12);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(top_k_average(&models, &bin, "x", 1).unwrap().top_k_mean, max);
        let all = top_k_average(&models, &bin, "x", values.len() + k).unwrap().top_k_mean;
        let plain = values.iter().sum::<f64>() / values.len() as f64;
        prop_assert!((all - plain).abs() < 1e-12);
    }

    #[test]
    fn numeric_binning_is_a_partition(params in prop::collection::vec(prop::option::of(0u64..300_000_000), 0..60)) {
        let models: Vec<ModelMetadata> = params
            .iter()
            .enumerate()
            .map(|(i, &p)| ModelMetadata { parameter_count: p, ..ModelMetadata::new(format!("m{i}")) })
            .collect();
        let binning = bin_models(&models, &BinSpec::parameter_count()).unwrap();
        let mut seen = vec![0usize; models.len()];
        for (b, bin) in binning.bins.iter().enumerate() {
            for &m in &bin.members {
                seen[m] += 1;
                let p = models[m].parameter_count.unwrap() as f64;
                let ok = match b {
                    0 => p < 50e6,
                    1 => (50e6..100e6).contains(&p),
                    _ => p >= 100e6,
                };
                prop_assert!(ok, "model {} with {} params in bin {}", m, p, b);
            }
        }
        for (i, m) in models.iter().enumerate() {
            prop_assert_eq!(seen[i], usize::from(m.parameter_count.is_some()));
        }
        prop_assert_eq!(binning.excluded.len(), params.iter().filter(|p| p.is_none()).count());
    }
}

/// `match_indices` skips overlapping hits (" a a " holds " a " twice); count
/// the ones it misses.
fn overlapping_extra(hay: &str, needle: &str) -> usize {
    let total = (0..hay.len()).filter(|&i| hay[i..].starts_with(needle)).count();
    total - hay.match_indices(needle).count()
}

#[test]
fn ascii_tokenization_matches_split_oracle() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let alphabet: Vec<char> = "abcXYZ019 -_.,!?'\"/\t".chars().collect();
    for _ in 0..1000 {
        let len = rng.random_range(0..60);
        let text: String = (0..len).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect();
        let want: Vec<String> = text
            .split(|c: char| !c.is_ascii_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_ascii_lowercase)
            .collect();
        assert_eq!(tokenize(&text), want, "{text:?}");
    }
}

#[test]
fn unicode_normalization_is_applied() {
    // decomposed e + combining acute folds to the composed form
    assert_eq!(tokenize("Cafe\u{301} OWL"), tokenize("caf\u{e9} owl"));
    assert_eq!(tokenize("caf\u{e9}-owl"), vec!["caf\u{e9}", "owl"]);
}
