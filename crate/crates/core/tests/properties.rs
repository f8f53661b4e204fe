use proptest::prelude::*;
use rebut_core::critics::{critique_entities, critique_numbers, critique_topic, DEFAULT_TOPIC_THRESHOLD};
use rebut_core::datagen::{make_entity_replacements, make_number_replacements, InstanceLabel};
use rebut_core::eval::{factscore_from_counts, overall, scale_rating};
use rebut_core::extract::{extract_entities, extract_numbers, normalize_number, slice_chars};
use rebut_core::feedback::{parse_flags, render_flags, Flag};
use rebut_core::ingest::{split, split_sizes};
use rebut_core::model::{ElementKind, FactCheckArticle, Provenance, VeracityLabel};

const WORDS: &[&str] = &[
    "the", "vaccine", "report", "said", "about", "in", "cases", "of", "and", "with", "people", "Ministry",
    "Health", "London", "Pfizer", "Ontario", "were", "recorded", "percent", "by", "June", "hospital",
];

fn with_commas(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn token() -> impl Strategy<Value = String> {
    prop_oneof![
        4 => prop::sample::select(WORDS).prop_map(str::to_string),
        1 => (0u64..5_000_000).prop_map(with_commas),
        1 => (0u64..100, 0u64..100).prop_map(|(a, b)| format!("{a}.{b}")),
        1 => (1u64..100).prop_map(|n| format!("{n}%")),
        1 => prop::sample::select(&["twelve", "forty-two", "three hundred", "é", "…", "..."][..]).prop_map(str::to_string),
    ]
}

fn text() -> impl Strategy<Value = String> {
    prop::collection::vec(token(), 1..30).prop_map(|t| t.join(" ") + ".")
}

fn article(evidence: String, explanation: String) -> FactCheckArticle {
    FactCheckArticle::new(
        "p",
        "Vaccine cases in Ontario.",
        evidence,
        Some(explanation),
        VeracityLabel::False,
        Provenance::default(),
    )
    .unwrap()
}

proptest! {
    #[test]
    fn number_spans_are_faithful_sorted_and_disjoint(t in text()) {
        let spans = extract_numbers(&t);
        for s in &spans {
            prop_assert_eq!(slice_chars(&t, s.start(), s.end()), Some(s.surface()));
            prop_assert_eq!(&t[s.byte_range()], s.surface());
        }
        for w in spans.windows(2) {
            prop_assert!(w[0].end() <= w[1].start());
        }
    }

    #[test]
    fn entity_spans_are_faithful_sorted_and_disjoint(t in text()) {
        let spans = extract_entities(&t, None).unwrap();
        for s in &spans {
            prop_assert_eq!(slice_chars(&t, s.start(), s.end()), Some(s.surface()));
        }
        for w in spans.windows(2) {
            prop_assert!(w[0].end() <= w[1].start());
        }
    }

    #[test]
    fn separators_do_not_change_value(n in 0u64..10_000_000_000) {
        let plain = normalize_number(&n.to_string()).unwrap();
        prop_assert_eq!(normalize_number(&with_commas(n)).unwrap(), plain);
    }

    #[test]
    fn word_and_digit_forms_agree(u in 1usize..10, scaled in any::<bool>()) {
        const UNITS: [&str; 10] = ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine"];
        let (words, digits) = if scaled {
            (format!("{} thousand", UNITS[u]), with_commas(u as u64 * 1000))
        } else {
            (UNITS[u].to_string(), u.to_string())
        };
        prop_assert_eq!(normalize_number(&words).unwrap(), normalize_number(&digits).unwrap());
    }

    #[test]
    fn replacements_are_single_invertible_edits(evidence in text(), explanation in text()) {
        let a = article(evidence, explanation.clone());
        let mut all = make_number_replacements(&a, usize::MAX).unwrap();
        all.extend(make_entity_replacements(&a, usize::MAX, None).unwrap());
        for inst in &all {
            prop_assert_eq!(inst.label, InstanceLabel::Counterfactual);
            let r = inst.replacement.as_ref().unwrap();
            prop_assert_ne!(&r.original, &r.substitute);
            prop_assert_eq!(slice_chars(&inst.explanation_variant, r.start, r.end), Some(r.substitute.as_str()));
            prop_assert_eq!(inst.restore_original(), explanation.clone());
            let prefix: String = explanation.chars().take(r.start).collect();
            prop_assert!(inst.explanation_variant.starts_with(&prefix));
        }
    }

    #[test]
    fn replacement_cap_is_a_prefix(evidence in text(), explanation in text(), cap in 0usize..8) {
        let a = article(evidence, explanation);
        let full = make_number_replacements(&a, usize::MAX).unwrap();
        let capped = make_number_replacements(&a, cap).unwrap();
        prop_assert_eq!(capped.len(), full.len().min(cap));
        prop_assert_eq!(&full[..capped.len()], &capped[..]);
    }

    #[test]
    fn critique_text_round_trips(
        flags in prop::collection::vec(("[A-Za-z0-9][A-Za-z0-9 ,.%]{0,12}[A-Za-z0-9]", prop::option::of("[A-Za-z0-9][A-Za-z0-9 ,%]{0,12}[A-Za-z0-9]")), 1..5),
        entity in any::<bool>(),
    ) {
        let kind = if entity { ElementKind::Entity } else { ElementKind::Number };
        let flags: Vec<Flag> = flags.into_iter().map(|(surface, correction)| Flag { surface, correction }).collect();
        prop_assume!(flags.iter().all(|f| !f.surface.contains("; ") && !f.correction.as_deref().unwrap_or("").contains("; ")));
        prop_assert_eq!(parse_flags(kind, &render_flags(kind, &flags)), flags);
    }

    #[test]
    fn split_is_a_partition(n in 0usize..200, seed in any::<u64>(), r in 0.0f64..0.3) {
        let articles: Vec<FactCheckArticle> = (0..n)
            .map(|i| FactCheckArticle::new(i.to_string(), "c", "e", None, VeracityLabel::True, Provenance::default()).unwrap())
            .collect();
        let ratios = (1.0 - 2.0 * r, r, r);
        let (a, b, c) = split_sizes(n, ratios).unwrap();
        prop_assert_eq!(a + b + c, n);
        let s = split(&articles, ratios, seed).unwrap();
        prop_assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (a, b, c));
        let mut ids: Vec<usize> = s.train.iter().chain(&s.dev).chain(&s.test).map(|x| x.id().parse().unwrap()).collect();
        ids.sort_unstable();
        prop_assert_eq!(ids, (0..n).collect::<Vec<_>>());
        let again = split(&articles, ratios, seed).unwrap();
        prop_assert_eq!(again.test, s.test);
    }

    #[test]
    fn scores_stay_in_range(rating in 0u8..=9, supported in 0usize..60, total in 0usize..60, gamma in 0.0f64..20.0) {
        prop_assert!((0.0..=1.0).contains(&scale_rating(rating)));
        let f = factscore_from_counts(supported, total, gamma);
        prop_assert!((0.0..=1.0).contains(&f));
    }

    #[test]
    fn factscore_monotone(total in 1usize..60, supported in 0usize..60, gamma in 0.0f64..20.0) {
        let s = supported.min(total);
        let here = factscore_from_counts(s, total, gamma);
        if s < total {
            prop_assert!(factscore_from_counts(s + 1, total, gamma) >= here);
        }
        // Same precision, more facts: the length penalty can only relax.
        prop_assert!(factscore_from_counts(2 * s, 2 * total, gamma) >= here - 1e-12);
    }

    #[test]
    fn overall_ignores_order(mut v in prop::array::uniform5(0.0f64..=1.0), k in 0usize..5) {
        let base = overall(v.map(Some)).unwrap();
        v.rotate_left(k);
        v.swap(0, 4);
        prop_assert!((overall(v.map(Some)).unwrap() - base).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn copying_the_evidence_is_never_flagged(evidence in text()) {
        prop_assert!(critique_numbers("c", &evidence, &evidence).positive);
        prop_assert!(critique_entities("c", &evidence, &evidence).positive);
    }

    #[test]
    fn number_critique_ignores_separators(n in 1000u64..100_000_000, subject in prop::sample::select(WORDS)) {
        let evidence = format!("Officials recorded {} {subject} cases last year.", with_commas(n));
        let response = format!("Officials recorded {n} {subject} cases last year.");
        prop_assert!(critique_numbers("c", &evidence, &response).positive);
        let wrong = format!("Officials recorded {} {subject} cases last year.", with_commas(n + 1));
        prop_assert!(!critique_numbers("c", &evidence, &wrong).positive);
    }

    #[test]
    fn restating_the_claim_is_on_topic(t in text()) {
        let c = critique_topic(&t, "", &t, DEFAULT_TOPIC_THRESHOLD);
        let has_terms = !rebut_core::extract::content_terms(&t).is_empty();
        prop_assert_eq!(c.positive, has_terms);
    }
}
