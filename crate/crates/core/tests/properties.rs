use proptest::prelude::*;

use rellda::corpus::{parse_corpus, write_corpus, FeatureKind, FeatureSet};
use rellda::gibbs::{GibbsConfig, GibbsSampler};
use rellda::hyperopt::{alpha_fisher, eta_fisher, HyperOptConfig};
use rellda::numerics::{categorical_sample, digamma, log_gamma, root_rng, trigamma};
use rellda::ssvi::{train, LearningSchedule, SsviConfig};
use rellda::synth::{generate, PlantedType, SynthConfig};

fn raw_corpus() -> impl Strategy<Value = String> {
    let kinds = [
        "vb",
        "pp",
        "nn",
        "ent_left",
        "ent_right",
        "ent_type",
        "pos_seq",
    ];
    let value = prop::sample::select(vec!["a", "b", "c", "said", "Acme", "PER-ORG", "in"]);
    let sentence = prop::collection::btree_map(
        prop::sample::select(kinds.to_vec()),
        prop::collection::vec(value, 1..4),
        1..4,
    );
    let doc = prop::collection::vec(sentence, 1..4);
    prop::collection::vec(doc, 1..5).prop_map(|docs| {
        docs.into_iter()
            .enumerate()
            .map(|(d, sentences)| {
                let sentences: Vec<_> = sentences
                    .into_iter()
                    .map(|features| serde_json::json!({ "features": features }))
                    .collect();
                format!(
                    "{}\n",
                    serde_json::json!({ "id": format!("d{d}"), "sentences": sentences })
                )
            })
            .collect()
    })
}

fn canonical(text: &str) -> (String, rellda::corpus::Corpus) {
    let corpus = parse_corpus(text.as_bytes(), &FeatureSet::all()).unwrap();
    let mut out = Vec::new();
    write_corpus(&corpus, &mut out).unwrap();
    (String::from_utf8(out).unwrap(), corpus)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn canonical_form_is_a_fixed_point(text in raw_corpus()) {
        let (once, corpus) = canonical(&text);
        let (twice, _) = canonical(&once);
        prop_assert_eq!(&once, &twice);
        for f in 0..corpus.num_types() {
            for id in 0..corpus.vocab.size(f) as u32 {
                let s = corpus.vocab.decode(f, id).unwrap();
                prop_assert_eq!(corpus.vocab.id(f, s), Some(id));
            }
        }
    }

    #[test]
    fn digamma_is_the_derivative_of_log_gamma(x in 0.05f64..100.0) {
        let h = 1e-5;
        let fd = (log_gamma(x + h).unwrap() - log_gamma(x - h).unwrap()) / (2.0 * h);
        let psi = digamma(x).unwrap();
        prop_assert!((fd - psi).abs() <= 1e-6 * psi.abs().max(1.0), "x={x}: {fd} vs {psi}");
    }

    #[test]
    fn trigamma_is_positive_and_decreasing(x in 1e-3f64..1e3, dx in 1e-3f64..10.0) {
        let a = trigamma(x).unwrap();
        prop_assert!(a > 0.0);
        prop_assert!(trigamma(x + dx).unwrap() < a);
    }

    #[test]
    fn learning_rate_is_a_decreasing_probability(a in 1e-4f64..5.0, b in 0.0f64..100.0, c in 0.5f64..1.0, t in 0usize..10_000) {
        let s = LearningSchedule::new(a, b, c).unwrap();
        let (r0, r1) = (s.rate(t), s.rate(t + 1));
        prop_assert!(r0 > 0.0 && r0 < 1.0);
        prop_assert!(r1 <= r0);
    }

    #[test]
    fn gibbs_counts_match_a_rebuild_after_every_sweep(seed in 0u64..1000, relations in 1usize..5) {
        let planted = generate(&SynthConfig {
            relations: 3,
            documents: 12,
            min_sentences: 1,
            max_sentences: 4,
            types: vec![
                PlantedType { kind: FeatureKind::Vb, vocab_size: 5, tokens: 3 },
                PlantedType { kind: FeatureKind::Pp, vocab_size: 2, tokens: 1 },
            ],
            seed,
            ..Default::default()
        }).unwrap();
        let cfg = GibbsConfig { relations, eta: 0.2, alpha: 0.5, sweeps: 0, seed };
        let mut sampler = GibbsSampler::new(&planted.train, &cfg).unwrap();
        sampler.state().verify_counts(&planted.train).unwrap();
        for _ in 0..5 {
            sampler.sweep().unwrap();
            sampler.state().verify_counts(&planted.train).unwrap();
        }
    }

    #[test]
    fn scaled_representation_stays_valid(seed in 0u64..1000, s in 1usize..8, c in 0.5f64..1.0) {
        let planted = generate(&SynthConfig {
            documents: 15,
            min_sentences: 1,
            max_sentences: 3,
            seed,
            ..Default::default()
        }).unwrap();
        let cfg = SsviConfig {
            relations: 3,
            minibatch_size: s,
            sweeps: 2,
            burnin: 1,
            iterations: 30,
            schedule: LearningSchedule::new(0.9, 1.0, c).unwrap(),
            seed,
            elbo_every: 0,
            workers: Some(1),
            ..Default::default()
        };
        let model = train(&planted.train, &cfg, None).unwrap().model;
        prop_assert!(model.pi() > 0.0 && model.pi() <= 1.0);
        prop_assert!(model.row_total_drift() <= 1e-8);
        for r in 0..3 {
            for f in 0..model.num_types() {
                for v in 0..model.vocab_sizes()[f] {
                    prop_assert!(model.lambda(r, f, v) >= model.eta()[f]);
                }
            }
        }
    }
}

#[test]
fn fisher_information_is_positive_on_the_grid() {
    let values = [0.01, 0.1, 1.0, 10.0];
    let sizes = [2usize, 5, 50];
    for &x in &values {
        for &r in &sizes {
            for &w in &sizes {
                assert!(eta_fisher(r, w, x) > 0.0, "eta_fisher(R={r}, W={w}, η={x})");
            }
            assert!(alpha_fisher(x, r, 10) > 0.0, "alpha_fisher(α={x}, R={r})");
        }
    }
}

#[test]
fn sampler_frequencies_pass_chi_square() {
    let mut rng = root_rng(3);
    let weights = [1.0, 2.0, 3.0, 4.0];
    let n = 100_000;
    let mut counts = [0u64; 4];
    for _ in 0..n {
        counts[categorical_sample(&mut rng, &weights).unwrap()] += 1;
    }
    let chi2: f64 = counts
        .iter()
        .zip(weights)
        .map(|(&c, w)| {
            let expected = n as f64 * w / 10.0;
            (c as f64 - expected).powi(2) / expected
        })
        .sum();
    // 99.9% quantile of χ² with 3 degrees of freedom
    assert!(chi2 < 16.27, "χ² = {chi2}");
}

#[test]
fn fair_coin_frequency_within_binomial_band() {
    let mut rng = root_rng(4);
    let n = 1_000_000;
    let zeros = (0..n)
        .filter(|_| categorical_sample(&mut rng, &[1.0, 1.0]).unwrap() == 0)
        .count();
    let freq = zeros as f64 / n as f64;
    assert!((freq - 0.5).abs() <= 0.002, "{freq}");
}

#[test]
fn ingest_ids_are_independent_of_feature_key_order() {
    let a = "{\"id\":\"x\",\"sentences\":[{\"features\":{\"vb\":[\"said\"],\"pp\":[\"in\"]}}]}\n";
    let b = "{\"id\":\"x\",\"sentences\":[{\"features\":{\"pp\":[\"in\"],\"vb\":[\"said\"]}}]}\n";
    assert_eq!(canonical(a).0, canonical(b).0);
}

#[test]
fn hyperparameters_never_fall_below_the_floor() {
    let planted = generate(&SynthConfig {
        documents: 40,
        seed: 2,
        ..Default::default()
    })
    .unwrap();
    let hyper = HyperOptConfig::default();
    let cfg = SsviConfig {
        relations: 8,
        minibatch_size: 10,
        sweeps: 3,
        burnin: 1,
        iterations: 200,
        // aggressive steps so the clamp actually engages
        schedule: LearningSchedule::new(5.0, 1.0, 0.51).unwrap(),
        seed: 2,
        eta: 1e-3,
        alpha: 1e-3,
        hyper,
        elbo_every: 0,
        ..Default::default()
    };
    let metrics = train(&planted.train, &cfg, None).unwrap().metrics;
    for row in &metrics.rows {
        assert!(
            row.alpha >= hyper.floor,
            "iteration {}: α = {}",
            row.iteration,
            row.alpha
        );
        assert!(
            row.eta.iter().all(|&e| e >= hyper.floor),
            "iteration {}: η = {:?}",
            row.iteration,
            row.eta
        );
    }
}
