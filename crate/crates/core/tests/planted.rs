//! Stochastic checks against planted synthetic corpora.

use std::collections::HashMap;

use rand::seq::index;

use rellda::evaluation::{
    perplexity, rank_sentences, sentence_proportions, PerplexityConfig, PointEstimate, ReportConfig,
};
use rellda::hyperopt::alpha_gradient;
use rellda::model_file::{ModelFile, Trainer};
use rellda::numerics::{child_rng, root_rng};
use rellda::ssvi::{
    run_local_chain, train, ChainContext, LearningSchedule, SsviConfig, VariationalModel,
};
use rellda::synth::{generate, Planted, SynthConfig};

fn planted(seed: u64) -> Planted {
    generate(&SynthConfig {
        documents: 500,
        eval_documents: 100,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn config(seed: u64) -> SsviConfig {
    SsviConfig {
        relations: 5,
        minibatch_size: 50,
        sweeps: 10,
        burnin: 5,
        iterations: 200,
        schedule: LearningSchedule::new(1.0, 10.0, 0.6).unwrap(),
        seed,
        eta: 0.1,
        alpha: 0.3,
        elbo_every: 0,
        ..Default::default()
    }
}

#[test]
fn true_beta_is_no_worse_than_the_trained_estimate() {
    let protocol = PerplexityConfig::default();
    let mut ok = 0;
    let mut summary = Vec::new();
    for seed in 0..10 {
        let p = planted(200 + seed);
        let trained = train(&p.train, &config(seed), None).unwrap().model;
        let fitted = perplexity(
            &PointEstimate::from_variational(&trained),
            &p.eval,
            &protocol,
        )
        .unwrap()
        .perplexity;
        let truth = perplexity(&p.point_estimate(), &p.eval, &protocol)
            .unwrap()
            .perplexity;
        if truth <= fitted * 1.02 {
            ok += 1;
        }
        summary.push((truth, fitted));
    }
    assert!(ok >= 9, "{ok}/10 seeds: {summary:?}");
}

#[test]
fn elbo_proxy_trends_upward() {
    let p = planted(42);
    let cfg = SsviConfig {
        elbo_every: 1,
        ..config(42)
    };
    let metrics = train(&p.train, &cfg, None).unwrap().metrics;
    let elbo: Vec<f64> = metrics.rows.iter().filter_map(|r| r.elbo_proxy).collect();
    assert_eq!(elbo.len(), 200);
    let median = |xs: &[f64]| {
        let mut v = xs.to_vec();
        v.sort_by(f64::total_cmp);
        (v[4] + v[5]) / 2.0
    };
    let (early, late) = (median(&elbo[..10]), median(&elbo[190..]));
    assert!(late > early, "early {early}, late {late}");
}

#[test]
fn identical_seeds_give_identical_model_files() {
    let p = generate(&SynthConfig {
        documents: 80,
        seed: 6,
        ..Default::default()
    })
    .unwrap();
    let cfg = SsviConfig {
        iterations: 30,
        minibatch_size: 16,
        workers: Some(1),
        ..config(6)
    };
    let json = || {
        let model = train(&p.train, &cfg, None).unwrap().model;
        let echo = serde_json::to_value(&cfg).unwrap();
        ModelFile::new(
            &model,
            &p.train.vocab,
            Trainer::Ssvi,
            echo,
            PerplexityConfig::default(),
        )
        .to_json()
    };
    assert_eq!(json(), json());
}

#[test]
fn top_ranked_sentences_belong_to_their_relation() {
    let p = planted(3);
    let report = rank_sentences(
        &p.point_estimate(),
        &p.train,
        &ReportConfig {
            top_k: 10,
            ..Default::default()
        },
    )
    .unwrap();
    let doc_index: HashMap<&str, usize> = p
        .train
        .documents
        .iter()
        .enumerate()
        .map(|(d, doc)| (doc.id.as_str(), d))
        .collect();
    let mut good = 0;
    for cluster in &report.relations {
        assert!(cluster.sentences.len() <= 10);
        let hits = cluster
            .sentences
            .iter()
            .filter(|s| p.labels[doc_index[s.document.as_str()]][s.sentence] == cluster.relation)
            .count();
        if 2 * hits > cluster.sentences.len() {
            good += 1;
        }
    }
    assert!(good >= 4, "{good}/5 relations");
}

#[test]
fn proportions_ignore_document_order() {
    let p = generate(&SynthConfig {
        documents: 40,
        seed: 12,
        ..Default::default()
    })
    .unwrap();
    let est = p.point_estimate();
    let forward = sentence_proportions(&est, &p.train, 5, 20, 9).unwrap();
    let mut reversed = p.train.clone();
    reversed.documents.reverse();
    let backward = sentence_proportions(&est, &reversed, 5, 20, 9).unwrap();
    let n = forward.len();
    for d in 0..n {
        assert_eq!(forward[d], backward[n - 1 - d]);
    }
    let cfg = ReportConfig::default();
    assert_eq!(
        rank_sentences(&est, &p.train, &cfg).unwrap(),
        rank_sentences(&est, &reversed, &cfg).unwrap()
    );
}

#[test]
fn perplexity_ignores_relation_labels() {
    let p = generate(&SynthConfig {
        documents: 50,
        eval_documents: 60,
        seed: 13,
        ..Default::default()
    })
    .unwrap();
    let est = p.point_estimate();
    let protocol = PerplexityConfig::default();
    let base = perplexity(&est, &p.eval, &protocol).unwrap();
    for perm in [[4, 3, 2, 1, 0], [1, 2, 3, 4, 0], [0, 2, 1, 4, 3]] {
        let other = perplexity(&est.permuted(&perm), &p.eval, &protocol).unwrap();
        assert_eq!(other.tokens, base.tokens);
        let rel = (other.perplexity - base.perplexity).abs() / base.perplexity;
        assert!(
            rel < 0.01,
            "{perm:?}: {} vs {}",
            other.perplexity,
            base.perplexity
        );
    }
}

#[test]
fn alpha_gradient_is_negative_for_concentrated_documents() {
    let mut negative = 0;
    let mut grads = Vec::new();
    for seed in 0..10u64 {
        let p = generate(&SynthConfig {
            documents: 100,
            alpha: 0.01,
            min_sentences: 4,
            max_sentences: 8,
            seed,
            ..Default::default()
        })
        .unwrap();
        let sizes = p.train.vocab.sizes();
        let eta = vec![1e-3; sizes.len()];
        let model = VariationalModel::from_materialized(5, sizes, eta, 5.0, 0, |r, f| {
            p.beta[r][f]
                .iter()
                .enumerate()
                .map(|(v, &b)| (v as u32, 1e-3 + 1e4 * b))
                .collect::<Vec<_>>()
                .into_iter()
        })
        .unwrap();
        let ctx = ChainContext::new(&model);
        let batch = index::sample(&mut root_rng(seed), 100, 20).into_vec();
        let snapshots: Vec<Vec<Vec<u32>>> = batch
            .iter()
            .map(|&d| {
                let doc = &p.train.documents[d];
                run_local_chain(&ctx, doc, d, 5, 10, &mut child_rng(seed, 0, &doc.id))
                    .unwrap()
                    .occupancy_snapshots
            })
            .collect();
        let g = alpha_gradient(&snapshots, model.alpha(), 100, 20);
        if g < 0.0 {
            negative += 1;
        }
        grads.push(g);
    }
    assert!(negative >= 9, "{negative}/10: {grads:?}");
}
