use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use log::{info, warn};
use serde::Serialize;

use rellda::artifact::write_atomic;
use rellda::corpus::{
    corpus_stats, load_corpus, split_corpus, write_corpus, Corpus, FeatureSet, Vocabulary,
};
use rellda::evaluation::{
    comparison_curves, perplexity, rank_sentences, PerplexityConfig, ReportConfig,
};
use rellda::gibbs::run_gibbs;
use rellda::metrics::MetricsLog;
use rellda::model_file::{ModelFile, Trainer};
use rellda::ssvi::{train, EvalSchedule};
use rellda::synth::{generate, SynthConfig};

use crate::params::{RunConfig, TrainParams, TrainerKind};
use crate::{
    CompareArgs, EvalArgs, GridArgs, IngestArgs, ReportArgs, SplitArgs, SynthArgs, TrainArgs,
};

fn save_corpus(corpus: &Corpus, path: &Path) -> rellda::Result<()> {
    write_atomic(path, |w| write_corpus(corpus, w))
}

fn save_json<T: Serialize>(value: &T, path: &Path) -> rellda::Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_atomic(path, |w| w.write_all(text.as_bytes()))
}

fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

/// `m.json` → `m.metrics.csv`.
pub fn metrics_path(model: &Path) -> PathBuf {
    model.with_extension("metrics.csv")
}

fn load_frozen(path: &Path, vocab: &Arc<Vocabulary>) -> anyhow::Result<Corpus> {
    let (corpus, oov) = load_corpus(path, vocab.features(), Some(vocab))?;
    if oov.dropped_tokens > 0 {
        warn!(
            "{}: dropped {} out-of-vocabulary tokens; {} sentences left empty",
            path.display(),
            oov.dropped_tokens,
            oov.emptied_sentences
        );
    }
    Ok(corpus)
}

fn load_model(path: &Path) -> anyhow::Result<(ModelFile, Arc<Vocabulary>)> {
    let model = ModelFile::load(path)?;
    let vocab = model.vocabulary()?;
    Ok((model, vocab))
}

pub fn ingest(args: IngestArgs) -> anyhow::Result<()> {
    let features = FeatureSet::parse(&args.features)?;
    let (corpus, _) = load_corpus(&args.input, &features, None)?;
    save_corpus(&corpus, &args.out)?;
    let stats = corpus_stats(&corpus);
    info!(
        "wrote {} documents to {}",
        stats.documents,
        args.out.display()
    );
    print_json(&stats)
}

pub fn split(args: SplitArgs) -> anyhow::Result<()> {
    let features = FeatureSet::parse(&args.features)?;
    let (corpus, _) = load_corpus(&args.corpus, &features, None)?;
    let split = split_corpus(&corpus, args.eval_fraction, args.seed)?;
    if split.eval_oov.dropped_tokens > 0 {
        warn!(
            "eval side: dropped {} tokens unseen in training; {} sentences left empty",
            split.eval_oov.dropped_tokens, split.eval_oov.emptied_sentences
        );
    }
    save_corpus(&split.train, &args.train_out)?;
    save_corpus(&split.eval, &args.eval_out)?;
    info!(
        "{} train and {} eval documents",
        split.train.num_documents(),
        split.eval.num_documents()
    );
    Ok(())
}

struct Inputs {
    train: Corpus,
    eval: Option<Corpus>,
}

fn load_inputs(corpus: &Path, eval: Option<&Path>, features: &str) -> anyhow::Result<Inputs> {
    let features = FeatureSet::parse(features)?;
    let (mut train, _) = load_corpus(corpus, &features, None)?;
    let sizes = train.vocab.sizes();
    if sizes.contains(&0) {
        let kinds = features.kinds();
        let unused: Vec<&str> = (0..kinds.len())
            .filter(|&f| sizes[f] == 0)
            .map(|f| kinds[f].name())
            .collect();
        warn!(
            "feature types absent from {}: {}; dropping them",
            corpus.display(),
            unused.join(", ")
        );
        let kept = FeatureSet::new((0..kinds.len()).filter(|&f| sizes[f] > 0).map(|f| kinds[f]))?;
        train = load_corpus(corpus, &kept, None)?.0;
    }
    let eval = eval.map(|p| load_frozen(p, &train.vocab)).transpose()?;
    Ok(Inputs { train, eval })
}

fn merged_params(flags: TrainParams, config: Option<&Path>) -> anyhow::Result<TrainParams> {
    Ok(match config {
        Some(path) => flags.over(TrainParams::load(path)?),
        None => flags,
    })
}

/// Trains one configuration and returns the model file and metrics.
fn run(
    inputs: &Inputs,
    cfg: &RunConfig,
    echo: serde_json::Value,
) -> rellda::Result<(ModelFile, MetricsLog)> {
    let eval = inputs.eval.as_ref().map(|corpus| EvalSchedule {
        corpus,
        protocol: cfg.perplexity,
        every: cfg.eval_every,
    });
    let vocab = &inputs.train.vocab;
    match cfg.trainer {
        TrainerKind::Ssvi => {
            let ssvi = cfg.ssvi.as_ref().expect("resolved ssvi config");
            let out = train(&inputs.train, ssvi, eval)?;
            let file = ModelFile::new(&out.model, vocab, Trainer::Ssvi, echo, cfg.perplexity);
            Ok((file, out.metrics))
        }
        TrainerKind::Gibbs => {
            let gibbs = cfg.gibbs.as_ref().expect("resolved gibbs config");
            let out = run_gibbs(&inputs.train, gibbs, eval)?;
            let model = out.state.to_variational(gibbs.sweeps);
            let file = ModelFile::new(&model, vocab, Trainer::Gibbs, echo, cfg.perplexity);
            Ok((file, out.metrics))
        }
    }
}

fn echo(cfg: &RunConfig, corpus: &Path, eval: Option<&Path>) -> serde_json::Value {
    let mut v = serde_json::to_value(cfg).expect("config serializes");
    v["corpus"] = corpus.display().to_string().into();
    if let Some(e) = eval {
        v["eval_corpus"] = e.display().to_string().into();
    }
    v
}

fn write_outputs(model: &ModelFile, metrics: &MetricsLog, path: &Path) -> rellda::Result<()> {
    model.save(path)?;
    let csv = metrics.to_csv_string();
    write_atomic(&metrics_path(path), |w| w.write_all(csv.as_bytes()))
}

pub fn train_cmd(args: TrainArgs) -> anyhow::Result<()> {
    let params = merged_params(args.params, args.config.as_deref())?;
    let cfg = params.resolve(params.single_cell()?)?;
    let inputs = load_inputs(&args.corpus, args.eval_corpus.as_deref(), &cfg.features)?;
    if let Some(ssvi) = &cfg.ssvi {
        ssvi.validate(inputs.train.num_documents())?;
    }
    let (model, metrics) = run(
        &inputs,
        &cfg,
        echo(&cfg, &args.corpus, args.eval_corpus.as_deref()),
    )?;
    write_outputs(&model, &metrics, &args.out)?;
    info!(
        "wrote {} and {}",
        args.out.display(),
        metrics_path(&args.out).display()
    );
    if let Some(p) = metrics.last_perplexity() {
        info!("final eval perplexity {p:.4}");
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct GridRow {
    rank: usize,
    cell: usize,
    #[serde(rename = "R")]
    relations: usize,
    a: f64,
    b: f64,
    c: f64,
    status: &'static str,
    eval_perplexity: Option<f64>,
    elbo_proxy: Option<f64>,
    model: String,
    error: String,
}

/// Successful cells first, by eval perplexity (ascending) then ELBO proxy
/// (descending); missing values sort last.
fn rank_rows(rows: &mut [GridRow]) {
    use std::cmp::Ordering;
    let missing_last = |a: Option<f64>, b: Option<f64>, descending: bool| match (a, b) {
        (Some(x), Some(y)) if descending => y.total_cmp(&x),
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    };
    rows.sort_by(|x, y| {
        (x.status != "ok")
            .cmp(&(y.status != "ok"))
            .then_with(|| missing_last(x.eval_perplexity, y.eval_perplexity, false))
            .then_with(|| missing_last(x.elbo_proxy, y.elbo_proxy, true))
            .then_with(|| x.cell.cmp(&y.cell))
    });
    for (i, row) in rows.iter_mut().enumerate() {
        row.rank = i + 1;
    }
}

pub fn grid(args: GridArgs) -> anyhow::Result<()> {
    let params = merged_params(args.params, args.config.as_deref())?;
    let cells = params.cells();
    let features = params.features.clone().unwrap_or_else(|| "all".to_string());
    let inputs = load_inputs(&args.corpus, args.eval_corpus.as_deref(), &features)?;
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let mut rows = Vec::with_capacity(cells.len());
    for (i, &cell) in cells.iter().enumerate() {
        let name = format!("cell-{i:03}.json");
        let path = args.out_dir.join(&name);
        info!("cell {}/{}: {cell:?}", i + 1, cells.len());
        let result = params
            .resolve(cell)
            .map_err(rellda::Error::from)
            .and_then(|cfg| {
                if let Some(ssvi) = &cfg.ssvi {
                    ssvi.validate(inputs.train.num_documents())?;
                }
                let (model, metrics) = run(
                    &inputs,
                    &cfg,
                    echo(&cfg, &args.corpus, args.eval_corpus.as_deref()),
                )?;
                write_outputs(&model, &metrics, &path)?;
                Ok(metrics)
            });
        let row = match result {
            Ok(metrics) => GridRow {
                rank: 0,
                cell: i,
                relations: cell.relations,
                a: cell.a,
                b: cell.b,
                c: cell.c,
                status: "ok",
                eval_perplexity: metrics.last_perplexity(),
                elbo_proxy: metrics.last_elbo(),
                model: name,
                error: String::new(),
            },
            Err(e) => {
                warn!("cell {i} failed: {e}");
                GridRow {
                    rank: 0,
                    cell: i,
                    relations: cell.relations,
                    a: cell.a,
                    b: cell.b,
                    c: cell.c,
                    status: "failed",
                    eval_perplexity: None,
                    elbo_proxy: None,
                    model: String::new(),
                    error: e.to_string(),
                }
            }
        };
        rows.push(row);
    }
    rank_rows(&mut rows);
    let summary = args.out_dir.join("summary.csv");
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for row in &rows {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    write_atomic(&summary, |w| w.write_all(&buf))?;
    let ok = rows.iter().filter(|r| r.status == "ok").count();
    info!(
        "{ok}/{} cells succeeded; summary in {}",
        rows.len(),
        summary.display()
    );
    if ok == 0 {
        anyhow::bail!("every grid cell failed");
    }
    let best = &rows[0];
    info!(
        "best cell {}: R={} a={} b={} c={}",
        best.cell, best.relations, best.a, best.b, best.c
    );
    Ok(())
}

pub fn eval(args: EvalArgs) -> anyhow::Result<()> {
    let (model, vocab) = load_model(&args.model)?;
    let corpus = load_frozen(&args.corpus, &vocab)?;
    let stored = model.perplexity_protocol;
    let protocol = PerplexityConfig {
        sweeps: args.sweeps.unwrap_or(stored.sweeps),
        burnin: args.burnin.unwrap_or(stored.burnin),
        seed: args.seed.unwrap_or(stored.seed),
    };
    protocol.validate()?;
    let report = perplexity(&model.point_estimate(), &corpus, &protocol)?;
    let out = serde_json::json!({
        "model": args.model.display().to_string(),
        "corpus": args.corpus.display().to_string(),
        "protocol": protocol,
        "report": report,
    });
    match &args.out {
        Some(path) => save_json(&out, path)?,
        None => print_json(&out)?,
    }
    Ok(())
}

pub fn report(args: ReportArgs) -> anyhow::Result<()> {
    let (model, vocab) = load_model(&args.model)?;
    let corpus = load_frozen(&args.corpus, &vocab)?;
    let cfg = ReportConfig {
        samples: args.samples,
        burnin: args.burnin,
        top_k: args.top_k,
        seed: args.seed,
    };
    let report = rank_sentences(&model.point_estimate(), &corpus, &cfg)?;
    match &args.out {
        Some(path) => save_json(&report, path)?,
        None => print_json(&report)?,
    }
    Ok(())
}

fn read_metrics(path: &Path) -> anyhow::Result<Option<MetricsLog>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    if file.metadata()?.len() == 0 {
        return Ok(None);
    }
    let log = MetricsLog::read_csv(BufReader::new(file))
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(Some(log))
}

pub fn compare(args: CompareArgs) -> anyhow::Result<()> {
    let ssvi = read_metrics(&args.ssvi)?.unwrap_or_default();
    let gibbs = match &args.gibbs {
        Some(path) => read_metrics(path)?,
        None => None,
    };
    let table = comparison_curves(&ssvi, gibbs.as_ref());
    for w in &table.warnings {
        warn!("{w}");
    }
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    write_atomic(&args.out, |w| w.write_all(&buf))?;
    info!(
        "{} rows written to {}",
        table.points.len(),
        args.out.display()
    );
    Ok(())
}

pub fn synth(args: SynthArgs) -> anyhow::Result<()> {
    let cfg = SynthConfig {
        relations: args.relations,
        documents: args.documents,
        eval_documents: args.eval_documents,
        min_sentences: args.min_sentences,
        max_sentences: args.max_sentences,
        alpha: args.alpha,
        beta_concentration: args.beta_concentration,
        seed: args.seed,
        ..Default::default()
    };
    let planted = generate(&cfg)?;
    let dir = &args.out_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    save_corpus(&planted.train, &dir.join("corpus.jsonl"))?;
    write_atomic(&dir.join("labels.jsonl"), |w| planted.write_labels(w))?;
    if cfg.eval_documents > 0 {
        save_corpus(&planted.eval, &dir.join("eval.jsonl"))?;
    }
    let truth = planted.model_file(serde_json::to_value(&cfg).expect("config serializes"));
    truth.save(&dir.join("truth.json"))?;
    info!(
        "wrote {} training and {} eval documents to {}",
        planted.train.num_documents(),
        planted.eval.num_documents(),
        dir.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(cell: usize, status: &'static str, ppl: Option<f64>, elbo: Option<f64>) -> GridRow {
        GridRow {
            rank: 0,
            cell,
            relations: 2,
            a: 0.1,
            b: 1.0,
            c: 0.51,
            status,
            eval_perplexity: ppl,
            elbo_proxy: elbo,
            model: String::new(),
            error: String::new(),
        }
    }

    #[test]
    fn ranking_orders_by_perplexity_then_elbo() {
        let mut rows = vec![
            row(0, "failed", None, None),
            row(1, "ok", Some(9.0), Some(-5.0)),
            row(2, "ok", Some(7.0), Some(-9.0)),
            row(3, "ok", Some(7.0), Some(-1.0)),
            row(4, "ok", None, Some(0.0)),
            row(5, "ok", Some(7.0), None),
        ];
        rank_rows(&mut rows);
        let order: Vec<usize> = rows.iter().map(|r| r.cell).collect();
        assert_eq!(order, vec![3, 2, 5, 1, 4, 0]);
        assert_eq!(rows[0].rank, 1);
    }

    #[test]
    fn metrics_path_replaces_the_extension() {
        assert_eq!(
            metrics_path(Path::new("out/m.json")),
            PathBuf::from("out/m.metrics.csv")
        );
    }
}
