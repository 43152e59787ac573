use std::collections::BTreeMap;
use std::io::Write;

use crate::metrics::MetricsLog;

/// Sampling document-steps in one SSVI iteration: `S · S′`.
pub fn sampling_steps_per_iteration(minibatch_size: usize, sweeps: usize) -> u64 {
    minibatch_size as u64 * sweeps as u64
}

/// SSVI iterations that take as many samples as one Gibbs sweep over `D` documents.
pub fn iterations_per_gibbs_sweep(corpus_size: usize, minibatch_size: usize, sweeps: usize) -> f64 {
    corpus_size as f64 / sampling_steps_per_iteration(minibatch_size, sweeps) as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub document_sweeps: u64,
    pub ssvi_perplexity: Option<f64>,
    pub gibbs_perplexity: Option<f64>,
}

/// Evaluation perplexity of both trainers on a shared axis of sampling
/// document-steps.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonTable {
    pub points: Vec<CurvePoint>,
    /// False when no Gibbs log was supplied; the CSV then has no Gibbs column.
    pub has_gibbs: bool,
    pub warnings: Vec<String>,
}

/// Merges the perplexity checkpoints of both logs by cumulative document sweeps.
///
/// Each row holds whichever trainers have a checkpoint at that step count;
/// the other cell stays empty and the gap is counted in `warnings`.
pub fn comparison_curves(ssvi: &MetricsLog, gibbs: Option<&MetricsLog>) -> ComparisonTable {
    let mut warnings = Vec::new();
    let mut rows: BTreeMap<u64, (Option<f64>, Option<f64>)> = BTreeMap::new();
    let ssvi_points = ssvi.perplexity_checkpoints();
    if ssvi_points.is_empty() {
        warnings.push("SSVI log has no eval perplexity checkpoints".to_string());
    }
    for (x, p) in ssvi_points {
        rows.entry(x).or_default().0 = Some(p);
    }
    let has_gibbs = match gibbs {
        Some(log) if !log.rows.is_empty() => {
            let points = log.perplexity_checkpoints();
            if points.is_empty() {
                warnings.push("Gibbs log has no eval perplexity checkpoints".to_string());
            }
            for (x, p) in points {
                rows.entry(x).or_default().1 = Some(p);
            }
            true
        }
        _ => {
            warnings.push("no Gibbs log; writing the SSVI column only".to_string());
            false
        }
    };
    let points: Vec<CurvePoint> = rows
        .into_iter()
        .map(|(x, (s, g))| CurvePoint {
            document_sweeps: x,
            ssvi_perplexity: s,
            gibbs_perplexity: g,
        })
        .collect();
    if has_gibbs {
        let gaps = points
            .iter()
            .filter(|p| p.ssvi_perplexity.is_none() || p.gibbs_perplexity.is_none())
            .count();
        if gaps > 0 {
            warnings.push(format!(
                "{gaps} rows have a checkpoint from only one trainer"
            ));
        }
    }
    ComparisonTable {
        points,
        has_gibbs,
        warnings,
    }
}

impl ComparisonTable {
    /// `document_sweeps,ssvi_perplexity,gibbs_perplexity`, gaps left empty.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if self.has_gibbs {
            w.write_record(["document_sweeps", "ssvi_perplexity", "gibbs_perplexity"])?;
        } else {
            w.write_record(["document_sweeps", "ssvi_perplexity"])?;
        }
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for p in &self.points {
            if self.has_gibbs {
                w.write_record([
                    p.document_sweeps.to_string(),
                    cell(p.ssvi_perplexity),
                    cell(p.gibbs_perplexity),
                ])?;
            } else {
                w.write_record([p.document_sweeps.to_string(), cell(p.ssvi_perplexity)])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricsRow;

    fn log(points: &[(u64, Option<f64>)]) -> MetricsLog {
        let mut log = MetricsLog::new(vec![]);
        for (i, &(x, p)) in points.iter().enumerate() {
            log.rows.push(MetricsRow {
                iteration: i + 1,
                rho: None,
                elbo_proxy: None,
                document_sweeps_cumulative: x,
                burnin_sweeps_cumulative: 0,
                eval_perplexity: p,
                alpha: 1.0,
                alpha_grad: None,
                eta: vec![],
                eta_grad: vec![],
            });
        }
        log
    }

    #[test]
    fn accounting_identities() {
        assert_eq!(sampling_steps_per_iteration(256, 25), 6400);
        assert!((iterations_per_gibbs_sweep(462_755, 256, 25) - 72.3).abs() < 0.05);
    }

    #[test]
    fn merges_on_shared_axis_and_flags_gaps() {
        let ssvi = log(&[(6400, Some(50.0)), (12800, Some(40.0)), (19200, None)]);
        let gibbs = log(&[(12800, Some(35.0)), (25600, Some(30.0))]);
        let t = comparison_curves(&ssvi, Some(&gibbs));
        assert_eq!(t.points.len(), 3);
        assert_eq!(t.points[1].ssvi_perplexity, Some(40.0));
        assert_eq!(t.points[1].gibbs_perplexity, Some(35.0));
        assert_eq!(t.points[2].ssvi_perplexity, None);
        assert!(t.warnings.iter().any(|w| w.contains("2 rows")));
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "document_sweeps,ssvi_perplexity,gibbs_perplexity\n6400,50,\n12800,40,35\n25600,,30\n"
        );
    }

    #[test]
    fn missing_gibbs_log_degrades_to_one_column() {
        let ssvi = log(&[(6400, Some(50.0))]);
        let empty = MetricsLog::new(vec![]);
        for t in [
            comparison_curves(&ssvi, None),
            comparison_curves(&ssvi, Some(&empty)),
        ] {
            assert!(!t.has_gibbs);
            assert!(!t.warnings.is_empty());
            let mut buf = Vec::new();
            t.write_csv(&mut buf).unwrap();
            assert_eq!(
                String::from_utf8(buf).unwrap(),
                "document_sweeps,ssvi_perplexity\n6400,50\n"
            );
        }
    }
}
