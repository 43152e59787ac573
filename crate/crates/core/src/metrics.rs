//! Per-iteration metrics log shared by both trainers.
//!
//! CSV columns: `iteration, rho, elbo_proxy, document_sweeps_cumulative,
//! eval_perplexity, burnin_sweeps_cumulative, alpha, alpha_grad`, then
//! `eta_<type>` and `eta_grad_<type>` per active feature type. Values that were
//! not computed are left empty.

use std::io::{Read, Write};

use crate::error::CorpusError;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    /// 1-based iteration (SSVI) or sweep (Gibbs); 0 is the initial state.
    pub iteration: usize,
    pub rho: Option<f64>,
    pub elbo_proxy: Option<f64>,
    /// Document sweeps that contributed samples, i.e. `S·S′` per SSVI iteration
    /// and `D` per Gibbs sweep.
    pub document_sweeps_cumulative: u64,
    /// Discarded burn-in document sweeps, `S·B` per SSVI iteration.
    pub burnin_sweeps_cumulative: u64,
    pub eval_perplexity: Option<f64>,
    pub alpha: f64,
    pub alpha_grad: Option<f64>,
    pub eta: Vec<f64>,
    pub eta_grad: Vec<Option<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    pub feature_names: Vec<String>,
    pub rows: Vec<MetricsRow>,
}

const FIXED: [&str; 8] = [
    "iteration",
    "rho",
    "elbo_proxy",
    "document_sweeps_cumulative",
    "eval_perplexity",
    "burnin_sweeps_cumulative",
    "alpha",
    "alpha_grad",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_opt(field: &str, line: usize) -> Result<Option<f64>, CorpusError> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse::<f64>()
        .map(Some)
        .map_err(|e| CorpusError::Malformed {
            line,
            message: format!("bad number {field:?}: {e}"),
        })
}

impl MetricsLog {
    pub fn new(feature_names: Vec<String>) -> Self {
        MetricsLog {
            feature_names,
            rows: Vec::new(),
        }
    }

    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = FIXED.iter().map(|s| s.to_string()).collect();
        h.extend(self.feature_names.iter().map(|n| format!("eta_{n}")));
        h.extend(self.feature_names.iter().map(|n| format!("eta_grad_{n}")));
        h
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header())?;
        for row in &self.rows {
            let mut rec = vec![
                row.iteration.to_string(),
                opt(row.rho),
                opt(row.elbo_proxy),
                row.document_sweeps_cumulative.to_string(),
                opt(row.eval_perplexity),
                row.burnin_sweeps_cumulative.to_string(),
                row.alpha.to_string(),
                opt(row.alpha_grad),
            ];
            rec.extend(row.eta.iter().map(|x| x.to_string()));
            rec.extend(row.eta_grad.iter().map(|x| opt(*x)));
            w.write_record(rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, CorpusError> {
        let mut reader = csv::Reader::from_reader(input);
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| CorpusError::Malformed {
                line: 1,
                message: e.to_string(),
            })?
            .iter()
            .map(str::to_string)
            .collect();
        if header.len() < FIXED.len() || header[..FIXED.len()] != FIXED {
            return Err(CorpusError::Malformed {
                line: 1,
                message: "not a metrics log header".to_string(),
            });
        }
        let feature_names: Vec<String> = header[FIXED.len()..]
            .iter()
            .filter_map(|h| h.strip_prefix("eta_"))
            .filter(|h| !h.starts_with("grad_"))
            .map(str::to_string)
            .collect();
        let f = feature_names.len();
        if header.len() != FIXED.len() + 2 * f {
            return Err(CorpusError::Malformed {
                line: 1,
                message: "eta columns do not pair up".to_string(),
            });
        }
        let mut log = MetricsLog::new(feature_names);
        for (i, rec) in reader.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| CorpusError::Malformed {
                line,
                message: e.to_string(),
            })?;
            let get = |k: usize| rec.get(k).unwrap_or("");
            let int = |k: usize| {
                get(k).parse::<u64>().map_err(|e| CorpusError::Malformed {
                    line,
                    message: format!("bad integer in column {}: {e}", header[k]),
                })
            };
            log.rows.push(MetricsRow {
                iteration: int(0)? as usize,
                rho: parse_opt(get(1), line)?,
                elbo_proxy: parse_opt(get(2), line)?,
                document_sweeps_cumulative: int(3)?,
                eval_perplexity: parse_opt(get(4), line)?,
                burnin_sweeps_cumulative: int(5)?,
                alpha: parse_opt(get(6), line)?.unwrap_or(f64::NAN),
                alpha_grad: parse_opt(get(7), line)?,
                eta: (0..f)
                    .map(|j| parse_opt(get(FIXED.len() + j), line).map(|x| x.unwrap_or(f64::NAN)))
                    .collect::<Result<_, _>>()?,
                eta_grad: (0..f)
                    .map(|j| parse_opt(get(FIXED.len() + f + j), line))
                    .collect::<Result<_, _>>()?,
            });
        }
        Ok(log)
    }

    /// Rows that carry an eval perplexity, as `(document sweeps, perplexity)`.
    pub fn perplexity_checkpoints(&self) -> Vec<(u64, f64)> {
        self.rows
            .iter()
            .filter_map(|r| r.eval_perplexity.map(|p| (r.document_sweeps_cumulative, p)))
            .collect()
    }

    pub fn last_elbo(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| r.elbo_proxy)
    }

    pub fn last_perplexity(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| r.eval_perplexity)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_keeps_empty_cells() {
        let mut log = MetricsLog::new(vec!["vb".into(), "pp".into()]);
        log.rows.push(MetricsRow {
            iteration: 1,
            rho: Some(0.25),
            elbo_proxy: None,
            document_sweeps_cumulative: 6400,
            burnin_sweeps_cumulative: 1280,
            eval_perplexity: Some(123.5),
            alpha: 0.1,
            alpha_grad: None,
            eta: vec![0.01, 0.02],
            eta_grad: vec![Some(-3.0), None],
        });
        let text = log.to_csv_string();
        assert!(text.starts_with(
            "iteration,rho,elbo_proxy,document_sweeps_cumulative,eval_perplexity,burnin_sweeps_cumulative,alpha,alpha_grad,eta_vb,eta_pp,eta_grad_vb,eta_grad_pp\n"
        ));
        assert!(text.contains("1,0.25,,6400,123.5,1280,0.1,,0.01,0.02,-3,\n"));
        let back = MetricsLog::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.perplexity_checkpoints(), vec![(6400, 123.5)]);
    }

    #[test]
    fn rejects_foreign_csv() {
        assert!(MetricsLog::read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }
}
