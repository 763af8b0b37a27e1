//! Run output files.
//!
//! * `metrics.csv`: one row per round and detector, columns [`METRICS_HEADER`].
//!   Rounds up to `skip_rounds` are left out.
//! * `scores.csv`: `round,client,detector,score`, the statistic each detector decided on.
//! * `sample_scores.csv`: `round,client,sample,kind,score`, the per-canary score
//!   matrices (only when a canary detector ran).
//! * `distributions.csv`: `round,client,label,probability` (only when label inference ran).
//! * `config.snapshot`: the canonical config text.
//!
//! Floats are written with 17 significant digits, lines end in `\n`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::detect::Detector;
use crate::engine::RunOutput;
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, Confusion, DetectorMetrics, RoundMetrics};

pub const METRICS_HEADER: &str = "round,detector,tp,fp,tn,fn,precision,recall,f1,fpr,train_accuracy,test_accuracy";
pub const SCORES_HEADER: &str = "round,client,detector,score";
pub const SAMPLE_SCORES_HEADER: &str = "round,client,sample,kind,score";
pub const DISTRIBUTIONS_HEADER: &str = "round,client,label,probability";
pub const SUMMARY_HEADER: &str = "run,detector,mean_f1,mean_precision,mean_recall,mean_fpr,final_test_accuracy";

/// Scientific notation with 17 significant digits; parses back to the same value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

struct CsvFile {
    path: std::path::PathBuf,
    out: BufWriter<File>,
}

impl CsvFile {
    fn create(path: &Path, header: &str) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut f = CsvFile {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        f.line(header)?;
        Ok(f)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        self.out
            .write_all(s.as_bytes())
            .and_then(|_| self.out.write_all(b"\n"))
            .map_err(|e| Error::io(&self.path, e))
    }

    fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Metrics for the rounds that go into `metrics.csv`.
pub fn run_metrics(run: &RunOutput) -> Result<Vec<RoundMetrics>> {
    run.records
        .iter()
        .filter(|r| r.round() > run.config.skip_rounds)
        .map(|r| compute_metrics(r, &run.truth))
        .collect()
}

/// Writes every output file of one run into `dir`, creating it if needed.
pub fn emit_csv(run: &RunOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut metrics = CsvFile::create(&dir.join("metrics.csv"), METRICS_HEADER)?;
    for m in run_metrics(run)? {
        for d in &m.detectors {
            let c = d.confusion;
            metrics.line(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                m.round,
                d.detector,
                c.tp,
                c.fp,
                c.tn,
                c.fn_,
                fmt_f64(d.precision),
                fmt_f64(d.recall),
                fmt_f64(d.f1),
                fmt_f64(d.fpr),
                fmt_f64(m.train_accuracy),
                fmt_f64(m.test_accuracy)
            ))?;
        }
    }
    metrics.finish()?;

    let mut scores = CsvFile::create(&dir.join("scores.csv"), SCORES_HEADER)?;
    for r in &run.records {
        for o in &r.outputs {
            for (n, s) in o.scores.iter().enumerate() {
                scores.line(&format!("{},{},{},{}", r.round(), n, o.detector, fmt_f64(*s)))?;
            }
        }
    }
    scores.finish()?;

    if run.records.iter().any(|r| !r.matrices.is_empty()) {
        let mut f = CsvFile::create(&dir.join("sample_scores.csv"), SAMPLE_SCORES_HEADER)?;
        for r in &run.records {
            for m in &r.matrices {
                for ((n, s), v) in m.scores.indexed_iter() {
                    f.line(&format!("{},{},{},{},{}", r.round(), n, s, m.kind, fmt_f64(*v)))?;
                }
            }
        }
        f.finish()?;
    }

    if run.records.iter().any(|r| r.distributions.is_some()) {
        let mut f = CsvFile::create(&dir.join("distributions.csv"), DISTRIBUTIONS_HEADER)?;
        for r in &run.records {
            for (n, d) in r.distributions.iter().flatten().enumerate() {
                for (k, p) in d.probs().iter().enumerate() {
                    f.line(&format!("{},{},{},{}", r.round(), n, k, fmt_f64(*p)))?;
                }
            }
        }
        f.finish()?;
    }

    let snapshot = dir.join("config.snapshot");
    std::fs::write(&snapshot, run.config.to_text()).map_err(|e| Error::io(&snapshot, e))
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, name: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("bad {name} `{v}`"),
    })
}

/// Reads `metrics.csv` back into per-round metrics.
pub fn read_metrics(path: &Path) -> Result<Vec<RoundMetrics>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == METRICS_HEADER => {}
        _ => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: "unexpected header".into(),
            });
        }
    }
    let mut rounds: Vec<RoundMetrics> = Vec::new();
    for (i, line) in lines {
        let ln = i + 1;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 12 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: ln,
                message: format!("{} fields", f.len()),
            });
        }
        let round: usize = parse_field(path, ln, "round", f[0])?;
        let detector: Detector = parse_field(path, ln, "detector", f[1])?;
        let confusion = Confusion {
            tp: parse_field(path, ln, "tp", f[2])?,
            fp: parse_field(path, ln, "fp", f[3])?,
            tn: parse_field(path, ln, "tn", f[4])?,
            fn_: parse_field(path, ln, "fn", f[5])?,
        };
        let dm = DetectorMetrics {
            detector,
            confusion,
            precision: parse_field(path, ln, "precision", f[6])?,
            recall: parse_field(path, ln, "recall", f[7])?,
            f1: parse_field(path, ln, "f1", f[8])?,
            fpr: parse_field(path, ln, "fpr", f[9])?,
        };
        let train_accuracy = parse_field(path, ln, "train_accuracy", f[10])?;
        let test_accuracy = parse_field(path, ln, "test_accuracy", f[11])?;
        match rounds.last_mut() {
            Some(r) if r.round == round => r.detectors.push(dm),
            _ => rounds.push(RoundMetrics {
                round,
                detectors: vec![dm],
                train_accuracy,
                test_accuracy,
            }),
        }
    }
    Ok(rounds)
}

/// One `summary.csv` row per detector: means over rounds plus the final test accuracy.
pub fn summary_rows(run_name: &str, rounds: &[RoundMetrics]) -> Vec<String> {
    let Some(first) = rounds.first() else { return Vec::new() };
    let final_acc = rounds.last().map_or(0.0, |r| r.test_accuracy);
    first
        .detectors
        .iter()
        .map(|d| {
            let per: Vec<&DetectorMetrics> = rounds.iter().filter_map(|r| r.detector(d.detector)).collect();
            let mean = |f: fn(&DetectorMetrics) -> f64| per.iter().map(|m| f(m)).sum::<f64>() / per.len() as f64;
            format!(
                "{},{},{},{},{},{},{}",
                run_name,
                d.detector,
                fmt_f64(mean(|m| m.f1)),
                fmt_f64(mean(|m| m.precision)),
                fmt_f64(mean(|m| m.recall)),
                fmt_f64(mean(|m| m.fpr)),
                fmt_f64(final_acc)
            )
        })
        .collect()
}

pub fn write_summary(path: &Path, rows: &[String]) -> Result<()> {
    let mut f = CsvFile::create(path, SUMMARY_HEADER)?;
    for r in rows {
        f.line(r)?;
    }
    f.finish()
}
