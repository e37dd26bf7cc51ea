use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::compare::{CaseScores, EvalReport, EvalRow, TestOutcome};
use super::sweep::SweepReport;
use super::HarnessError;
use crate::model::{AnswerAttempt, StudentId};

pub const REPORT_FILE: &str = "report.csv";
pub const MEANS_FILE: &str = "means.csv";
pub const TTEST_FILE: &str = "ttest.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const PANELS_FILE: &str = "sweep_panels.csv";

const REPORT_HEADER: [&str; 10] = [
    "algorithm",
    "fold",
    "student",
    "questionnaire",
    "status",
    "sap",
    "sr",
    "ndpm",
    "error",
    "wall_time_ms",
];

/// Shortest representation that parses back to the same value.
fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn write_attempts_csv<W: Write>(writer: W, attempts: &[AnswerAttempt]) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["student", "question", "questionnaire", "first_attempt_grade", "retries", "duration"])?;
    for a in attempts {
        out.write_record([
            a.student.as_str(),
            a.question.as_str(),
            a.questionnaire.as_str(),
            &num(a.first_attempt_grade),
            &a.retries.to_string(),
            &num(a.duration),
        ])?;
    }
    out.flush().map_err(|e| HarnessError::io("attempts", e))?;
    Ok(())
}

/// One row per case × algorithm. The wall-time column is last so that it
/// can be dropped when comparing runs.
pub fn write_report_csv<W: Write>(writer: W, report: &EvalReport) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(REPORT_HEADER)?;
    for r in &report.rows {
        let (status, sap, sr, ndpm, error) = match &r.outcome {
            Ok(s) => ("ok", num(s.sap), num(s.sr), num(s.ndpm), String::new()),
            Err(e) => ("failed", String::new(), String::new(), String::new(), e.clone()),
        };
        out.write_record([
            r.algorithm.as_str(),
            &r.fold.to_string(),
            r.student.as_str(),
            r.questionnaire.as_str(),
            status,
            &sap,
            &sr,
            &ndpm,
            &error,
            &format!("{:.3}", r.wall_ms),
        ])?;
    }
    out.flush().map_err(|e| HarnessError::io(REPORT_FILE, e))?;
    Ok(())
}

/// Reads rows written by [`write_report_csv`] and recomputes aggregates and
/// tests. Algorithms keep their first-appearance order.
pub fn read_report_csv<R: Read>(reader: R, alpha: f64) -> Result<EvalReport, HarnessError> {
    let mut input = csv::Reader::from_reader(reader);
    let headers = input.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| HarnessError::MissingColumn(name.to_string()))
    };
    let idx: Vec<usize> = REPORT_HEADER[..9].iter().map(|h| col(h)).collect::<Result<_, _>>()?;
    let wall = col("wall_time_ms").ok();

    let mut algorithms: Vec<String> = Vec::new();
    let mut rows = Vec::new();
    for (line, record) in input.records().enumerate() {
        let record = record?;
        let bad = |what: &str| HarnessError::Report(format!("row {}: {what}", line + 2));
        let field = |i: usize| record.get(idx[i]).ok_or_else(|| bad("too few fields"));
        let float = |i: usize| -> Result<f64, HarnessError> {
            field(i)?.parse().map_err(|_| bad(&format!("bad {}", REPORT_HEADER[i])))
        };
        let algorithm = field(0)?.to_string();
        if !algorithms.contains(&algorithm) {
            algorithms.push(algorithm.clone());
        }
        let outcome = match field(4)? {
            "ok" => Ok(CaseScores {
                sap: float(5)?,
                sr: float(6)?,
                ndpm: float(7)?,
            }),
            "failed" => Err(field(8)?.to_string()),
            other => return Err(bad(&format!("unknown status `{other}`"))),
        };
        rows.push(EvalRow {
            algorithm,
            fold: field(1)?.parse().map_err(|_| bad("bad fold"))?,
            student: StudentId::new(field(2)?)?,
            questionnaire: field(3)?.to_string(),
            outcome,
            wall_ms: wall
                .and_then(|w| record.get(w))
                .and_then(|v| v.parse().ok())
                .unwrap_or(0.0),
        });
    }
    Ok(EvalReport::from_rows(algorithms, rows, Vec::new(), alpha))
}

fn write_means_csv<W: Write>(writer: W, report: &EvalReport) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["algorithm", "cases_ok", "cases_failed", "mean_sap", "mean_sr", "mean_ndpm"])?;
    for s in &report.summaries {
        out.write_record([
            s.algorithm.clone(),
            s.cases_ok.to_string(),
            s.cases_failed.to_string(),
            opt(s.mean_sap),
            opt(s.mean_sr),
            opt(s.mean_ndpm),
        ])?;
    }
    out.flush().map_err(|e| HarnessError::io(MEANS_FILE, e))?;
    Ok(())
}

fn write_ttest_csv<W: Write>(writer: W, report: &EvalReport) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record([
        "metric",
        "first",
        "second",
        "pairs",
        "outcome",
        "t_statistic",
        "dof",
        "t_critical",
        "p_value",
        "mean_difference",
        "reject_null",
    ])?;
    for t in &report.tests {
        let mut record = vec![t.metric.to_string(), t.first.clone(), t.second.clone(), t.pairs.to_string()];
        match &t.outcome {
            TestOutcome::Computed(r) => record.extend([
                "computed".to_string(),
                num(r.t_statistic),
                r.degrees_of_freedom.to_string(),
                num(r.t_critical),
                num(r.p_value),
                num(r.mean_difference),
                r.reject_null.to_string(),
            ]),
            TestOutcome::NoDifference => {
                record.push("no difference".into());
                record.extend(std::iter::repeat_n(String::new(), 5));
                record.push("false".into());
            }
            TestOutcome::NotRun(why) => {
                record.push(format!("not run: {why}"));
                record.extend(std::iter::repeat_n(String::new(), 6));
            }
        }
        out.write_record(&record)?;
    }
    out.flush().map_err(|e| HarnessError::io(TTEST_FILE, e))?;
    Ok(())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into())
}

/// Human-readable tables: mean scores per algorithm, paired t-tests and
/// per-fold training.
pub fn summary_text(report: &EvalReport) -> String {
    let mut s = String::new();
    let cases = report.rows.len() / report.algorithms.len().max(1);
    let _ = writeln!(s, "Comparison over {cases} cases, alpha = {}", report.alpha);
    let _ = writeln!(s);
    let _ = writeln!(s, "Mean scores");
    let _ = writeln!(s, "{:<10} {:>5} {:>6} {:>8} {:>8} {:>8}", "algorithm", "ok", "failed", "SAP", "SR", "NDPM");
    for a in &report.summaries {
        let _ = writeln!(
            s,
            "{:<10} {:>5} {:>6} {:>8} {:>8} {:>8}",
            a.algorithm,
            a.cases_ok,
            a.cases_failed,
            fmt_opt(a.mean_sap),
            fmt_opt(a.mean_sr),
            fmt_opt(a.mean_ndpm)
        );
    }
    if !report.tests.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(s, "Paired t-tests (first - second)");
        let _ = writeln!(
            s,
            "{:<6} {:<8} {:<8} {:>5} {:>9} {:>4} {:>8} {:>8}  result",
            "metric", "first", "second", "pairs", "t", "dof", "t_crit", "p"
        );
        for t in &report.tests {
            let head = format!("{:<6} {:<8} {:<8} {:>5}", t.metric, t.first, t.second, t.pairs);
            let _ = match &t.outcome {
                TestOutcome::Computed(r) => writeln!(
                    s,
                    "{head} {:>9.4} {:>4} {:>8.4} {:>8.4}  {}",
                    r.t_statistic,
                    r.degrees_of_freedom,
                    r.t_critical,
                    r.p_value,
                    if r.reject_null { "significant" } else { "not significant" }
                ),
                TestOutcome::NoDifference => writeln!(s, "{head} {:>9} {:>4} {:>8} {:>8}  no difference", "-", "-", "-", "-"),
                TestOutcome::NotRun(why) => writeln!(s, "{head} {:>9} {:>4} {:>8} {:>8}  not run: {why}", "-", "-", "-", "-"),
            };
        }
    }
    if !report.fits.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(s, "Training");
        let _ = writeln!(s, "{:<5} {:<10} {:>12} {:>12}", "fold", "algorithm", "wall_ms", "final_mse");
        for f in &report.fits {
            let _ = match &f.outcome {
                Ok(fit) => writeln!(
                    s,
                    "{:<5} {:<10} {:>12.1} {:>12}",
                    f.fold,
                    f.algorithm,
                    fit.wall_ms,
                    fit.final_mse.map(|m| format!("{m:.6}")).unwrap_or_else(|| "-".into())
                ),
                Err(e) => writeln!(s, "{:<5} {:<10} failed: {e}", f.fold, f.algorithm),
            };
        }
    }
    let failed: Vec<&EvalRow> = report.rows.iter().filter(|r| r.outcome.is_err()).collect();
    if !failed.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(s, "Failed cases");
        for r in failed {
            let _ = writeln!(
                s,
                "{} fold {} {} {}: {}",
                r.algorithm,
                r.fold,
                r.student,
                r.questionnaire,
                r.outcome.as_ref().unwrap_err()
            );
        }
    }
    s
}

fn create(dir: &Path, name: &str) -> Result<(std::io::BufWriter<std::fs::File>, PathBuf), HarnessError> {
    let path = dir.join(name);
    let file = std::fs::File::create(&path).map_err(|e| HarnessError::io(&path, e))?;
    Ok((std::io::BufWriter::new(file), path))
}

/// Writes report.csv, means.csv, ttest.csv and summary.txt under `dir`.
pub fn write_bench_outputs(dir: &Path, report: &EvalReport) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let (w, report_path) = create(dir, REPORT_FILE)?;
    write_report_csv(w, report)?;
    let (w, means_path) = create(dir, MEANS_FILE)?;
    write_means_csv(w, report)?;
    let (w, ttest_path) = create(dir, TTEST_FILE)?;
    write_ttest_csv(w, report)?;
    let (mut w, summary_path) = create(dir, SUMMARY_FILE)?;
    w.write_all(summary_text(report).as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| HarnessError::io(&summary_path, e))?;
    Ok(vec![report_path, means_path, ttest_path, summary_path])
}

/// Writes sweep.csv (one row per configuration) and sweep_panels.csv (the
/// per-parameter marginals) under `dir`.
pub fn write_sweep_outputs(dir: &Path, report: &SweepReport) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let (w, sweep_path) = create(dir, SWEEP_FILE)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "activation",
        "k",
        "layers",
        "status",
        "mean_sap",
        "mean_sr",
        "mean_ndpm",
        "cases_ok",
        "cases_failed",
        "error",
        "train_wall_ms",
        "wall_time_comparable",
    ])?;
    for r in &report.rows {
        let mut record = vec![r.activation.to_string(), r.k.to_string(), r.layers.to_string()];
        match &r.outcome {
            Ok(m) => record.extend([
                "ok".to_string(),
                num(m.mean_sap),
                num(m.mean_sr),
                num(m.mean_ndpm),
                m.cases_ok.to_string(),
                m.cases_failed.to_string(),
                String::new(),
            ]),
            Err(e) => {
                record.push("failed".into());
                record.extend(std::iter::repeat_n(String::new(), 5));
                record.push(e.clone());
            }
        }
        record.push(format!("{:.3}", r.train_wall_ms));
        record.push(report.wall_times_comparable.to_string());
        out.write_record(&record)?;
    }
    out.flush().map_err(|e| HarnessError::io(&sweep_path, e))?;

    let (w, panels_path) = create(dir, PANELS_FILE)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["parameter", "value", "configs", "mean_sap", "mean_sr", "mean_train_ms"])?;
    for p in report.panels() {
        out.write_record([
            p.parameter.to_string(),
            p.value,
            p.configs.to_string(),
            num(p.mean_sap),
            num(p.mean_sr),
            format!("{:.3}", p.mean_train_ms),
        ])?;
    }
    out.flush().map_err(|e| HarnessError::io(&panels_path, e))?;
    Ok(vec![sweep_path, panels_path])
}
