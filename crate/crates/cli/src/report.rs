use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use groundvla::eval::{MetricsReport, RETRIEVAL_SIZES};
use groundvla::theory::TheoryReport;
use serde::Serialize;

use crate::CliError;

pub const METRICS_FILE: &str = "metrics.json";
pub const THEORY_FILE: &str = "theory.json";
pub const CURVE_FILE: &str = "risk_coverage.csv";

#[derive(Debug, Clone, Serialize)]
pub struct RunRow {
    pub run: String,
    pub metrics: Option<MetricsReport>,
    pub theory: Option<TheoryRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TheoryRow {
    pub bound_ok: bool,
    pub bottleneck_ok: bool,
    pub lambda_index: f64,
    pub decomposition_residual: f64,
    pub robustness_slope: f64,
    pub robustness_r_squared: f64,
}

impl From<&TheoryReport> for TheoryRow {
    fn from(t: &TheoryReport) -> Self {
        Self {
            bound_ok: t.bound_ok(),
            bottleneck_ok: t.bottleneck.passed,
            lambda_index: t.influence.lambda_index,
            decomposition_residual: t.decomposition.residual,
            robustness_slope: t.robustness.overall.slope,
            robustness_r_squared: t.robustness.overall.r_squared,
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let bytes = std::fs::read(path).map_err(|e| groundvla::Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| {
        CliError::Core(groundvla::Error::Schema {
            path: path.to_path_buf(),
            line: e.line(),
            reason: e.to_string(),
        })
    })
}

pub fn load_row(dir: &Path) -> Result<RunRow, CliError> {
    let run = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    let metrics_path = dir.join(METRICS_FILE);
    let theory_path = dir.join(THEORY_FILE);
    let metrics = metrics_path.exists().then(|| read_json::<MetricsReport>(&metrics_path)).transpose()?;
    let theory = theory_path
        .exists()
        .then(|| read_json::<TheoryReport>(&theory_path).map(|t| TheoryRow::from(&t)))
        .transpose()?;
    if metrics.is_none() && theory.is_none() {
        return Err(CliError::Usage(format!("{} holds neither {METRICS_FILE} nor {THEORY_FILE}", dir.display())));
    }
    Ok(RunRow { run, metrics, theory })
}

fn f(v: f64) -> String {
    format!("{v:.4}")
}

const SELECTIVE_HEADER: [&str; 9] = ["run", "AUROC", "AUPR", "ECE", "Cov@95", "FPR@95", "Clar@Ambig", "Unambig SR", "Total"];

fn selective_rows(rows: &[RunRow]) -> Vec<Vec<String>> {
    rows.iter()
        .filter_map(|r| {
            let m = r.metrics.as_ref()?;
            Some(vec![
                r.run.clone(),
                f(m.auroc),
                f(m.aupr),
                f(m.ece),
                f(m.cov_at_95),
                f(m.fpr_at_95),
                f(m.clar_at_ambig),
                f(m.unambig_sr),
                f(m.total),
            ])
        })
        .collect()
}

fn retrieval_header() -> Vec<String> {
    std::iter::once("run".to_string()).chain(RETRIEVAL_SIZES.iter().map(|n| format!("R@1 N={n}"))).collect()
}

fn retrieval_rows(rows: &[RunRow]) -> Vec<Vec<String>> {
    rows.iter()
        .filter_map(|r| {
            let m = r.metrics.as_ref()?;
            let mut row = vec![r.run.clone()];
            row.extend(RETRIEVAL_SIZES.iter().map(|n| m.recall_at_1.get(n).map_or("-".into(), |v| f(*v))));
            Some(row)
        })
        .collect()
}

const THEORY_HEADER: [&str; 7] = ["run", "bound", "bottleneck", "Lambda", "decomp residual", "robust slope", "robust R2"];

fn theory_rows(rows: &[RunRow]) -> Vec<Vec<String>> {
    rows.iter()
        .filter_map(|r| {
            let t = r.theory.as_ref()?;
            Some(vec![
                r.run.clone(),
                if t.bound_ok { "ok" } else { "VIOLATED" }.into(),
                if t.bottleneck_ok { "ok" } else { "VIOLATED" }.into(),
                f(t.lambda_index),
                format!("{:.2e}", t.decomposition_residual),
                f(t.robustness_slope),
                f(t.robustness_r_squared),
            ])
        })
        .collect()
}

fn text_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            let _ = write!(s, "{cell:>w$}");
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header);
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1)));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row));
    }
    out
}

fn csv(header: &[String], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",") + "\n";
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub struct Rendered {
    pub files: Vec<(&'static str, String)>,
}

pub fn render(rows: &[RunRow], dirs: &[PathBuf]) -> Result<Rendered, CliError> {
    let strings = |h: &[&str]| h.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let sel_h = strings(&SELECTIVE_HEADER);
    let ret_h = retrieval_header();
    let th_h = strings(&THEORY_HEADER);
    let sel = selective_rows(rows);
    let ret = retrieval_rows(rows);
    let th = theory_rows(rows);

    let mut text = String::new();
    if !sel.is_empty() {
        text.push_str("Ambiguity detection and selective prediction (test split)\n");
        text.push_str(&text_table(&sel_h, &sel));
        text.push_str("\nRetrieval Recall@1 by candidate set size (test split)\n");
        text.push_str(&text_table(&ret_h, &ret));
    }
    if !th.is_empty() {
        if !text.is_empty() {
            text.push('\n');
        }
        text.push_str("Theory checks\n");
        text.push_str(&text_table(&th_h, &th));
    }

    let mut curves = String::from("run,threshold,coverage,risk\n");
    for (row, dir) in rows.iter().zip(dirs) {
        let path = dir.join(CURVE_FILE);
        if !path.exists() {
            continue;
        }
        let body = std::fs::read_to_string(&path).map_err(|e| groundvla::Error::io(&path, e))?;
        for line in body.lines().skip(1).filter(|l| !l.is_empty()) {
            let _ = writeln!(curves, "{},{line}", row.run);
        }
    }

    let json = serde_json::to_string_pretty(rows).map_err(groundvla::Error::from)?;
    Ok(Rendered {
        files: vec![
            ("report.txt", text),
            ("report.json", json),
            ("selective.csv", csv(&sel_h, &sel)),
            ("retrieval.csv", csv(&ret_h, &ret)),
            ("theory.csv", csv(&th_h, &th)),
            ("curves.csv", curves),
        ],
    })
}
