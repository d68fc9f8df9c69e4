//! Experiment orchestration: configuration, repeated training runs, and CSV
//! output.

mod config;
mod run;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub use config::{ExperimentKind, LambdaChoice, RunConfig};
pub use run::{
    audit_rows, cell_dataset, run, shift_test_sets, train_seed, write_outputs, AuditRow, RunOutput,
};

use crate::cssl::{CsslError, Mode};
use crate::datagen::DataError;
use crate::infobounds::InfoError;

#[derive(Debug, thiserror::Error)]
pub enum ExpError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("config line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Cssl(#[from] CsslError),
    #[error(transparent)]
    Info(#[from] InfoError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ExpError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ExpError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// One trained model scored on one test set.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: ExperimentKind,
    pub mode: Mode,
    /// `m` for unlabeled-count sweeps, the test-side `a1` for the shift table.
    pub x: f64,
    pub repeat: usize,
    /// Regenerates this row in isolation together with the config.
    pub seed: u64,
    pub accuracy: f64,
    /// Wall time of the training run; written to `timings.csv` only, so
    /// `results.csv` stays byte-reproducible.
    pub wall_secs: f64,
}

impl ResultRow {
    pub const CSV_HEADER: &'static str = "experiment,mode,x,repeat,seed,accuracy";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.experiment,
            self.mode.name(),
            self.x,
            self.repeat,
            self.seed,
            self.accuracy
        )
    }
}

/// Mean and population standard deviation over repeats of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub mode: Mode,
    pub x: f64,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

fn mode_rank(m: Mode) -> usize {
    Mode::ALL.iter().position(|&a| a == m).unwrap_or(usize::MAX)
}

/// Groups rows by `(mode, x)`, sorted by mode then ascending `x`.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut cells: BTreeMap<(usize, u64), (Mode, f64, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        // Order-preserving key for non-negative and negative floats alike.
        let bits = r.x.to_bits();
        let key = if r.x.is_sign_negative() { !bits } else { bits | (1 << 63) };
        cells
            .entry((mode_rank(r.mode), key))
            .or_insert_with(|| (r.mode, r.x, Vec::new()))
            .2
            .push(r.accuracy);
    }
    cells
        .into_values()
        .map(|(mode, x, acc)| {
            let k = acc.len() as f64;
            let mean = acc.iter().sum::<f64>() / k;
            let var = acc.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / k;
            SummaryRow {
                mode,
                x,
                mean,
                std: var.sqrt(),
                count: acc.len(),
            }
        })
        .collect()
}

/// Fixed 12-decimal rendering with trailing zeros removed. Means of binary
/// fractions pick up last-bit noise (`(0.8 + 0.9)/2 = 0.8500000000000001`);
/// summaries are reported at a precision far below any accuracy difference.
pub fn fmt_stat(v: f64) -> String {
    let s = format!("{v:.12}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

pub fn summary_csv(summary: &[SummaryRow]) -> String {
    let mut s = String::from("mode,x,mean,std,count\n");
    for r in summary {
        let _ = writeln!(s, "{},{},{},{},{}", r.mode.name(), r.x, fmt_stat(r.mean), fmt_stat(r.std), r.count);
    }
    s
}

/// Writes `plot_<mode>.csv` (`x,y,yerr`, ascending `x`) for every mode and
/// returns the paths. Modes without rows get a header-only file.
pub fn emit_plotdata(rows: &[ResultRow], dir: &Path) -> Result<Vec<PathBuf>, ExpError> {
    std::fs::create_dir_all(dir).map_err(|e| ExpError::io(dir, e))?;
    let summary = summarize(rows);
    let mut paths = Vec::new();
    for mode in Mode::ALL {
        let mut s = String::from("x,y,yerr\n");
        for r in summary.iter().filter(|r| r.mode == mode) {
            let _ = writeln!(s, "{},{},{}", r.x, fmt_stat(r.mean), fmt_stat(r.std));
        }
        let path = dir.join(format!("plot_{}.csv", mode.name()));
        std::fs::write(&path, s).map_err(|e| ExpError::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(mode: Mode, x: f64, repeat: usize, accuracy: f64) -> ResultRow {
        ResultRow {
            experiment: ExperimentKind::Custom,
            mode,
            x,
            repeat,
            seed: 0,
            accuracy,
            wall_secs: 0.0,
        }
    }

    #[test]
    fn summary_statistics() {
        let rows = vec![
            row(Mode::Cssl, 600.0, 0, 0.8),
            row(Mode::Cssl, 300.0, 0, 0.5),
            row(Mode::Cssl, 600.0, 1, 0.9),
            row(Mode::Lower, 300.0, 0, 0.25),
        ];
        let s = summarize(&rows);
        assert_eq!(s.len(), 3);
        assert_eq!((s[0].mode, s[0].x, s[0].mean, s[0].std), (Mode::Lower, 300.0, 0.25, 0.0));
        assert_eq!((s[1].x, s[2].x), (300.0, 600.0));
        assert_eq!(fmt_stat(s[2].mean), "0.85");
        assert!((s[2].std - 0.05).abs() < 1e-15);
        assert_eq!(s[2].count, 2);
    }

    #[test]
    fn plot_files() {
        let dir = tempfile::tempdir().unwrap();
        let empty = emit_plotdata(&[], dir.path()).unwrap();
        assert_eq!(empty.len(), Mode::ALL.len());
        for p in &empty {
            assert_eq!(std::fs::read_to_string(p).unwrap(), "x,y,yerr\n");
        }
        let rows = vec![
            row(Mode::Em, 6000.0, 0, 0.8),
            row(Mode::Em, 300.0, 0, 0.9),
            row(Mode::Em, 300.0, 1, 0.8),
        ];
        emit_plotdata(&rows, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("plot_EM.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1], "300,0.85,0.05");
        assert_eq!(lines[2], "6000,0.8,0");
    }

    #[test]
    fn stat_formatting() {
        assert_eq!(fmt_stat(0.8500000000000001), "0.85");
        assert_eq!(fmt_stat(1.0), "1");
        assert_eq!(fmt_stat(0.0), "0");
        assert_eq!(fmt_stat(0.123456789012345), "0.123456789012");
    }

    #[test]
    fn csv_row_format() {
        let r = ResultRow {
            seed: 42,
            ..row(Mode::Upper, 0.4, 3, 0.975)
        };
        assert_eq!(r.csv(), "custom,Upper,0.4,3,42,0.975");
        assert_eq!(ResultRow::CSV_HEADER.split(',').count(), r.csv().split(',').count());
    }
}
