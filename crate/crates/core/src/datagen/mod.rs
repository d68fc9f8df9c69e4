//! Training data: the causal covariate-shift generator, MNIST IDX loading,
//! and selection-bias sampling.

mod bias;
mod idx;
mod synthetic;

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

pub use bias::mnist_bias_sample;
pub use idx::{mnist_load_idx, write_idx_images, write_idx_labels};
pub use synthetic::{
    gen_synthetic, synthetic_dataset, true_posterior, SynthParams, CAUSE_DIM, EFFECT_DIM,
    FEATURE_DIM,
};

use crate::nn::Matrix;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: format error at byte offset {offset}: {msg}")]
    Format {
        path: String,
        offset: u64,
        msg: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Synthetic {
        labeled: SynthParams,
        unlabeled: SynthParams,
        test: SynthParams,
    },
    Mnist {
        low_frac: f64,
    },
}

/// Labeled, unlabeled and test splits.
///
/// `unlabeled_y` holds the hidden labels of the unlabeled set; only the
/// upper-bound baseline may read them. Test data follows the unlabeled-side
/// feature distribution.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub labeled_x: Matrix,
    pub labeled_y: Vec<usize>,
    pub unlabeled_x: Matrix,
    pub unlabeled_y: Vec<usize>,
    pub test_x: Matrix,
    pub test_y: Vec<usize>,
    pub num_classes: usize,
    pub provenance: Provenance,
    pub seed: u64,
}

impl Dataset {
    pub fn n_labeled(&self) -> usize {
        self.labeled_y.len()
    }

    pub fn n_unlabeled(&self) -> usize {
        self.unlabeled_x.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.labeled_x.cols().max(self.unlabeled_x.cols())
    }

    /// Writes `labeled.csv`, `unlabeled.csv`, `test.csv` and `meta.txt` into `dir`.
    ///
    /// Each CSV row is one sample: the features followed by the label, which is
    /// left empty for the unlabeled split.
    pub fn write_csv(&self, dir: &Path) -> Result<(), DataError> {
        std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
        write_split(&dir.join("labeled.csv"), &self.labeled_x, Some(&self.labeled_y))?;
        write_split(&dir.join("unlabeled.csv"), &self.unlabeled_x, None)?;
        write_split(&dir.join("test.csv"), &self.test_x, Some(&self.test_y))?;
        let meta = dir.join("meta.txt");
        std::fs::write(&meta, self.metadata()).map_err(|e| DataError::io(&meta, e))
    }

    /// Structured-text metadata: one `key=value` per line.
    pub fn metadata(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "n_labeled={}", self.n_labeled());
        let _ = writeln!(s, "m_unlabeled={}", self.n_unlabeled());
        let _ = writeln!(s, "n_test={}", self.test_y.len());
        let _ = writeln!(s, "num_classes={}", self.num_classes);
        let _ = writeln!(s, "feature_dim={}", self.feature_dim());
        match &self.provenance {
            Provenance::Synthetic { labeled, unlabeled, test } => {
                let _ = writeln!(s, "source=synthetic");
                for (tag, p) in [("labeled", labeled), ("unlabeled", unlabeled), ("test", test)] {
                    let _ = writeln!(s, "{tag}.a1={}", p.a1);
                    let _ = writeln!(s, "{tag}.s1={}", p.s1);
                    let _ = writeln!(s, "{tag}.a2={}", p.a2);
                    let _ = writeln!(s, "{tag}.s2={}", p.s2);
                }
            }
            Provenance::Mnist { low_frac } => {
                let _ = writeln!(s, "source=mnist");
                let _ = writeln!(s, "low_frac={low_frac}");
            }
        }
        s
    }
}

fn write_split(path: &Path, x: &Matrix, y: Option<&[usize]>) -> Result<(), DataError> {
    let f = std::fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    let mut line = String::new();
    for c in 0..x.cols() {
        let _ = write!(line, "x{c},");
    }
    line.push_str("label\n");
    for (r, row) in x.row_iter().enumerate() {
        for v in row {
            let _ = write!(line, "{v},");
        }
        if let Some(y) = y {
            let _ = write!(line, "{}", y[r]);
        }
        line.push('\n');
    }
    w.write_all(line.as_bytes()).map_err(|e| DataError::io(path, e))?;
    w.flush().map_err(|e| DataError::io(path, e))
}
