//! Dataset CSV reading and writing.
//!
//! A dataset file has a header row. One column holds the response, an optional
//! column assigns rows to batches, and every other column not listed in
//! `ignore` is a feature. Generated datasets use the layout
//! `batch, x0, .., x{p-1}, y, corrupted`.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use dspl::{BatchF64, MatrixF64, SynthDatasetF64};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: no column named `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: line {line}, column `{column}`: cannot parse `{value}` as a number")]
    Parse {
        path: PathBuf,
        line: u64,
        column: String,
        value: String,
    },
    #[error("{path}: line {line}, column `{column}`: non-finite value `{value}`")]
    NonFinite {
        path: PathBuf,
        line: u64,
        column: String,
        value: String,
    },
    #[error("{path}: line {line}: expected {expected} fields, found {found}")]
    RowLength {
        path: PathBuf,
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Dataset {
        path: PathBuf,
        source: dspl::DsplError,
    },
}

/// How rows are grouped into batches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Batching {
    /// Rows sharing a label form one batch; batches are ordered by first appearance.
    Column(String),
    /// Consecutive chunks of this many rows; the last may be shorter.
    Size(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadOptions {
    pub response: String,
    pub batching: Batching,
    /// Columns that are neither features nor response.
    pub ignore: Vec<String>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            response: "y".into(),
            batching: Batching::Column("batch".into()),
            ignore: vec!["corrupted".into()],
        }
    }
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

/// Reads a CSV dataset into batches.
pub fn load_csv_dataset(path: &Path, options: &LoadOptions) -> Result<Vec<BatchF64>, LoadError> {
    let file = File::open(path).map_err(|source| LoadError::Io {
        path: path.into(),
        source,
    })?;
    let csv_err = |source| LoadError::Csv {
        path: path.into(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = reader.headers().map_err(csv_err)?.clone();

    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| LoadError::MissingColumn {
                path: path.into(),
                column: name.into(),
            })
    };
    let response = find(&options.response)?;
    let batch_col = match &options.batching {
        Batching::Column(name) => Some(find(name)?),
        Batching::Size(0) => {
            return Err(LoadError::Invalid {
                path: path.into(),
                message: "batch size must be at least 1".into(),
            })
        }
        Batching::Size(_) => None,
    };
    let features: Vec<usize> = (0..header.len())
        .filter(|&c| c != response && Some(c) != batch_col)
        .filter(|&c| !options.ignore.iter().any(|i| i == &header[c]))
        .collect();
    if features.is_empty() {
        return Err(LoadError::Invalid {
            path: path.into(),
            message: "no feature columns".into(),
        });
    }

    let number = |record: &csv::StringRecord, c: usize| -> Result<f64, LoadError> {
        let raw = &record[c];
        let value: f64 = raw.parse().map_err(|_| LoadError::Parse {
            path: path.into(),
            line: line_of(record),
            column: header[c].into(),
            value: raw.into(),
        })?;
        if !value.is_finite() {
            return Err(LoadError::NonFinite {
                path: path.into(),
                line: line_of(record),
                column: header[c].into(),
                value: raw.into(),
            });
        }
        Ok(value)
    };

    // (label order, per-batch column-major features, per-batch responses)
    let mut order: HashMap<String, usize> = HashMap::new();
    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut ys: Vec<Vec<f64>> = Vec::new();
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record.map_err(|source| match source.kind() {
            csv::ErrorKind::UnequalLengths {
                pos,
                expected_len,
                len,
            } => LoadError::RowLength {
                path: path.into(),
                line: pos.as_ref().map_or(0, |p| p.line()),
                expected: *expected_len as usize,
                found: *len as usize,
            },
            _ => csv_err(source),
        })?;
        let slot = match (&options.batching, batch_col) {
            (_, Some(c)) => {
                let next = order.len();
                *order.entry(record[c].to_string()).or_insert(next)
            }
            (Batching::Size(size), None) => rows / size,
            (Batching::Column(_), None) => unreachable!(),
        };
        if slot == xs.len() {
            xs.push(Vec::new());
            ys.push(Vec::new());
        }
        for &c in &features {
            xs[slot].push(number(&record, c)?);
        }
        ys[slot].push(number(&record, response)?);
        rows += 1;
    }
    if rows == 0 {
        return Err(LoadError::Invalid {
            path: path.into(),
            message: "no data rows".into(),
        });
    }

    let p = features.len();
    xs.into_iter()
        .zip(ys)
        .enumerate()
        .map(|(id, (x, y))| {
            let n = y.len();
            MatrixF64::from_col_major(p, n, x)
                .and_then(|x| BatchF64::new(id, x, y))
                .map_err(|source| LoadError::Dataset {
                    path: path.into(),
                    source,
                })
        })
        .collect()
}

/// Full round-trip precision: 17 significant digits.
pub fn format_number(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a generated dataset as `batch, x0.., y, corrupted`.
pub fn write_dataset_csv(path: &Path, data: &SynthDatasetF64) -> anyhow::Result<()> {
    let p = data.w_star.len();
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["batch".to_string()];
    header.extend((0..p).map(|j| format!("x{j}")));
    header.extend(["y".to_string(), "corrupted".to_string()]);
    writer.write_record(&header)?;
    for (batch, mask) in data.batches.iter().zip(&data.corruption_mask) {
        for ((x, y), &bad) in batch.instances().zip(mask) {
            let mut row = vec![batch.id().to_string()];
            row.extend(x.iter().map(|v| format_number(*v)));
            row.push(format_number(y));
            row.push(u8::from(bad).to_string());
            writer.write_record(&row)?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Ground truth written next to a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub w_star: Vec<f64>,
    pub config: dspl::datagen::SynthConfig,
}

/// `data.csv` -> `data.truth.json`.
pub fn truth_path(dataset: &Path) -> PathBuf {
    dataset.with_extension("truth.json")
}

pub fn write_truth(path: &Path, truth: &Truth) -> anyhow::Result<()> {
    let mut file = File::create(path)?;
    serde_json::to_writer_pretty(&mut file, truth)?;
    writeln!(file)?;
    Ok(())
}

pub fn read_truth(path: &Path) -> anyhow::Result<Truth> {
    Ok(serde_json::from_reader(File::open(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, body: &str) -> PathBuf {
        let path = dir.path().join("d.csv");
        std::fs::write(&path, body).unwrap();
        path
    }

    #[test]
    fn chunks_by_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "a,b,y\n1,2,3\n4,5,6\n7,8,9\n10,11,12\n");
        let opts = LoadOptions {
            batching: Batching::Size(2),
            ..Default::default()
        };
        let batches = load_csv_dataset(&path, &opts).unwrap();
        assert_eq!(batches.len(), 2);
        assert_eq!(batches[0].n(), 2);
        assert_eq!(batches[1].x().col(1), &[10.0, 11.0]);
        assert_eq!(batches[1].y(), &[9.0, 12.0]);
    }

    #[test]
    fn groups_by_label_in_first_appearance_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "g,x,y\nb,1,1\na,2,2\nb,3,3\n");
        let opts = LoadOptions {
            batching: Batching::Column("g".into()),
            ..Default::default()
        };
        let batches = load_csv_dataset(&path, &opts).unwrap();
        assert_eq!(batches[0].y(), &[1.0, 3.0]);
        assert_eq!(batches[1].y(), &[2.0]);
        assert_eq!(batches[1].id(), 1);
    }

    #[test]
    fn missing_response_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "a,b\n1,2\n");
        let opts = LoadOptions {
            batching: Batching::Size(1),
            ..Default::default()
        };
        let err = load_csv_dataset(&path, &opts).unwrap_err();
        assert!(matches!(&err, LoadError::MissingColumn { column, .. } if column == "y"));
        assert!(err.to_string().contains("`y`"));
    }

    #[test]
    fn parse_and_finiteness_errors_carry_location() {
        let dir = tempfile::tempdir().unwrap();
        let opts = LoadOptions {
            batching: Batching::Size(4),
            ..Default::default()
        };
        let path = write(&dir, "a,y\n1,2\n3,oops\n");
        match load_csv_dataset(&path, &opts).unwrap_err() {
            LoadError::Parse {
                line,
                column,
                value,
                ..
            } => assert_eq!((line, column.as_str(), value.as_str()), (3, "y", "oops")),
            other => panic!("{other}"),
        }
        let path = write(&dir, "a,y\n1,2\nNaN,1\n");
        match load_csv_dataset(&path, &opts).unwrap_err() {
            LoadError::NonFinite { line, column, .. } => {
                assert_eq!((line, column.as_str()), (3, "a"))
            }
            other => panic!("{other}"),
        }
        let path = write(&dir, "a,y\n1,2\ninf,1\n");
        assert!(matches!(
            load_csv_dataset(&path, &opts),
            Err(LoadError::NonFinite { .. })
        ));
    }

    #[test]
    fn ragged_rows_and_empty_files() {
        let dir = tempfile::tempdir().unwrap();
        let opts = LoadOptions {
            batching: Batching::Size(4),
            ..Default::default()
        };
        let path = write(&dir, "a,y\n1,2\n3\n");
        assert!(matches!(
            load_csv_dataset(&path, &opts),
            Err(LoadError::RowLength { line: 3, .. })
        ));
        let path = write(&dir, "a,y\n");
        assert!(matches!(
            load_csv_dataset(&path, &opts),
            Err(LoadError::Invalid { .. })
        ));
        let size_zero = LoadOptions {
            batching: Batching::Size(0),
            ..Default::default()
        };
        assert!(load_csv_dataset(&path, &size_zero).is_err());
    }

    #[test]
    fn number_format_round_trips() {
        for v in [0.1, -1.0 / 3.0, 1e-300, f64::MAX, 5e-324] {
            assert_eq!(
                format_number(v).parse::<f64>().unwrap().to_bits(),
                v.to_bits()
            );
        }
    }
}
