//! Plain-text file formats.
//!
//! A dataset directory holds one headerless CSV per input model, named
//! `input_1.csv`, `input_2.csv`, ...; each line is one observation with
//! comma-separated components. Coefficient and weight files use one line per
//! input model with comma-separated values.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{InputDataset, ProbabilityWeights, Sample};
use crate::error::{Error, Result};
use crate::models::DagSpec;

pub fn input_file_name(model: usize) -> String {
    format!("input_{}.csv", model + 1)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn parse_row(path: &Path, line: usize, text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|field| {
            let field = field.trim();
            field.parse::<f64>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("'{field}' is not a number"),
            })
        })
        .collect()
}

/// Non-blank lines as numeric rows, with their 1-based line numbers.
fn parse_rows(path: &Path, text: &str) -> Result<Vec<(usize, Vec<f64>)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| Ok((i + 1, parse_row(path, i + 1, l)?)))
        .collect()
}

fn read_sample(path: &Path) -> Result<Sample> {
    let rows = parse_rows(path, &read(path)?)?;
    let dim = rows.first().map(|(_, r)| r.len()).unwrap_or(1);
    let mut values = Vec::with_capacity(rows.len() * dim);
    for (line, row) in rows {
        if row.len() != dim {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("{} components, expected {dim}", row.len()),
            });
        }
        values.extend(row);
    }
    Sample::new(dim, values)
}

/// Reads `input_1.csv ..= input_m.csv` from `dir`.
pub fn read_dataset_dir(dir: &Path, num_models: usize) -> Result<InputDataset> {
    let samples = (0..num_models)
        .map(|i| read_sample(&dir.join(input_file_name(i))))
        .collect::<Result<Vec<_>>>()?;
    InputDataset::new(samples)
}

/// Writes one CSV per input model. Values use the shortest representation
/// that parses back to the same `f64`.
pub fn write_dataset_dir(dir: &Path, dataset: &InputDataset) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    dataset
        .samples()
        .iter()
        .enumerate()
        .map(|(i, sample)| {
            let mut out = String::new();
            for obs in sample.iter() {
                write_row(&mut out, obs);
            }
            let path = dir.join(input_file_name(i));
            write(&path, &out)?;
            Ok(path)
        })
        .collect()
}

fn write_row(out: &mut String, row: &[f64]) {
    for (k, x) in row.iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        write!(out, "{x}").expect("writing to a String cannot fail");
    }
    out.push('\n');
}

/// One line of comma-separated coefficients per input model.
pub fn read_coefficients(path: &Path) -> Result<Vec<Vec<f64>>> {
    let rows: Vec<Vec<f64>> = parse_rows(path, &read(path)?)?
        .into_iter()
        .map(|(_, r)| r)
        .collect();
    if rows.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "no coefficients".into(),
        });
    }
    Ok(rows)
}

pub fn write_weights(path: &Path, weights: &ProbabilityWeights) -> Result<()> {
    let mut out = String::new();
    for row in weights.as_slices() {
        write_row(&mut out, row);
    }
    write(path, &out)
}

pub fn read_dag(path: &Path) -> Result<DagSpec> {
    DagSpec::parse(&read(path)?).map_err(|(line, message)| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    })
}
