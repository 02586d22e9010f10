//! Dataset CSV and model files.
//!
//! Dataset CSV: the first row is `m,p_1,...,p_m`; every further row is
//! `y,x_1,...,x_P` with the covariate in row-major order. Values are written
//! in shortest round-trip form.
//!
//! Model files are TOML with a `format` tag.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, StarError};
use crate::estimator::StarModel;
use crate::features::{EntryScaler, FeatureBasis, RawDataset};
use crate::spline::BasisSpec;
use crate::tensor::CpFactorBundle;

pub const MODEL_FORMAT: &str = "star-model/1";

fn csv_err(e: csv::Error) -> StarError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    StarError::Parse {
        line,
        message: e.to_string(),
    }
}

pub fn write_dataset<W: Write>(data: &RawDataset, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    let mut header = vec![data.shape().len().to_string()];
    header.extend(data.shape().iter().map(|p| p.to_string()));
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..data.n() {
        let mut rec = Vec::with_capacity(1 + data.positions());
        rec.push(data.y()[i].to_string());
        rec.extend(data.sample(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(input: R) -> Result<RawDataset> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut records = r.records();
    let header = records
        .next()
        .ok_or_else(|| StarError::Parse {
            line: 1,
            message: "missing header row".into(),
        })?
        .map_err(csv_err)?;
    let parse_usize = |s: &str, line: usize| {
        s.parse::<usize>().map_err(|_| StarError::Parse {
            line,
            message: format!("expected a positive integer, got '{s}'"),
        })
    };
    let m = parse_usize(&header[0], 1)?;
    if m == 0 || header.len() != m + 1 {
        return Err(StarError::Parse {
            line: 1,
            message: format!("header must be m followed by m dimensions, got {} fields", header.len()),
        });
    }
    let shape: Vec<usize> = (1..=m)
        .map(|k| parse_usize(&header[k], 1))
        .collect::<Result<_>>()?;
    if shape.contains(&0) {
        return Err(StarError::Parse {
            line: 1,
            message: "dimensions must be positive".into(),
        });
    }
    let p: usize = shape.iter().product();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (row, rec) in records.enumerate() {
        let line = row + 2;
        let rec = rec.map_err(csv_err)?;
        if rec.len() != p + 1 {
            return Err(StarError::Parse {
                line,
                message: format!("expected {} fields, got {}", p + 1, rec.len()),
            });
        }
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| StarError::Parse {
                line,
                message: format!("not a number: '{field}'"),
            })?;
            if !v.is_finite() {
                return Err(StarError::Parse {
                    line,
                    message: format!("non-finite value '{field}'"),
                });
            }
            if c == 0 {
                y.push(v);
            } else {
                x.push(v);
            }
        }
    }
    RawDataset::new(shape, x, y)
}

pub fn save_dataset(data: &RawDataset, path: &Path) -> Result<()> {
    write_dataset(data, File::create(path)?)
}

pub fn load_dataset(path: &Path) -> Result<RawDataset> {
    read_dataset(File::open(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    shape: Vec<usize>,
    rank: usize,
    basis_count: usize,
    intercept: f64,
    lambda: f64,
    basis: BasisSpec,
    scaler: EntryScaler,
    /// `factors[k][((j·R + r)·d_n) + h]`
    factors: Vec<Vec<f64>>,
}

pub fn model_to_string(model: &StarModel) -> Result<String> {
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        shape: model.shape().to_vec(),
        rank: model.bundle.rank(),
        basis_count: model.bundle.basis_count(),
        intercept: model.intercept,
        lambda: model.lambda,
        basis: model.basis.spec(),
        scaler: model.scaler.clone(),
        factors: model.bundle.factors().to_vec(),
    };
    toml::to_string(&file).map_err(|e| StarError::Io(e.to_string()))
}

pub fn model_from_str(text: &str) -> Result<StarModel> {
    let file: ModelFile = toml::from_str(text).map_err(|e| StarError::Parse {
        line: 0,
        message: e.to_string(),
    })?;
    if file.format != MODEL_FORMAT {
        return Err(StarError::Parse {
            line: 0,
            message: format!("unsupported model format '{}'", file.format),
        });
    }
    let bundle = CpFactorBundle::new(file.shape, file.rank, file.basis_count, file.factors)?;
    let basis = FeatureBasis::from_spec(&file.basis)?;
    StarModel::new(basis, file.scaler, file.intercept, bundle, file.lambda)
}

pub fn save_model(model: &StarModel, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_string(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<StarModel> {
    model_from_str(&std::fs::read_to_string(path)?)
}
