//! Mean prediction change under a raw-unit increment of covariate entries.

use std::io::Write;

use crate::error::{Result, StarError};
use crate::estimator::StarModel;
use crate::features::RawDataset;
use crate::tensor::{for_each_index, DenseTensor};

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityReport {
    /// Ways spanning the grid, in increasing order.
    pub ways: Vec<usize>,
    pub delta: f64,
    /// One cell per index combination along `ways`.
    pub values: DenseTensor,
}

impl SensitivityReport {
    /// Long-form CSV: `way<k>` index columns (0-based) then `value`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = self.ways.iter().map(|k| format!("way{}", k + 1)).collect();
        header.push("value".into());
        w.write_record(&header).map_err(csv_err)?;
        let mut rows = Vec::new();
        for_each_index(self.values.shape(), |lin, idx| {
            let mut rec: Vec<String> = idx.iter().map(|j| j.to_string()).collect();
            rec.push(self.values.data()[lin].to_string());
            rows.push(rec);
        });
        for r in rows {
            w.write_record(&r).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> StarError {
    StarError::Io(e.to_string())
}

/// For each index combination along `ways` (all ways when `None`), the mean
/// over `test` of `predict(X + δ·1_cell) − predict(X)`, where `1_cell` marks
/// every position whose indices along `ways` match the cell.
pub fn sensitivity(
    model: &StarModel,
    test: &RawDataset,
    delta: f64,
    ways: Option<&[usize]>,
) -> Result<SensitivityReport> {
    if !(delta != 0.0) || !delta.is_finite() {
        return Err(StarError::InvalidArgument("delta must be finite and nonzero".into()));
    }
    let shape = model.shape().to_vec();
    if test.shape() != shape.as_slice() {
        return Err(StarError::ShapeMismatch {
            expected: shape,
            got: test.shape().to_vec(),
        });
    }
    if test.n() == 0 {
        return Err(StarError::InvalidArgument("empty test set".into()));
    }
    let mut ways: Vec<usize> = match ways {
        Some(w) => w.to_vec(),
        None => (0..shape.len()).collect(),
    };
    ways.sort_unstable();
    ways.dedup();
    if ways.is_empty() || ways.iter().any(|&k| k >= shape.len()) {
        return Err(StarError::OutOfRange(format!("ways {ways:?} for {} ways", shape.len())));
    }
    let grid: Vec<usize> = ways.iter().map(|&k| shape[k]).collect();
    let cells: usize = grid.iter().product();
    let strides = crate::tensor::strides(&grid);

    // cell of every position
    let mut cell_of = vec![0usize; test.positions()];
    for_each_index(&shape, |pos, idx| {
        cell_of[pos] = ways.iter().zip(&strides).map(|(&k, s)| idx[k] * s).sum();
    });

    // the model is additive over entries, so a cell's change is the sum of
    // per-position changes
    let d = model.basis.count();
    let mut buf = vec![0.0; d];
    let mut sums = vec![0.0; cells];
    for i in 0..test.n() {
        for (pos, &v) in test.sample(i).iter().enumerate() {
            let change = model.entry_effect(pos, v + delta, &mut buf) - model.entry_effect(pos, v, &mut buf);
            sums[cell_of[pos]] += change;
        }
    }
    let n = test.n() as f64;
    let values = DenseTensor::new(grid, sums.into_iter().map(|s| s / n).collect())?;
    Ok(SensitivityReport {
        ways,
        delta,
        values,
    })
}

/// Reference implementation: two full predictions per sample and cell.
pub fn sensitivity_two_call(
    model: &StarModel,
    test: &RawDataset,
    delta: f64,
    ways: &[usize],
    cell: &[usize],
) -> Result<f64> {
    let shape = model.shape().to_vec();
    let mut total = 0.0;
    for i in 0..test.n() {
        let base = test.sample(i);
        let mut bumped = base.to_vec();
        for_each_index(&shape, |pos, idx| {
            if ways.iter().zip(cell).all(|(&k, &c)| idx[k] == c) {
                bumped[pos] += delta;
            }
        });
        total += model.predict_raw(&bumped)? - model.predict_raw(base)?;
    }
    Ok(total / test.n() as f64)
}
