//! Interpretability artifacts from a trained Ω: row-normalized Ω_n, the
//! class-class and layer-layer products, sparsity counts, and heatmap files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::OmegaMatrix;
use crate::numerics::Matrix;

/// Divides each row by its sum; all-zero rows stay zero.
pub fn row_normalize(omega: &OmegaMatrix) -> Matrix {
    let m = omega.as_matrix();
    let mut out = m.clone();
    for r in 0..m.rows() {
        let sum: f64 = m.row(r).iter().sum();
        if sum > 0.0 {
            out.row_mut(r).iter_mut().for_each(|v| *v /= sum);
        }
    }
    out
}

/// `(Ω_n Ω_nᵀ, Ω_nᵀ Ω_n)`: the d×d class-class and L×L layer-layer matrices.
pub fn importance_matrices(omega_n: &Matrix) -> (Matrix, Matrix) {
    let class_class = omega_n.matmul_t(omega_n).expect("same operand");
    let layer_layer = omega_n.t_matmul(omega_n).expect("same operand");
    (class_class, layer_layer)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sparsity {
    /// Fraction of entries that are exactly 0.0.
    pub raw: f64,
    /// `dead_layers[ℓ]` is true when no class uses layer ℓ.
    pub dead_layers: Vec<bool>,
}

pub fn sparsity(omega: &OmegaMatrix) -> Sparsity {
    let m = omega.as_matrix();
    Sparsity {
        raw: zero_fraction(m),
        dead_layers: (0..m.cols())
            .map(|l| m.column(l).iter().all(|&v| v == 0.0))
            .collect(),
    }
}

fn zero_fraction(m: &Matrix) -> f64 {
    let s = m.as_slice();
    if s.is_empty() {
        return 0.0;
    }
    s.iter().filter(|&&v| v == 0.0).count() as f64 / s.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub omega_n: Matrix,
    pub class_class: Matrix,
    pub layer_layer: Matrix,
    pub sparsity_raw: f64,
    pub sparsity_normalized: f64,
    pub dead_layers: Vec<bool>,
}

impl ImportanceReport {
    pub fn new(omega: &OmegaMatrix) -> Self {
        let omega_n = row_normalize(omega);
        let (class_class, layer_layer) = importance_matrices(&omega_n);
        let sp = sparsity(omega);
        ImportanceReport {
            sparsity_normalized: zero_fraction(&omega_n),
            omega_n,
            class_class,
            layer_layer,
            sparsity_raw: sp.raw,
            dead_layers: sp.dead_layers,
        }
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    /// Writes `lc.csv` (Ω_n), `cc.csv` and `ll.csv` into `dir`.
    pub fn write_heatmaps(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        emit_heatmap_csv(&self.omega_n, dir.join("lc.csv"))?;
        emit_heatmap_csv(&self.class_class, dir.join("cc.csv"))?;
        emit_heatmap_csv(&self.layer_layer, dir.join("ll.csv"))
    }
}

/// C's `%#.6g`: six significant digits, trailing zeros kept.
pub fn format_g6(v: f64) -> String {
    if v == 0.0 {
        return if v.is_sign_negative() { "-0.00000" } else { "0.00000" }.to_string();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp) as usize;
        if decimals == 0 {
            format!("{v:.0}.")
        } else {
            format!("{v:.decimals$}")
        }
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    }
}

/// Heatmap text: `col row value` per entry, one block per column, blocks
/// separated by a blank line.
pub fn heatmap_csv_string(m: &Matrix) -> String {
    let mut s = String::new();
    for c in 0..m.cols() {
        if c > 0 {
            s.push('\n');
        }
        for r in 0..m.rows() {
            writeln!(s, "{c} {r} {}", format_g6(m[(r, c)])).expect("string write");
        }
    }
    s
}

pub fn emit_heatmap_csv(m: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if !m.is_finite() {
        return Err(Error::Argument("heatmap matrix must be finite".into()));
    }
    fs::write(path, heatmap_csv_string(m)).map_err(|e| Error::io(path, e))
}

/// Reads a heatmap file back into a matrix.
pub fn parse_heatmap_csv(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = |detail: String| Error::format(path, format!("line {}", i + 1), detail);
        if fields.len() != 3 {
            return Err(bad(format!("expected 3 fields, found {}", fields.len())));
        }
        let c: usize = fields[0].parse().map_err(|e| bad(format!("column index: {e}")))?;
        let r: usize = fields[1].parse().map_err(|e| bad(format!("row index: {e}")))?;
        let v: f64 = fields[2].parse().map_err(|e| bad(format!("value: {e}")))?;
        entries.push((r, c, v));
    }
    let rows = entries.iter().map(|e| e.0 + 1).max().unwrap_or(0);
    let cols = entries.iter().map(|e| e.1 + 1).max().unwrap_or(0);
    if entries.len() != rows * cols {
        return Err(Error::format(path, "body", format!("{} entries for a {rows}x{cols} grid", entries.len())));
    }
    let mut m = Matrix::zeros(rows, cols);
    let mut seen = vec![false; rows * cols];
    for (r, c, v) in entries {
        if std::mem::replace(&mut seen[r * cols + c], true) {
            return Err(Error::format(path, "body", format!("duplicate entry ({c}, {r})")));
        }
        m[(r, c)] = v;
    }
    Ok(m)
}
