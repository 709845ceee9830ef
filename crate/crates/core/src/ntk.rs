//! Infinite-width kernels of the multi-readout MLP: per-depth NTK recursion,
//! Ω-composed kernels, and kernel ridge regression on them.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Activation, Architecture, OmegaMatrix, Parameterization};
use crate::numerics::{cholesky, dot, is_positive_semidefinite, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelHyper {
    pub sigma_w2: f64,
    pub sigma_b2: f64,
    pub sigma_v2: f64,
    pub activation: Activation,
}

impl Default for KernelHyper {
    fn default() -> Self {
        KernelHyper {
            sigma_w2: 2.0,
            sigma_b2: 0.01,
            sigma_v2: 1.0,
            activation: Activation::Relu,
        }
    }
}

impl KernelHyper {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_w2", self.sigma_w2),
            ("sigma_b2", self.sigma_b2),
            ("sigma_v2", self.sigma_v2),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Argument(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    /// Kernel hyperparameters matching an NTK-parameterized architecture.
    pub fn from_arch(arch: &Architecture) -> Result<Self> {
        match arch.parameterization {
            Parameterization::Ntk {
                sigma_w,
                sigma_b,
                sigma_v,
            } => Ok(KernelHyper {
                sigma_w2: sigma_w * sigma_w,
                sigma_b2: sigma_b * sigma_b,
                sigma_v2: sigma_v * sigma_v,
                activation: arch.activation,
            }),
            Parameterization::Standard => Err(Error::Argument(
                "analytic kernel needs the NTK parameterization".into(),
            )),
        }
    }
}

/// `(E[φ(u)φ(v)], E[φ′(u)φ′(v)])` for `(u, v) ~ N(0, [[l11, l12], [l12, l22]])`.
fn expectations(act: Activation, l11: f64, l12: f64, l22: f64) -> (f64, f64) {
    match act {
        Activation::Relu => {
            if l11 < 1e-300 || l22 < 1e-300 {
                return (0.0, 0.0);
            }
            let norm = (l11 * l22).sqrt();
            let cos = (l12 / norm).clamp(-1.0, 1.0);
            let gamma = cos.acos();
            let ee = norm / (2.0 * PI) * (gamma.sin() + (PI - gamma) * cos);
            let dd = (PI - gamma) / (2.0 * PI);
            (ee, dd)
        }
        Activation::Erf => {
            let a = 1.0 + 2.0 * l11;
            let b = 1.0 + 2.0 * l22;
            let ee = 2.0 / PI * (2.0 * l12 / (a * b).sqrt()).clamp(-1.0, 1.0).asin();
            let dd = 4.0 / PI / (a * b - 4.0 * l12 * l12).sqrt();
            (ee, dd)
        }
        Activation::Identity => (l12, 1.0),
    }
}

/// `Θ^(1..L)(x, x′)` and `K^(1..L)(x, x′)`; entry `ℓ-1` is depth `ℓ`.
pub fn ntk_pair(x: &[f64], x2: &[f64], hyper: &KernelHyper, depth: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.len() != x2.len() || x.is_empty() {
        return Err(Error::shape(
            "ntk_pair",
            format!("inputs have lengths {} and {}", x.len(), x2.len()),
        ));
    }
    if depth == 0 {
        return Err(Error::Argument("depth must be >= 1".into()));
    }
    if !x.iter().chain(x2).all(|v| v.is_finite()) {
        return Err(Error::Argument("non-finite kernel input".into()));
    }
    let m = x.len() as f64;
    let KernelHyper {
        sigma_w2: sw,
        sigma_b2: sb,
        sigma_v2: sv,
        activation: act,
    } = *hyper;
    // Σ^(1) on {x, x′}
    let mut s11 = sw * dot(x, x) / m + sb;
    let mut s22 = sw * dot(x2, x2) / m + sb;
    let mut s12 = sw * dot(x, x2) / m + sb;
    let mut pre = s12;
    let mut theta = Vec::with_capacity(depth);
    let mut nngp = Vec::with_capacity(depth);
    for l in 0..depth {
        if l > 0 {
            let (e12, d12) = expectations(act, s11, s12, s22);
            let (e11, _) = expectations(act, s11, s11, s11);
            let (e22, _) = expectations(act, s22, s22, s22);
            s12 = sw * e12 + sb;
            s11 = sw * e11 + sb;
            s22 = sw * e22 + sb;
            pre = s12 + sw * d12 * pre;
        }
        let (e, d) = expectations(act, s11, s12, s22);
        let k = sv * e;
        nngp.push(k);
        theta.push(k + sv * d * pre);
    }
    Ok((theta, nngp))
}

/// Per-depth analytic Gram matrices over a pair of point sets.
#[derive(Clone, Debug, PartialEq)]
pub struct GramStack {
    /// `grams[ℓ-1][(i, j)] = Θ^(ℓ)(X_i, X′_j)`.
    pub grams: Vec<Matrix>,
    /// Readout covariances `K^(ℓ)`, same layout.
    pub nngp: Vec<Matrix>,
}

impl GramStack {
    pub fn depth(&self) -> usize {
        self.grams.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.grams.first().map_or((0, 0), Matrix::shape)
    }

    /// Checks that every gram is PSD with eigenvalues ≥ −1e-8·trace/|X|.
    pub fn verify_psd(&self) -> Result<()> {
        let (r, c) = self.shape();
        if r != c {
            return Err(Error::shape("verify_psd", format!("gram is {r}x{c}")));
        }
        for (l, g) in self.grams.iter().enumerate() {
            let tol = (1e-8 * g.trace() / r as f64).max(f64::MIN_POSITIVE);
            if !is_positive_semidefinite(g, tol) {
                return Err(Error::Argument(format!("gram at depth {} is not PSD", l + 1)));
            }
        }
        Ok(())
    }

    /// Writes `gram_{ℓ}.csv` and `nngp_{ℓ}.csv` for each depth plus
    /// `manifest.json` into `dir`.
    pub fn export_csv(
        &self,
        dir: impl AsRef<Path>,
        hyper: &KernelHyper,
        row_hash: u64,
        col_hash: u64,
    ) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (rows, cols) = self.shape();
        let manifest = GramManifest {
            depth: self.depth(),
            rows,
            cols,
            hyper: *hyper,
            row_dataset_hash: format!("{row_hash:016x}"),
            col_dataset_hash: format!("{col_hash:016x}"),
        };
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
        for l in 0..self.depth() {
            for (stem, m) in [("gram", &self.grams[l]), ("nngp", &self.nngp[l])] {
                let path = dir.join(format!("{stem}_{}.csv", l + 1));
                fs::write(&path, matrix_to_csv(m)).map_err(|e| Error::io(&path, e))?;
            }
        }
        Ok(())
    }

    /// Reads a bundle written by [`GramStack::export_csv`].
    pub fn import_csv(dir: impl AsRef<Path>) -> Result<(GramStack, GramManifest)> {
        let dir = dir.as_ref();
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: GramManifest = serde_json::from_str(&text)
            .map_err(|e| Error::format(&path, format!("line {}", e.line()), e.to_string()))?;
        let mut grams = Vec::with_capacity(manifest.depth);
        let mut nngp = Vec::with_capacity(manifest.depth);
        for l in 0..manifest.depth {
            for (stem, out) in [("gram", &mut grams), ("nngp", &mut nngp)] {
                let path = dir.join(format!("{stem}_{}.csv", l + 1));
                let m = matrix_from_csv(&path)?;
                if m.shape() != (manifest.rows, manifest.cols) {
                    return Err(Error::format(
                        &path,
                        "shape",
                        format!("{}x{} but manifest says {}x{}", m.rows(), m.cols(), manifest.rows, manifest.cols),
                    ));
                }
                out.push(m);
            }
        }
        Ok((GramStack { grams, nngp }, manifest))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GramManifest {
    pub depth: usize,
    pub rows: usize,
    pub cols: usize,
    pub hyper: KernelHyper,
    pub row_dataset_hash: String,
    pub col_dataset_hash: String,
}

fn matrix_to_csv(m: &Matrix) -> String {
    let mut s = String::new();
    for r in 0..m.rows() {
        for (j, v) in m.row(r).iter().enumerate() {
            if j > 0 {
                s.push(',');
            }
            write!(s, "{v:?}").expect("string write");
        }
        s.push('\n');
    }
    s
}

fn matrix_from_csv(path: &Path) -> Result<Matrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let row = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(path, format!("line {}", i + 1), e.to_string()))?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::format(path, format!("line {}", i + 1), "ragged row"));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, 0));
    }
    Matrix::from_rows(&rows)
}

/// Entrywise [`ntk_pair`] over every `(X_i, X′_j)`.
pub fn ntk_gram(x: &Matrix, x2: &Matrix, hyper: &KernelHyper, depth: usize) -> Result<GramStack> {
    hyper.validate()?;
    if x.cols() != x2.cols() {
        return Err(Error::shape(
            "ntk_gram",
            format!("inputs have {} and {} features", x.cols(), x2.cols()),
        ));
    }
    let (r, c) = (x.rows(), x2.rows());
    let mut grams = vec![Matrix::zeros(r, c); depth];
    let mut nngp = vec![Matrix::zeros(r, c); depth];
    for i in 0..r {
        for j in 0..c {
            let (t, k) = ntk_pair(x.row(i), x2.row(j), hyper, depth)?;
            for l in 0..depth {
                grams[l][(i, j)] = t[l];
                nngp[l][(i, j)] = k[l];
            }
        }
    }
    Ok(GramStack { grams, nngp })
}

/// `K_c = Σ_ℓ Ω[c, ℓ]·Θ^(ℓ)`.
pub fn compose_kernel(stack: &GramStack, omega: &OmegaMatrix, class: usize) -> Result<Matrix> {
    if stack.depth() != omega.depth() {
        return Err(Error::shape(
            "compose_kernel",
            format!("stack depth {} but omega has {} layers", stack.depth(), omega.depth()),
        ));
    }
    if class >= omega.classes() {
        return Err(Error::Argument(format!(
            "class {class} out of range for {} classes",
            omega.classes()
        )));
    }
    let (r, c) = stack.shape();
    let mut k = Matrix::zeros(r, c);
    for (l, g) in stack.grams.iter().enumerate() {
        let w = omega.get(class, l);
        for (a, &b) in k.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *a += w * b;
        }
    }
    Ok(k)
}

#[derive(Clone, Debug, PartialEq)]
pub struct KrrModel {
    pub train_inputs: Matrix,
    /// Column `c` holds the dual coefficients of class `c`.
    pub alpha: Matrix,
    pub omega: OmegaMatrix,
    pub lambda: f64,
    pub hyper: KernelHyper,
}

/// Solves `(K_c + λI) α_c = Y[:, c]` for every class.
pub fn krr_fit(
    train_inputs: &Matrix,
    stack: &GramStack,
    omega: &OmegaMatrix,
    y: &Matrix,
    lambda: f64,
    hyper: &KernelHyper,
) -> Result<KrrModel> {
    let n = train_inputs.rows();
    if stack.shape() != (n, n) {
        return Err(Error::shape(
            "krr_fit",
            format!("stack is {:?}, expected {n}x{n}", stack.shape()),
        ));
    }
    if y.shape() != (n, omega.classes()) {
        return Err(Error::shape(
            "krr_fit",
            format!("labels are {}x{}, expected {n}x{}", y.rows(), y.cols(), omega.classes()),
        ));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Argument("lambda must be finite and >= 0".into()));
    }
    let d = omega.classes();
    let mut alpha = Matrix::zeros(n, d);
    for c in 0..d {
        let mut k = compose_kernel(stack, omega, c)?;
        for i in 0..n {
            k[(i, i)] += lambda;
        }
        let factor = cholesky(&k)?;
        let sol = factor.solve(&Matrix::column_vector(&y.column(c)))?;
        for i in 0..n {
            alpha[(i, c)] = sol[(i, 0)];
        }
    }
    Ok(KrrModel {
        train_inputs: train_inputs.clone(),
        alpha,
        omega: omega.clone(),
        lambda,
        hyper: *hyper,
    })
}

/// Predictions for every row of `x`.
pub fn krr_predict_batch(model: &KrrModel, x: &Matrix) -> Result<Matrix> {
    let stack = ntk_gram(x, &model.train_inputs, &model.hyper, model.omega.depth())?;
    krr_predict_from_cross(model, &stack)
}

/// Predictions from a precomputed cross stack `Θ^(ℓ)(x, X_train)`.
pub fn krr_predict_from_cross(model: &KrrModel, cross: &GramStack) -> Result<Matrix> {
    let n = model.train_inputs.rows();
    let (r, c) = cross.shape();
    if c != n {
        return Err(Error::shape("krr_predict", format!("cross stack has {c} columns, expected {n}")));
    }
    let d = model.omega.classes();
    let mut out = Matrix::zeros(r, d);
    for class in 0..d {
        let k = compose_kernel(cross, &model.omega, class)?;
        let a = model.alpha.column(class);
        for i in 0..r {
            out[(i, class)] = dot(k.row(i), &a);
        }
    }
    Ok(out)
}

pub fn krr_predict(model: &KrrModel, x: &[f64]) -> Result<Vec<f64>> {
    let xm = Matrix::from_vec(1, x.len(), x.to_vec())?;
    Ok(krr_predict_batch(model, &xm)?.row(0).to_vec())
}
