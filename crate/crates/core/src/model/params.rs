use serde::{Deserialize, Serialize};

use super::Architecture;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

/// The trainable tensors θ.
///
/// Weights are stored input-major: `weights[0]` is `input_dim × width` and
/// maps a row vector `x` to `x · W`. Readouts are `width × output_dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    pub readouts: Vec<Matrix>,
}

impl Theta {
    pub fn zeros(arch: &Architecture) -> Self {
        let n = arch.width;
        Theta {
            weights: (0..arch.depth)
                .map(|l| Matrix::zeros(arch.fan_in(l), n))
                .collect(),
            biases: vec![vec![0.0; n]; arch.depth],
            readouts: (0..arch.depth)
                .map(|_| Matrix::zeros(n, arch.output_dim))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Theta {
            weights: self
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            readouts: self
                .readouts
                .iter()
                .map(|v| Matrix::zeros(v.rows(), v.cols()))
                .collect(),
        }
    }

    pub fn check_shape(&self, arch: &Architecture) -> Result<()> {
        let ok = self.weights.len() == arch.depth
            && self.biases.len() == arch.depth
            && self.readouts.len() == arch.depth
            && self
                .weights
                .iter()
                .enumerate()
                .all(|(l, w)| w.shape() == (arch.fan_in(l), arch.width))
            && self.biases.iter().all(|b| b.len() == arch.width)
            && self
                .readouts
                .iter()
                .all(|v| v.shape() == (arch.width, arch.output_dim));
        if ok {
            Ok(())
        } else {
            Err(Error::shape(
                "Theta",
                "parameter tensors do not match the architecture",
            ))
        }
    }

    pub fn same_shape(&self, other: &Theta) -> bool {
        self.weights.len() == other.weights.len()
            && self.biases.len() == other.biases.len()
            && self.readouts.len() == other.readouts.len()
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| a.shape() == b.shape())
            && self
                .biases
                .iter()
                .zip(&other.biases)
                .all(|(a, b)| a.len() == b.len())
            && self
                .readouts
                .iter()
                .zip(&other.readouts)
                .all(|(a, b)| a.shape() == b.shape())
    }

    /// Visits every scalar in canonical order: per layer, W row-major, then
    /// b, then V row-major.
    pub fn for_each(&self, mut f: impl FnMut(f64)) {
        for l in 0..self.weights.len() {
            self.weights[l].as_slice().iter().for_each(|&v| f(v));
            self.biases[l].iter().for_each(|&v| f(v));
            self.readouts[l].as_slice().iter().for_each(|&v| f(v));
        }
    }

    /// Mutable slices of each tensor in canonical order.
    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(3 * self.weights.len());
        for ((w, b), v) in self
            .weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .zip(self.readouts.iter_mut())
        {
            out.push(w.as_mut_slice());
            out.push(b.as_mut_slice());
            out.push(v.as_mut_slice());
        }
        out
    }

    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(3 * self.weights.len());
        for l in 0..self.weights.len() {
            out.push(self.weights[l].as_slice());
            out.push(self.biases[l].as_slice());
            out.push(self.readouts[l].as_slice());
        }
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        self.for_each(|x| v.push(x));
        v
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn get(&self, mut index: usize) -> f64 {
        for block in self.blocks() {
            if index < block.len() {
                return block[index];
            }
            index -= block.len();
        }
        panic!("parameter index out of range");
    }

    pub fn get_mut(&mut self, mut index: usize) -> &mut f64 {
        for block in self.blocks_mut() {
            if index < block.len() {
                return &mut block[index];
            }
            index -= block.len();
        }
        panic!("parameter index out of range");
    }

    pub fn dot(&self, other: &Theta) -> f64 {
        let mut acc = 0.0;
        for (a, b) in self.blocks().into_iter().zip(other.blocks()) {
            for (x, y) in a.iter().zip(b) {
                acc += x * y;
            }
        }
        acc
    }

    /// Euclidean distance to `other`.
    pub fn distance(&self, other: &Theta) -> f64 {
        let mut acc = 0.0;
        for (a, b) in self.blocks().into_iter().zip(other.blocks()) {
            for (x, y) in a.iter().zip(b) {
                acc += (x - y) * (x - y);
            }
        }
        acc.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// θ together with the frozen initialization snapshot θ₀.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub theta: Theta,
    theta0: Theta,
}

impl ParamSet {
    /// Snapshots `theta` as θ₀.
    pub fn new(theta: Theta) -> Self {
        ParamSet {
            theta0: theta.clone(),
            theta,
        }
    }

    /// Restores a set whose θ has moved away from θ₀ (checkpoint loading).
    pub fn from_parts(theta: Theta, theta0: Theta) -> Result<Self> {
        if !theta.same_shape(&theta0) {
            return Err(Error::shape("ParamSet", "theta and theta0 shapes differ"));
        }
        Ok(ParamSet { theta, theta0 })
    }

    pub fn theta0(&self) -> &Theta {
        &self.theta0
    }

    /// Mutable θ alongside a shared borrow of θ₀.
    pub fn split_mut(&mut self) -> (&mut Theta, &Theta) {
        (&mut self.theta, &self.theta0)
    }
}

/// The `d × L` nonnegative layer-importance matrix; entry `(c, ℓ)` weights
/// layer ℓ's readout for output coordinate `c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix", into = "Matrix")]
pub struct OmegaMatrix {
    values: Matrix,
}

impl OmegaMatrix {
    pub fn new(values: Matrix) -> Result<Self> {
        if let Some(bad) = values
            .as_slice()
            .iter()
            .find(|v| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::Argument(format!(
                "omega entries must be finite and nonnegative, found {bad}"
            )));
        }
        Ok(OmegaMatrix { values })
    }

    /// Every entry `1/L`.
    pub fn uniform(classes: usize, depth: usize) -> Self {
        OmegaMatrix {
            values: Matrix::filled(classes, depth, 1.0 / depth as f64),
        }
    }

    pub fn filled(classes: usize, depth: usize, value: f64) -> Result<Self> {
        OmegaMatrix::new(Matrix::filled(classes, depth, value))
    }

    /// One for layer `layer` (0-based) in every row, zero elsewhere.
    pub fn one_hot_layer(classes: usize, depth: usize, layer: usize) -> Self {
        let mut values = Matrix::zeros(classes, depth);
        for c in 0..classes {
            values[(c, layer)] = 1.0;
        }
        OmegaMatrix { values }
    }

    pub fn classes(&self) -> usize {
        self.values.rows()
    }

    pub fn depth(&self) -> usize {
        self.values.cols()
    }

    #[inline]
    pub fn get(&self, class: usize, layer: usize) -> f64 {
        self.values[(class, layer)]
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.values
    }

    pub fn into_matrix(self) -> Matrix {
        self.values
    }

    pub(crate) fn check_shape(&self, arch: &Architecture) -> Result<()> {
        if self.values.shape() != (arch.output_dim, arch.depth) {
            return Err(Error::shape(
                "OmegaMatrix",
                format!(
                    "omega is {}x{}, architecture needs {}x{}",
                    self.values.rows(),
                    self.values.cols(),
                    arch.output_dim,
                    arch.depth
                ),
            ));
        }
        Ok(())
    }
}

impl TryFrom<Matrix> for OmegaMatrix {
    type Error = Error;

    fn try_from(m: Matrix) -> Result<Self> {
        OmegaMatrix::new(m)
    }
}

impl From<OmegaMatrix> for Matrix {
    fn from(o: OmegaMatrix) -> Matrix {
        o.values
    }
}

/// Parameter initialization schemes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// `N(0, 2/(fan_in + fan_out))` weights and readouts, zero biases.
    XavierNormal,
    /// Unit Gaussian weights, readouts and biases; the architecture's NTK
    /// parameterization supplies the `sigma` scales in the forward pass.
    /// With `sigma_b = 0` the biases are stored as exact zeros.
    NtkParam,
    /// Like `NtkParam`, but every weight matrix has orthogonal rows (or
    /// columns, for readouts) of squared norm `width`, so that the finite
    /// width kernel of a linear network equals its infinite-width limit.
    /// Needs `input_dim <= width` and `output_dim <= width`.
    NtkOrthogonal,
}

pub fn init_params(arch: &Architecture, rng: &mut Rng, scheme: InitScheme) -> Result<ParamSet> {
    arch.validate()?;
    let n = arch.width;
    let d = arch.output_dim;
    let mut theta = Theta::zeros(arch);
    let sigma_b = match (scheme, arch.parameterization) {
        (InitScheme::XavierNormal, _) => 0.0,
        (_, super::Parameterization::Ntk { sigma_b, .. }) => sigma_b,
        (_, super::Parameterization::Standard) => {
            return Err(Error::Argument(
                "NTK initialization needs an NTK-parameterized architecture".into(),
            ))
        }
    };
    if scheme == InitScheme::NtkOrthogonal && (arch.input_dim > n || d > n) {
        return Err(Error::Argument(
            "orthogonal initialization needs input_dim and output_dim <= width".into(),
        ));
    }
    for l in 0..arch.depth {
        let fan_in = arch.fan_in(l);
        match scheme {
            InitScheme::XavierNormal => {
                theta.weights[l] =
                    rng.normal_matrix(fan_in, n, (2.0 / (fan_in + n) as f64).sqrt());
                theta.readouts[l] = rng.normal_matrix(n, d, (2.0 / (n + d) as f64).sqrt());
            }
            InitScheme::NtkParam => {
                theta.weights[l] = rng.normal_matrix(fan_in, n, 1.0);
                theta.biases[l] = draw_bias(rng, n, sigma_b);
                theta.readouts[l] = rng.normal_matrix(n, d, 1.0);
            }
            InitScheme::NtkOrthogonal => {
                theta.weights[l] = scaled_orthonormal_rows(rng, fan_in, n);
                theta.biases[l] = draw_bias(rng, n, sigma_b);
                theta.readouts[l] = scaled_orthonormal_rows(rng, d, n).transpose();
            }
        }
    }
    Ok(ParamSet::new(theta))
}

fn draw_bias(rng: &mut Rng, n: usize, sigma_b: f64) -> Vec<f64> {
    let draw = rng.normal_matrix(1, n, 1.0).into_vec();
    if sigma_b == 0.0 {
        vec![0.0; n]
    } else {
        draw
    }
}

/// `rows × cols` (rows ≤ cols) with mutually orthogonal rows of norm
/// `sqrt(cols)`, by modified Gram–Schmidt on a Gaussian draw.
fn scaled_orthonormal_rows(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    let mut m = rng.normal_matrix(rows, cols, 1.0);
    let scale = (cols as f64).sqrt();
    for i in 0..rows {
        for j in 0..i {
            let proj = crate::numerics::dot(m.row(i), m.row(j)) / cols as f64;
            let (head, tail) = m.as_mut_slice().split_at_mut(i * cols);
            let prev = &head[j * cols..(j + 1) * cols];
            for (x, p) in tail[..cols].iter_mut().zip(prev) {
                *x -= proj * p;
            }
        }
        let norm = crate::numerics::dot(m.row(i), m.row(i)).sqrt();
        for x in m.row_mut(i) {
            *x *= scale / norm;
        }
    }
    m
}
