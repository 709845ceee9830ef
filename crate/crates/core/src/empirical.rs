//! Finite-width tangent kernels and their comparison with the analytic
//! limits: per-layer-pair Jacobian blocks, width sweeps, and a check that a
//! wide network trained by gradient descent tracks kernel ridge regression.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{
    assemble_theta_grad, backprop_deltas, backward, hidden_pass, init_params, predict,
    Activation, Architecture, InitScheme, OmegaMatrix, ParamSet, Parameterization, Theta,
};
use crate::ntk::{compose_kernel, krr_fit, krr_predict_batch, ntk_gram, KernelHyper};
use crate::numerics::{Matrix, Rng};
use crate::trainer::{theta_step, RegMode, Schedule, TrainConfig};

/// `blocks[ℓ][ℓ′][(i, j)] = ⟨∇_θ f^(ℓ)_c(X_i), ∇_θ f^(ℓ′)_c(X_j)⟩`.
///
/// The parameter Jacobians are never materialized: for a weight matrix the
/// Jacobian is an outer product of the layer input and the preactivation
/// delta, so its inner products factor into two small Gram matrices.
pub fn empirical_blocks(theta: &Theta, arch: &Architecture, x: &Matrix, class: usize) -> Result<Vec<Vec<Matrix>>> {
    if class >= arch.output_dim {
        return Err(Error::Argument(format!("class {class} out of range")));
    }
    let trace = hidden_pass(theta, arch, x)?;
    let depth = arch.depth;
    let batch = x.rows();
    let bias2 = arch.bias_scale().powi(2);
    let readout2 = arch.readout_scale().powi(2);

    // weight-gradient input Grams, scaled by the forward weight scale
    let input_grams: Vec<Matrix> = (0..depth)
        .map(|k| {
            let input = if k == 0 { &trace.inputs } else { &trace.activations[k - 1] };
            input.matmul_t(input).expect("same operand").scale(arch.weight_scale(k).powi(2))
        })
        .collect();
    let act_grams: Vec<Matrix> = trace
        .activations
        .iter()
        .map(|h| h.matmul_t(h).expect("same operand").scale(readout2))
        .collect();

    let mut one_hot = Matrix::zeros(batch, arch.output_dim);
    for i in 0..batch {
        one_hot[(i, class)] = 1.0;
    }
    let zero = Matrix::zeros(batch, arch.output_dim);
    let deltas: Vec<Vec<Matrix>> = (0..depth)
        .map(|l| {
            let upstream: Vec<Matrix> = (0..depth)
                .map(|k| if k == l { one_hot.clone() } else { zero.clone() })
                .collect();
            backprop_deltas(theta, arch, &trace, &upstream).preact
        })
        .collect();

    let mut blocks = vec![vec![Matrix::zeros(batch, batch); depth]; depth];
    for l in 0..depth {
        for l2 in l..depth {
            let mut t = if l == l2 { act_grams[l].clone() } else { Matrix::zeros(batch, batch) };
            // layers above min(ℓ, ℓ′) receive no gradient from the shallower readout
            for k in 0..=l.min(l2) {
                let dd = deltas[l][k].matmul_t(&deltas[l2][k])?;
                let g = &input_grams[k];
                for ((tv, &dv), &gv) in t.as_mut_slice().iter_mut().zip(dd.as_slice()).zip(g.as_slice()) {
                    *tv += gv * dv + bias2 * dv;
                }
            }
            if l != l2 {
                blocks[l2][l] = t.transpose();
            }
            blocks[l][l2] = t;
        }
    }
    Ok(blocks)
}

/// `Σ_ℓ Ω[c, ℓ]·T[ℓ, ℓ]`.
pub fn diagonal_composed(blocks: &[Vec<Matrix>], omega: &OmegaMatrix, class: usize) -> Matrix {
    let (r, c) = blocks[0][0].shape();
    let mut k = Matrix::zeros(r, c);
    for (l, row) in blocks.iter().enumerate() {
        let w = omega.get(class, l);
        k.as_mut_slice().iter_mut().zip(row[l].as_slice()).for_each(|(a, b)| *a += w * b);
    }
    k
}

/// `Σ_{ℓ,ℓ′} Ω[c, ℓ]·Ω[c, ℓ′]·T[ℓ, ℓ′]`: the tangent kernel of `f_c` itself.
pub fn full_composed(blocks: &[Vec<Matrix>], omega: &OmegaMatrix, class: usize) -> Matrix {
    let (r, c) = blocks[0][0].shape();
    let mut k = Matrix::zeros(r, c);
    for (l, row) in blocks.iter().enumerate() {
        for (l2, b) in row.iter().enumerate() {
            let w = omega.get(class, l) * omega.get(class, l2);
            k.as_mut_slice().iter_mut().zip(b.as_slice()).for_each(|(a, v)| *a += w * v);
        }
    }
    k
}

/// Largest `‖T[ℓ,ℓ′]‖_F / sqrt(‖T[ℓ,ℓ]‖_F·‖T[ℓ′,ℓ′]‖_F)` over `ℓ ≠ ℓ′`; 0 for one layer.
pub fn max_cross_block_ratio(blocks: &[Vec<Matrix>]) -> f64 {
    let mut worst = 0.0f64;
    for l in 0..blocks.len() {
        for l2 in 0..blocks.len() {
            if l == l2 {
                continue;
            }
            let denom = (blocks[l][l].frobenius_norm() * blocks[l2][l2].frobenius_norm()).sqrt();
            if denom > 0.0 {
                worst = worst.max(blocks[l][l2].frobenius_norm() / denom);
            }
        }
    }
    worst
}

/// Exact Jacobian of `f^(ℓ)_c(x)` with respect to θ, by backpropagating a
/// one-hot upstream gradient.
pub fn explicit_jacobian(theta: &Theta, arch: &Architecture, x: &[f64], layer: usize, class: usize) -> Result<Theta> {
    if layer >= arch.depth || class >= arch.output_dim {
        return Err(Error::Argument(format!("layer {layer} / class {class} out of range")));
    }
    let xm = Matrix::from_vec(1, x.len(), x.to_vec())?;
    let trace = hidden_pass(theta, arch, &xm)?;
    let upstream: Vec<Matrix> = (0..arch.depth)
        .map(|k| {
            let mut u = Matrix::zeros(1, arch.output_dim);
            if k == layer {
                u[(0, class)] = 1.0;
            }
            u
        })
        .collect();
    let deltas = backprop_deltas(theta, arch, &trace, &upstream);
    Ok(assemble_theta_grad(arch, &trace, &deltas, &upstream))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalKernelReport {
    pub width: usize,
    pub class: usize,
    /// L×L matrix of `T[ℓ, ℓ′](x, x′)`.
    pub blocks: Matrix,
    /// `⟨∇_θ f_c(x), ∇_θ f_c(x′)⟩`.
    pub full: f64,
    /// `Σ_ℓ Ω[c, ℓ]·T[ℓ, ℓ](x, x′)`.
    pub diagonal: f64,
    /// `Σ_ℓ Ω[c, ℓ]·Θ^(ℓ)(x, x′)`; absent under the standard parameterization.
    pub reference: Option<f64>,
    pub rel_err_diagonal: Option<f64>,
    pub rel_err_full: Option<f64>,
}

pub fn empirical_ntk(
    params: &ParamSet,
    arch: &Architecture,
    omega: &OmegaMatrix,
    x: &[f64],
    x2: &[f64],
    class: usize,
) -> Result<EmpiricalKernelReport> {
    if x.len() != x2.len() {
        return Err(Error::shape("empirical_ntk", "inputs differ in length"));
    }
    let pts = Matrix::from_rows(&[x, x2])?;
    let all = empirical_blocks(&params.theta, arch, &pts, class)?;
    let depth = arch.depth;
    let mut blocks = Matrix::zeros(depth, depth);
    for l in 0..depth {
        for l2 in 0..depth {
            blocks[(l, l2)] = all[l][l2][(0, 1)];
        }
    }
    let full = full_composed(&all, omega, class)[(0, 1)];
    let diagonal = diagonal_composed(&all, omega, class)[(0, 1)];
    let reference = match arch.parameterization {
        Parameterization::Ntk { .. } => {
            let hyper = KernelHyper::from_arch(arch)?;
            let stack = ntk_gram(&pts, &pts, &hyper, depth)?;
            Some(compose_kernel(&stack, omega, class)?[(0, 1)])
        }
        Parameterization::Standard => None,
    };
    let rel = |v: f64| reference.map(|r| (v - r).abs() / r.abs().max(f64::MIN_POSITIVE));
    Ok(EmpiricalKernelReport {
        width: arch.width,
        class,
        blocks,
        full,
        diagonal,
        reference,
        rel_err_diagonal: rel(diagonal),
        rel_err_full: rel(full),
    })
}

/// Fixed probe inputs for kernel sweeps: Gaussian draws rescaled to
/// `‖x‖² = m`.
pub fn sphere_points(rng: &mut Rng, count: usize, dim: usize) -> Matrix {
    let mut x = rng.normal_matrix(count, dim, 1.0);
    for r in 0..count {
        let row = x.row_mut(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let s = (dim as f64).sqrt() / norm;
        row.iter_mut().for_each(|v| *v *= s);
    }
    x
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WidthSweepConfig {
    pub widths: Vec<usize>,
    pub seeds: usize,
    pub depth: usize,
    pub input_dim: usize,
    pub points: usize,
    pub class: usize,
    pub output_dim: usize,
    pub hyper: KernelHyper,
    pub init: InitScheme,
    /// Seeds the fixed inputs; replica `s` initializes from `seed + s`.
    pub seed: u64,
}

impl Default for WidthSweepConfig {
    fn default() -> Self {
        WidthSweepConfig {
            widths: vec![64, 256, 1024],
            seeds: 20,
            depth: 3,
            input_dim: 4,
            points: 8,
            class: 0,
            output_dim: 1,
            hyper: KernelHyper::default(),
            init: InitScheme::NtkParam,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WidthSweepRow {
    pub width: usize,
    pub seed: u64,
    pub rel_frobenius_err: f64,
    pub max_cross_block_ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WidthSummary {
    pub width: usize,
    /// Median over replicas of the per-replica relative error.
    pub median_err: f64,
    /// Relative error of the replica-averaged kernel.
    pub mean_kernel_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WidthSweepReport {
    pub rows: Vec<WidthSweepRow>,
    pub summaries: Vec<WidthSummary>,
}

impl WidthSweepReport {
    pub const CSV_HEADER: &'static str = "width,seed,rel_frobenius_err,max_cross_block_ratio";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            writeln!(s, "{},{},{},{}", r.width, r.seed, r.rel_frobenius_err, r.max_cross_block_ratio)
                .expect("string write");
        }
        s
    }

    /// Whether the median error strictly decreases along the sweep; `None`
    /// with fewer than two widths.
    pub fn monotone(&self) -> Option<bool> {
        if self.summaries.len() < 2 {
            return None;
        }
        Some(self.summaries.windows(2).all(|w| w[1].median_err < w[0].median_err))
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn rel_frobenius(a: &Matrix, reference: &Matrix) -> f64 {
    a.sub(reference).expect("same shape").frobenius_norm() / reference.frobenius_norm()
}

/// Empirical diagonal-block kernel against the analytic composed kernel
/// across widths, under uniform Ω.
pub fn width_sweep(cfg: &WidthSweepConfig) -> Result<WidthSweepReport> {
    cfg.hyper.validate()?;
    if cfg.seeds == 0 || cfg.widths.is_empty() {
        return Err(Error::Argument("width sweep needs widths and seeds".into()));
    }
    let x = sphere_points(&mut Rng::new(cfg.seed), cfg.points, cfg.input_dim);
    let omega = OmegaMatrix::uniform(cfg.output_dim, cfg.depth);
    let stack = ntk_gram(&x, &x, &cfg.hyper, cfg.depth)?;
    let reference = compose_kernel(&stack, &omega, cfg.class)?;
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for &width in &cfg.widths {
        let arch = Architecture::ntk(
            cfg.input_dim,
            width,
            cfg.depth,
            cfg.output_dim,
            cfg.hyper.activation,
            cfg.hyper.sigma_w2.sqrt(),
            cfg.hyper.sigma_b2.sqrt(),
            cfg.hyper.sigma_v2.sqrt(),
        );
        let mut errs = Vec::with_capacity(cfg.seeds);
        let mut mean = Matrix::zeros(cfg.points, cfg.points);
        for s in 0..cfg.seeds as u64 {
            let seed = cfg.seed.wrapping_add(s);
            let params = init_params(&arch, &mut Rng::new(seed), cfg.init)?;
            let blocks = empirical_blocks(&params.theta, &arch, &x, cfg.class)?;
            let k = diagonal_composed(&blocks, &omega, cfg.class);
            let err = rel_frobenius(&k, &reference);
            errs.push(err);
            mean = mean.add(&k)?;
            rows.push(WidthSweepRow {
                width,
                seed,
                rel_frobenius_err: err,
                max_cross_block_ratio: max_cross_block_ratio(&blocks),
            });
        }
        let mean = mean.scale(1.0 / cfg.seeds as f64);
        summaries.push(WidthSummary {
            width,
            median_err: median(&errs),
            mean_kernel_err: rel_frobenius(&mean, &reference),
        });
    }
    Ok(WidthSweepReport { rows, summaries })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinCheckConfig {
    pub lambda: f64,
    pub eta: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for LinCheckConfig {
    fn default() -> Self {
        LinCheckConfig {
            lambda: 0.1,
            eta: 1e-2,
            steps: 2000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinCheckReport {
    pub width: usize,
    pub seed: u64,
    /// `max |(f_net − f_init) − f_krr|` over probes and classes.
    pub probe_discrepancy: f64,
    pub label_rms: f64,
    pub net_centered: Matrix,
    pub krr: Matrix,
}

/// Full-batch gradient descent with Ω fixed to all ones and the ridge pulled
/// toward θ₀, compared with kernel ridge regression on the residual labels
/// `Y − f_init(X)`.
///
/// The loss is `(1/N)Σ‖f − y‖²` and the ridge gradient `λ(θ − θ₀)`, so the
/// linearized fixed point is kernel ridge regression with ridge `N·λ/2`.
/// With every ω equal to one, the composed kernel of the limit is the plain
/// sum of the per-depth kernels.
pub fn lin_training_check(
    arch: &Architecture,
    data: &Dataset,
    probes: &Matrix,
    cfg: &LinCheckConfig,
) -> Result<LinCheckReport> {
    let hyper = KernelHyper::from_arch(arch)?;
    if data.is_empty() || data.len() > 32 {
        return Err(Error::Argument("linearization check needs 1 to 32 training points".into()));
    }
    let omega = OmegaMatrix::filled(arch.output_dim, arch.depth, 1.0)?;
    let tcfg = TrainConfig {
        eta_theta: cfg.eta,
        lambda: cfg.lambda,
        reg_mode: RegMode::ToInit,
        batch_size: data.len(),
        epochs: cfg.steps,
        schedule: Schedule::Simultaneous,
        seed: cfg.seed,
        init: InitScheme::NtkParam,
        ..TrainConfig::default()
    };
    let mut params = init_params(arch, &mut Rng::new(cfg.seed), InitScheme::NtkParam)?;
    let x = data.inputs();
    let y = data.labels_onehot();
    let f_init_train = predict(&params.theta, arch, &omega, x)?;
    let f_init_probe = predict(&params.theta, arch, &omega, probes)?;
    for step in 0..cfg.steps {
        let g = backward(&params.theta, arch, &omega, x, y)?;
        if !g.loss.is_finite() {
            return Err(Error::Divergence {
                epoch: step,
                batch: 0,
                loss: g.loss,
            });
        }
        theta_step(&mut params, &g.theta, &tcfg)?;
    }
    let net_centered = predict(&params.theta, arch, &omega, probes)?.sub(&f_init_probe)?;

    let residual = y.sub(&f_init_train)?;
    let stack = ntk_gram(x, x, &hyper, arch.depth)?;
    let ridge = data.len() as f64 * cfg.lambda / 2.0;
    let model = krr_fit(x, &stack, &omega, &residual, ridge, &hyper)?;
    let krr = krr_predict_batch(&model, probes)?;
    let probe_discrepancy = net_centered.sub(&krr)?.max_abs();
    let label_rms = (y.as_slice().iter().map(|v| v * v).sum::<f64>() / y.as_slice().len() as f64).sqrt();
    Ok(LinCheckReport {
        width: arch.width,
        seed: cfg.seed,
        probe_discrepancy,
        label_rms,
        net_centered,
        krr,
    })
}

/// `count` points evenly spaced on the circle `‖x‖² = 2`, starting at angle
/// `2π·offset/count`.
pub fn ring_points(count: usize, offset: f64) -> Matrix {
    let r = 2f64.sqrt();
    let mut x = Matrix::zeros(count, 2);
    for k in 0..count {
        let a = 2.0 * std::f64::consts::PI * (k as f64 + offset) / count as f64;
        x[(k, 0)] = r * a.cos();
        x[(k, 1)] = r * a.sin();
    }
    x
}

/// The linearization fixture: 8 ring points in two classes of alternating
/// quarter-arcs, and 16 probes on the same ring interleaved with them.
pub fn lin_fixture() -> (Dataset, Matrix) {
    let x = ring_points(8, 0.0);
    let classes: Vec<usize> = (0..8).map(|k| (k / 2) % 2).collect();
    let data = Dataset::from_class_indices(x, &classes, vec!["arc0".into(), "arc1".into()])
        .expect("valid fixture");
    (data, ring_points(16, 0.5))
}

pub const LIN_CSV_HEADER: &str = "width,seed,probe_discrepancy";

pub fn lin_reports_csv(reports: &[LinCheckReport]) -> String {
    let mut s = format!("{LIN_CSV_HEADER}\n");
    for r in reports {
        writeln!(s, "{},{},{}", r.width, r.seed, r.probe_discrepancy).expect("string write");
    }
    s
}

/// Architecture used by the linearization sweep: ReLU, NTK scaling from
/// `hyper`.
pub fn lin_arch(input_dim: usize, width: usize, depth: usize, output_dim: usize, hyper: &KernelHyper) -> Architecture {
    Architecture::ntk(
        input_dim,
        width,
        depth,
        output_dim,
        hyper.activation,
        hyper.sigma_w2.sqrt(),
        hyper.sigma_b2.sqrt(),
        hyper.sigma_v2.sqrt(),
    )
}

/// Identity activation, zero bias variance: the configuration whose finite
/// width kernel is exact under orthogonal initialization.
pub fn linear_hyper(sigma_w2: f64, sigma_v2: f64) -> KernelHyper {
    KernelHyper {
        sigma_w2,
        sigma_b2: 0.0,
        sigma_v2,
        activation: Activation::Identity,
    }
}
