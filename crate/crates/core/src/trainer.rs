//! Alternating minimization over θ and Ω: minibatch SGD on θ with a ridge
//! pull (toward θ₀ or toward zero) and projected gradient descent on Ω.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{
    backward, init_params, predict, Architecture, InitScheme, OmegaMatrix, ParamSet, Theta,
};
use crate::numerics::{Matrix, Rng};

/// Where the ridge term pulls θ.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegMode {
    /// `λ(θ − θ₀)`: decay toward the initialization.
    ToInit,
    /// `λθ`: ordinary weight decay.
    ToZero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// One gradient evaluation per minibatch feeds both a θ step and an Ω
    /// step.
    Simultaneous,
    /// `k_theta` minibatches of θ steps with Ω frozen, then `k_omega`
    /// minibatches of Ω steps with θ frozen, repeated. Every step uses a
    /// fresh gradient evaluation.
    Alternating { k_theta: usize, k_omega: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub eta_theta: f64,
    pub eta_omega: f64,
    pub lambda: f64,
    pub reg_mode: RegMode,
    pub batch_size: usize,
    pub epochs: usize,
    pub schedule: Schedule,
    pub seed: u64,
    pub omega_floor: f64,
    pub init: InitScheme,
}

impl Default for TrainConfig {
    /// MNIST experiment settings: η_θ = 0.02, η_Ω = 0.05, weight decay
    /// 2e-6, batch 50, Xavier normal init.
    fn default() -> Self {
        TrainConfig {
            eta_theta: 0.02,
            eta_omega: 0.05,
            lambda: 2e-6,
            reg_mode: RegMode::ToZero,
            batch_size: 50,
            epochs: 20,
            schedule: Schedule::Simultaneous,
            seed: 0,
            omega_floor: 0.0,
            init: InitScheme::XavierNormal,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta_theta > 0.0 && self.eta_theta.is_finite()) {
            return Err(Error::Argument("eta_theta must be > 0".into()));
        }
        if !(self.eta_omega > 0.0 && self.eta_omega.is_finite()) {
            return Err(Error::Argument("eta_omega must be > 0".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Argument("lambda must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch_size must be >= 1".into()));
        }
        if !(self.omega_floor >= 0.0 && self.omega_floor.is_finite()) {
            return Err(Error::Argument("omega_floor must be >= 0".into()));
        }
        if let Schedule::Alternating { k_theta, k_omega } = self.schedule {
            if k_theta == 0 && k_omega == 0 {
                return Err(Error::Argument("alternating schedule needs a nonzero phase".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch loss, each measured before its update.
    pub train_loss: f64,
    /// Accuracy of the pre-update minibatch predictions.
    pub train_acc: f64,
    pub test_acc: f64,
    pub omega: OmegaMatrix,
    pub omega_sparsity: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,train_acc,test_acc,omega_sparsity";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            writeln!(
                s,
                "{},{},{},{},{}",
                r.epoch, r.train_loss, r.train_acc, r.test_acc, r.omega_sparsity
            )
            .expect("string write");
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Observable steps of a training run.
#[derive(Debug)]
pub enum TrainEvent<'a> {
    /// An Ω update: the unprojected step and the projected result.
    OmegaUpdate {
        epoch: usize,
        batch: usize,
        raw: &'a Matrix,
        projected: &'a OmegaMatrix,
    },
    ThetaUpdate {
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    EpochEnd(&'a EpochRecord),
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamSet,
    pub omega: OmegaMatrix,
    pub history: TrainHistory,
}

/// θ ← θ − η_θ·g − η_θ·λ·(θ − θ₀) (or `− η_θ·λ·θ` under `ToZero`).
pub fn theta_step(params: &mut ParamSet, grad: &Theta, cfg: &TrainConfig) -> Result<()> {
    if !params.theta.same_shape(grad) {
        return Err(Error::shape("theta_step", "gradient shape differs from theta"));
    }
    let eta = cfg.eta_theta;
    let decay = eta * cfg.lambda;
    let (theta, theta0) = params.split_mut();
    let anchors = theta0.blocks();
    for ((block, g), anchor) in theta
        .blocks_mut()
        .into_iter()
        .zip(grad.blocks())
        .zip(anchors)
    {
        match cfg.reg_mode {
            RegMode::ToInit => {
                for ((t, &gi), &t0) in block.iter_mut().zip(g).zip(anchor) {
                    *t = *t - eta * gi - decay * (*t - t0);
                }
            }
            RegMode::ToZero => {
                for (t, &gi) in block.iter_mut().zip(g) {
                    *t = *t - eta * gi - decay * *t;
                }
            }
        }
    }
    Ok(())
}

/// Euclidean projection onto `{Ω ≥ floor}`: entrywise `max(entry, floor)`.
pub fn project_omega(omega: &Matrix, floor: f64) -> OmegaMatrix {
    let projected = omega.map(|v| if v >= floor { v } else { floor });
    OmegaMatrix::new(projected).expect("clamped entries are nonnegative")
}

/// Ω ← P(Ω − η_Ω·∇Ω).
pub fn omega_step(omega: &OmegaMatrix, grad: &Matrix, cfg: &TrainConfig) -> Result<OmegaMatrix> {
    Ok(omega_step_raw(omega, grad, cfg)?.1)
}

fn omega_step_raw(
    omega: &OmegaMatrix,
    grad: &Matrix,
    cfg: &TrainConfig,
) -> Result<(Matrix, OmegaMatrix)> {
    let eta = cfg.eta_omega;
    let raw = omega
        .as_matrix()
        .zip_with(grad, "omega_step", |w, g| w - eta * g)?;
    if !raw.is_finite() {
        return Err(Error::Argument("non-finite omega step".into()));
    }
    let projected = project_omega(&raw, cfg.omega_floor);
    Ok((raw, projected))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax matches the one-hot label's class.
pub fn accuracy(outputs: &Matrix, labels: &Matrix) -> f64 {
    if outputs.rows() == 0 {
        return 0.0;
    }
    let correct = (0..outputs.rows())
        .filter(|&i| argmax(outputs.row(i)) == argmax(labels.row(i)))
        .count();
    correct as f64 / outputs.rows() as f64
}

/// Evaluates in chunks of `chunk` rows to bound memory.
pub fn evaluate_accuracy(
    theta: &Theta,
    arch: &Architecture,
    omega: &OmegaMatrix,
    data: &Dataset,
    chunk: usize,
) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for part in idx.chunks(chunk.max(1)) {
        let x = data.inputs().select_rows(part);
        let out = predict(theta, arch, omega, &x)?;
        for (r, &i) in part.iter().enumerate() {
            if argmax(out.row(r)) == data.class_of(i) {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

fn fraction_zero(omega: &OmegaMatrix) -> f64 {
    let s = omega.as_matrix().as_slice();
    s.iter().filter(|&&v| v == 0.0).count() as f64 / s.len() as f64
}

fn check_data(arch: &Architecture, data: &Dataset, which: &str) -> Result<()> {
    if data.input_dim() != arch.input_dim || data.num_classes() != arch.output_dim {
        return Err(Error::shape(
            "train",
            format!(
                "{which} set has {} features / {} classes, architecture expects {} / {}",
                data.input_dim(),
                data.num_classes(),
                arch.input_dim,
                arch.output_dim
            ),
        ));
    }
    Ok(())
}

/// Trains from a fresh initialization drawn from `cfg.seed`.
pub fn train(
    arch: &Architecture,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_observer(arch, train_set, test_set, cfg, |_| {})
}

/// [`train`] with a callback on every update and epoch end.
///
/// The seed stream is split as: first fork initializes θ, second fork drives
/// the per-epoch minibatch shuffles. Ω starts at `1/L` everywhere.
pub fn train_with_observer(
    arch: &Architecture,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
    mut observer: impl FnMut(TrainEvent<'_>),
) -> Result<TrainOutcome> {
    arch.validate()?;
    cfg.validate()?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::Argument("training and test sets must be nonempty".into()));
    }
    check_data(arch, train_set, "training")?;
    check_data(arch, test_set, "test")?;

    let mut master = Rng::new(cfg.seed);
    let mut init_rng = master.fork();
    let mut shuffle_rng = master.fork();
    let mut params = init_params(arch, &mut init_rng, cfg.init)?;
    let mut omega = OmegaMatrix::uniform(arch.output_dim, arch.depth);
    let mut history = TrainHistory::default();
    let n = train_set.len();
    let mut order: Vec<usize> = (0..n).collect();
    // position inside the alternating cycle, carried across epochs
    let mut cycle_pos = 0usize;

    for epoch in 0..cfg.epochs {
        order.iter_mut().enumerate().for_each(|(i, v)| *v = i);
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut batches = 0usize;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = train_set.inputs().select_rows(idx);
            let y = train_set.labels_onehot().select_rows(idx);
            let grads = backward(&params.theta, arch, &omega, &x, &y)?;
            if !grads.loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch,
                    loss: grads.loss,
                });
            }
            loss_sum += grads.loss;
            batches += 1;
            correct += (0..idx.len())
                .filter(|&r| argmax(grads.outputs.row(r)) == argmax(y.row(r)))
                .count();

            let (do_theta, do_omega) = match cfg.schedule {
                Schedule::Simultaneous => (true, true),
                Schedule::Alternating { k_theta, k_omega } => {
                    let in_theta_phase = cycle_pos < k_theta;
                    cycle_pos = (cycle_pos + 1) % (k_theta + k_omega);
                    (in_theta_phase, !in_theta_phase)
                }
            };
            if do_theta {
                theta_step(&mut params, &grads.theta, cfg)?;
                if !params.theta.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        batch,
                        loss: f64::NAN,
                    });
                }
                observer(TrainEvent::ThetaUpdate {
                    epoch,
                    batch,
                    loss: grads.loss,
                });
            }
            if do_omega {
                let (raw, projected) =
                    omega_step_raw(&omega, &grads.omega, cfg).map_err(|_| Error::Divergence {
                        epoch,
                        batch,
                        loss: grads.loss,
                    })?;
                observer(TrainEvent::OmegaUpdate {
                    epoch,
                    batch,
                    raw: &raw,
                    projected: &projected,
                });
                omega = projected;
            }
        }
        let test_acc = evaluate_accuracy(&params.theta, arch, &omega, test_set, 500)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            train_acc: correct as f64 / n as f64,
            test_acc,
            omega_sparsity: fraction_zero(&omega),
            omega: omega.clone(),
        };
        observer(TrainEvent::EpochEnd(&record));
        history.records.push(record);
    }
    Ok(TrainOutcome {
        params,
        omega,
        history,
    })
}
