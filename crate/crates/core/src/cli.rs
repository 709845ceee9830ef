//! `nftk` command line: `train`, `krr`, `verify` and `heatmaps`.
//!
//! Exit codes: 0 success, 2 configuration or I/O problems, 3 training
//! divergence, 4 failed verification (reports are still written).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{load_embeddings, load_mnist, synth_blobs, Dataset};
use crate::empirical::{
    lin_arch, lin_fixture, lin_reports_csv, lin_training_check, median, width_sweep, LinCheckConfig,
    WidthSweepConfig,
};
use crate::error::{Error, Result};
use crate::interpret::ImportanceReport;
use crate::model::{Activation, Architecture, Checkpoint, InitScheme, OmegaMatrix, Parameterization};
use crate::ntk::{krr_fit, krr_predict_from_cross, ntk_gram, KernelHyper};
use crate::numerics::Rng;
use crate::trainer::{argmax, train_with_observer, TrainConfig, TrainEvent};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_VERIFY_FAILED: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "nftk", version, about = "Multi-readout MLPs, their tangent kernels and layer-importance maps")]
pub struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for every artifact.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network, then write its checkpoint, history and heatmaps.
    Train,
    /// Kernel ridge regression with the composed analytic kernel.
    Krr,
    /// Finite-width kernel checks against the analytic limit.
    Verify,
    /// Heatmaps and sparsity summary from a checkpoint.
    Heatmaps {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub width: usize,
    pub depth: usize,
    pub activation: Activation,
    pub parameterization: Parameterization,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            width: 256,
            depth: 10,
            activation: Activation::Relu,
            parameterization: Parameterization::Standard,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSection {
    /// IDX files `train-images-idx3-ubyte` etc. under `dir`.
    Mnist {
        dir: PathBuf,
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
    Embeddings {
        train: PathBuf,
        test: PathBuf,
    },
    Blobs {
        points_per_class: usize,
        test_points_per_class: usize,
        classes: usize,
        input_dim: usize,
        separation: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaSource {
    /// Every entry `1/L`.
    Uniform,
    /// Every entry 1.
    Ones,
    /// The Ω stored in a checkpoint.
    Checkpoint(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KrrSection {
    pub lambda: f64,
    /// Largest training set the dense solve accepts.
    pub cap: usize,
    pub omega: OmegaSource,
}

impl Default for KrrSection {
    fn default() -> Self {
        KrrSection {
            lambda: 1e-3,
            cap: 2000,
            omega: OmegaSource::Uniform,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub widths: Vec<usize>,
    pub seeds: usize,
    pub depth: usize,
    pub input_dim: usize,
    pub points: usize,
    /// Defaults to orthogonal for a bias-free linear network, Gaussian
    /// otherwise.
    pub init: Option<InitScheme>,
}

impl Default for SweepSection {
    fn default() -> Self {
        let d = WidthSweepConfig::default();
        SweepSection {
            widths: d.widths,
            seeds: d.seeds,
            depth: d.depth,
            input_dim: d.input_dim,
            points: d.points,
            init: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinSection {
    pub widths: Vec<usize>,
    pub seeds: usize,
    pub depth: usize,
    pub lambda: f64,
    pub eta: f64,
    pub steps: usize,
}

impl Default for LinSection {
    fn default() -> Self {
        LinSection {
            widths: vec![64, 1024],
            seeds: 5,
            depth: 2,
            lambda: 0.1,
            eta: 1e-2,
            steps: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub sweep: SweepSection,
    /// `null` skips the training comparison.
    pub lin: Option<LinSection>,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            sweep: SweepSection::default(),
            lin: Some(LinSection::default()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub train: TrainConfig,
    pub kernel: KernelHyper,
    pub data: Option<DataSection>,
    pub krr: KrrSection,
    pub verify: VerifySection,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.kernel.validate()?;
        if self.model.width == 0 || self.model.depth == 0 {
            return Err(Error::Config("model width and depth must be >= 1".into()));
        }
        if !(self.krr.lambda >= 0.0 && self.krr.lambda.is_finite()) {
            return Err(Error::Config("krr.lambda must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config: &'a ExperimentConfig,
    datasets: Vec<(String, String)>,
}

fn write_manifest(out: &Path, command: &str, cfg: &ExperimentConfig, datasets: Vec<(String, String)>) -> Result<()> {
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.train.seed,
        config: cfg,
        datasets,
    };
    let path = out.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))
}

fn hash_hex(d: &Dataset) -> String {
    format!("{:016x}", d.content_hash())
}

fn load_data(section: &DataSection, seed: u64) -> Result<(Dataset, Dataset)> {
    match section {
        DataSection::Mnist {
            dir,
            train_limit,
            test_limit,
        } => Ok((
            load_mnist(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"), *train_limit)?,
            load_mnist(dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte"), *test_limit)?,
        )),
        DataSection::Embeddings { train, test } => Ok((load_embeddings(train)?, load_embeddings(test)?)),
        DataSection::Blobs {
            points_per_class,
            test_points_per_class,
            classes,
            input_dim,
            separation,
        } => {
            if *points_per_class == 0 || *test_points_per_class == 0 || *classes == 0 || *input_dim == 0 {
                return Err(Error::Config("blob counts must be >= 1".into()));
            }
            // the test split shares centres with the training split
            let mut train_rng = Rng::new(seed);
            let train = synth_blobs(&mut train_rng, *points_per_class, *classes, *input_dim, *separation);
            let mut test_rng = Rng::new(seed);
            let both = synth_blobs(
                &mut test_rng,
                points_per_class + test_points_per_class,
                *classes,
                *input_dim,
                *separation,
            );
            let idx: Vec<usize> = (0..*classes)
                .flat_map(|c| {
                    let start = c * (points_per_class + test_points_per_class) + points_per_class;
                    start..start + test_points_per_class
                })
                .collect();
            Ok((train, both.subset(&idx)))
        }
    }
}

fn architecture(cfg: &ExperimentConfig, input_dim: usize, output_dim: usize) -> Result<Architecture> {
    let arch = Architecture {
        input_dim,
        width: cfg.model.width,
        depth: cfg.model.depth,
        output_dim,
        activation: cfg.model.activation,
        parameterization: cfg.model.parameterization,
    };
    arch.validate()?;
    Ok(arch)
}

fn require_data(cfg: &ExperimentConfig) -> Result<&DataSection> {
    cfg.data
        .as_ref()
        .ok_or_else(|| Error::Config("missing `data` section".into()))
}

fn create_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<i32> {
    let (train, test) = load_data(require_data(cfg)?, cfg.train.seed)?;
    let arch = architecture(cfg, train.input_dim(), train.num_classes())?;
    create_out(out)?;
    let outcome = train_with_observer(&arch, &train, &test, &cfg.train, |e| {
        if let TrainEvent::EpochEnd(r) = e {
            println!(
                "epoch {:>3}  loss {:.6}  train_acc {:.4}  test_acc {:.4}  omega_zeros {:.3}",
                r.epoch, r.train_loss, r.train_acc, r.test_acc, r.omega_sparsity
            );
        }
    })?;
    outcome.history.write_csv(out.join("history.csv"))?;
    let checkpoint = Checkpoint::new(arch, outcome.params, outcome.omega)?;
    checkpoint.save(out.join("checkpoint.nftk"))?;
    let report = ImportanceReport::new(&checkpoint.omega);
    report.write_json(out.join("importance.json"))?;
    report.write_heatmaps(out)?;
    write_manifest(
        out,
        "train",
        cfg,
        vec![("train".into(), hash_hex(&train)), ("test".into(), hash_hex(&test))],
    )?;
    let final_acc = outcome.history.records.last().map_or(0.0, |r| r.test_acc);
    println!("final test accuracy {final_acc:.4}");
    Ok(EXIT_OK)
}

fn cmd_krr(cfg: &ExperimentConfig, out: &Path) -> Result<i32> {
    let (train, test) = load_data(require_data(cfg)?, cfg.train.seed)?;
    if train.len() > cfg.krr.cap {
        return Err(Error::Config(format!(
            "training set has {} points, above the kernel solve cap of {}; lower the data limit or raise krr.cap",
            train.len(),
            cfg.krr.cap
        )));
    }
    let depth = cfg.model.depth;
    let d = train.num_classes();
    let omega = match &cfg.krr.omega {
        OmegaSource::Uniform => OmegaMatrix::uniform(d, depth),
        OmegaSource::Ones => OmegaMatrix::filled(d, depth, 1.0)?,
        OmegaSource::Checkpoint(path) => {
            let ck = Checkpoint::load(path)?;
            if (ck.omega.classes(), ck.omega.depth()) != (d, depth) {
                return Err(Error::Config(format!(
                    "checkpoint omega is {}x{}, expected {d}x{depth}",
                    ck.omega.classes(),
                    ck.omega.depth()
                )));
            }
            ck.omega
        }
    };
    create_out(out)?;
    let stack = ntk_gram(train.inputs(), train.inputs(), &cfg.kernel, depth)?;
    let model = krr_fit(train.inputs(), &stack, &omega, train.labels_onehot(), cfg.krr.lambda, &cfg.kernel)?;
    let cross = ntk_gram(test.inputs(), train.inputs(), &cfg.kernel, depth)?;
    let pred = krr_predict_from_cross(&model, &cross)?;
    let mut csv = String::from("index,true_class,predicted_class");
    for c in 0..d {
        csv.push_str(&format!(",f{c}"));
    }
    csv.push('\n');
    let mut correct = 0usize;
    for i in 0..test.len() {
        let p = argmax(pred.row(i));
        if p == test.class_of(i) {
            correct += 1;
        }
        csv.push_str(&format!("{i},{},{p}", test.class_of(i)));
        for v in pred.row(i) {
            csv.push_str(&format!(",{v}"));
        }
        csv.push('\n');
    }
    let path = out.join("predictions.csv");
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    write_manifest(
        out,
        "krr",
        cfg,
        vec![("train".into(), hash_hex(&train)), ("test".into(), hash_hex(&test))],
    )?;
    println!("kernel ridge test accuracy {:.4}", correct as f64 / test.len() as f64);
    Ok(EXIT_OK)
}

/// Tolerance below which a sweep counts as exact (the linear-network case).
const EXACT_TOL: f64 = 1e-8;

fn cmd_verify(cfg: &ExperimentConfig, out: &Path) -> Result<i32> {
    let h = cfg.kernel;
    let s = &cfg.verify.sweep;
    let init = s.init.unwrap_or(if h.activation == Activation::Identity && h.sigma_b2 == 0.0 {
        InitScheme::NtkOrthogonal
    } else {
        InitScheme::NtkParam
    });
    let sweep_cfg = WidthSweepConfig {
        widths: s.widths.clone(),
        seeds: s.seeds,
        depth: s.depth,
        input_dim: s.input_dim,
        points: s.points,
        class: 0,
        output_dim: 1,
        hyper: h,
        init,
        seed: cfg.train.seed,
    };
    create_out(out)?;
    let sweep = width_sweep(&sweep_cfg)?;
    let path = out.join("kernel_sweep.csv");
    fs::write(&path, sweep.to_csv()).map_err(|e| Error::io(&path, e))?;
    for w in &sweep.summaries {
        println!(
            "width {:>5}  median rel err {:.6}  rel err of mean kernel {:.6}",
            w.width, w.median_err, w.mean_kernel_err
        );
    }

    if let Some(lin) = &cfg.verify.lin {
        let (data, probes) = lin_fixture();
        let mut reports = Vec::new();
        for &width in &lin.widths {
            let arch = lin_arch(2, width, lin.depth, data.num_classes(), &h);
            let mut discs = Vec::new();
            for s in 0..lin.seeds as u64 {
                let r = lin_training_check(
                    &arch,
                    &data,
                    &probes,
                    &LinCheckConfig {
                        lambda: lin.lambda,
                        eta: lin.eta,
                        steps: lin.steps,
                        seed: cfg.train.seed.wrapping_add(s),
                    },
                )?;
                discs.push(r.probe_discrepancy / r.label_rms);
                reports.push(r);
            }
            println!("width {width:>5}  median probe discrepancy / label rms {:.6}", median(&discs));
        }
        let path = out.join("lin_check.csv");
        fs::write(&path, lin_reports_csv(&reports)).map_err(|e| Error::io(&path, e))?;
    }
    write_manifest(out, "verify", cfg, Vec::new())?;

    let exact = sweep.rows.iter().all(|r| r.rel_frobenius_err < EXACT_TOL);
    match sweep.monotone() {
        None => {
            println!("single width: convergence check skipped");
            Ok(EXIT_OK)
        }
        Some(_) if exact => {
            println!("empirical kernel matches the analytic kernel at every width");
            Ok(EXIT_OK)
        }
        Some(true) => {
            println!("median error decreases with width: pass");
            Ok(EXIT_OK)
        }
        Some(false) => {
            println!("median error does not decrease with width: FAIL");
            Ok(EXIT_VERIFY_FAILED)
        }
    }
}

fn cmd_heatmaps(checkpoint: &Path, out: &Path) -> Result<i32> {
    let ck = Checkpoint::load(checkpoint)?;
    create_out(out)?;
    let report = ImportanceReport::new(&ck.omega);
    report.write_heatmaps(out)?;
    report.write_json(out.join("importance.json"))?;
    println!(
        "omega zeros {:.4}  normalized zeros {:.4}  dead layers {:?}",
        report.sparsity_raw,
        report.sparsity_normalized,
        report
            .dead_layers
            .iter()
            .enumerate()
            .filter(|(_, d)| **d)
            .map(|(l, _)| l)
            .collect::<Vec<_>>()
    );
    Ok(EXIT_OK)
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Divergence { .. } => EXIT_DIVERGED,
        _ => EXIT_CONFIG,
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    if let Command::Heatmaps { checkpoint } = &cli.command {
        return cmd_heatmaps(checkpoint, &cli.out);
    }
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None if matches!(cli.command, Command::Verify) => ExperimentConfig::default(),
        None => return Err(Error::Config("--config is required".into())),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    match cli.command {
        Command::Train => cmd_train(&cfg, &cli.out),
        Command::Krr => cmd_krr(&cfg, &cli.out),
        Command::Verify => cmd_verify(&cfg, &cli.out),
        Command::Heatmaps { .. } => unreachable!("handled above"),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::from_json(r#"{"model": {"widht": 3}}"#).unwrap_err().to_string();
        assert!(err.contains("widht"), "{err}");
        let err = ExperimentConfig::from_json(r#"{"bogus": 1}"#).unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn partial_sections_take_defaults() {
        let cfg = ExperimentConfig::from_json(
            r#"{"train": {"epochs": 3}, "kernel": {"sigma_b2": 0.0}, "verify": {"lin": null}}"#,
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.eta_theta, 0.02);
        assert_eq!(cfg.kernel.sigma_w2, 2.0);
        assert_eq!(cfg.verify.lin, None);
        assert_eq!(cfg.model, ModelSection::default());
    }

    #[test]
    fn data_section_forms() {
        let cfg = ExperimentConfig::from_json(
            r#"{"data": {"kind": "mnist", "dir": "data/mnist", "train_limit": 10000}, "krr": {"omega": {"checkpoint": "a.nftk"}}}"#,
        )
        .unwrap();
        assert!(matches!(cfg.data, Some(DataSection::Mnist { train_limit: Some(10000), .. })));
        assert_eq!(cfg.krr.omega, OmegaSource::Checkpoint("a.nftk".into()));
    }

    #[test]
    fn blob_splits_are_disjoint_draws_from_shared_centres() {
        let section = DataSection::Blobs {
            points_per_class: 5,
            test_points_per_class: 3,
            classes: 2,
            input_dim: 2,
            separation: 8.0,
        };
        let (train, test) = load_data(&section, 4).unwrap();
        assert_eq!((train.len(), test.len()), (10, 6));
        assert_eq!(test.class_indices(), vec![0, 0, 0, 1, 1, 1]);
        for i in 0..test.len() {
            for j in 0..train.len() {
                assert_ne!(test.inputs().row(i), train.inputs().row(j));
            }
        }
    }
}
