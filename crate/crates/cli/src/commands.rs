use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sscgan::data::{
    encode_sample_grid, scan_dataset, split, synth_dataset, DatasetIndex, PatchFiles, PatchSet,
    PatchSource,
};
use sscgan::metrics::evaluate_model;
use sscgan::nn::{normal_vec, seeded_rng};
use sscgan::tensor::no_grad;
use sscgan::train::TrainObserver;
use sscgan::{Checkpoint, Error, Evaluation, Generator, Mode, ModelConfig, Tensor, Trainer};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig, SYNTH_DATA};

/// Datasets larger than this are decoded per batch instead of held in memory.
pub const IN_MEMORY_LIMIT: usize = 100_000;
pub const SAMPLES_PER_CLASS: usize = 6;
pub const EVAL_BATCH: usize = 128;

pub const CHECKPOINT_FILE: &str = "checkpoint.sscg";
pub const TRACE_FILE: &str = "trace.tsv";
pub const METRICS_FILE: &str = "metrics.txt";
pub const RECORD_FILE: &str = "metrics.record";
pub const CONFIG_FILE: &str = "config.conf";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },
    #[error("{failed} check(s) failed: {names}")]
    Verification { failed: usize, names: String },
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Usage(_) | CliError::Data(_) => 2,
            CliError::Checkpoint { .. } => 3,
            CliError::Verification { .. } => 1,
            CliError::Core(e) => match e {
                Error::Checkpoint(_) => 3,
                Error::Config(_)
                | Error::Data(_)
                | Error::Split(_)
                | Error::Decode { .. }
                | Error::Io { .. }
                | Error::Label { .. }
                | Error::Geometry { .. } => 2,
                _ => 1,
            },
        }
    }
}

fn checkpoint_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Checkpoint {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint<f32>, CliError> {
    Checkpoint::read(path).map_err(|e| checkpoint_error(path, e))
}

/// Scans `--data`, generating the synthetic set under `out` when asked for.
pub fn load_index(cfg: &RunConfig, log: &mut dyn Write) -> Result<DatasetIndex, CliError> {
    let data = cfg
        .data
        .as_ref()
        .ok_or_else(|| CliError::Usage("--data is required".into()))?;
    if data.as_os_str() == SYNTH_DATA && !data.exists() {
        let root = cfg.out.join("synth-data");
        let _ = writeln!(
            log,
            "generating synthetic dataset ({} per class) in {}",
            cfg.synth_per_class,
            root.display()
        );
        if root.exists() {
            fs::remove_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        }
        return Ok(synth_dataset(&root, cfg.synth_per_class, cfg.plan.seed)?);
    }
    if !data.is_dir() {
        return Err(CliError::Data(format!(
            "data root {} does not exist",
            data.display()
        )));
    }
    let scan = scan_dataset(data)?;
    if !scan.rejects.is_empty() {
        let _ = write!(log, "{}", scan.rejects_report());
    }
    if scan.index.is_empty() {
        return Err(CliError::Data(format!(
            "no patches found under {}",
            data.display()
        )));
    }
    Ok(scan.index)
}

fn source_for(index: DatasetIndex, model: &ModelConfig) -> Result<Box<dyn PatchSource>, CliError> {
    if index.len() <= IN_MEMORY_LIMIT {
        Ok(Box::new(PatchSet::load(&index, model.height, model.width)?))
    } else {
        Ok(Box::new(PatchFiles::new(index, model.height, model.width)))
    }
}

/// Writes one grid per class from a fixed latent draw, leaving the
/// generator's state untouched.
pub fn write_class_grids(
    g: &mut Generator<f32>,
    classes: &[usize],
    count: usize,
    seed: u64,
    path_for: impl Fn(usize) -> PathBuf,
) -> Result<Vec<PathBuf>, CliError> {
    let _guard = no_grad();
    let latent = g.config().latent_dim;
    let mut paths = Vec::new();
    for &class in classes {
        let mut rng = seeded_rng(seed);
        rng.set_stream(2 + class as u64);
        let z = Tensor::from_vec(normal_vec(count * latent, &mut rng), &[count, latent])?;
        let images = g.forward(&z, &vec![class; count], Mode::Eval)?;
        let path = path_for(class);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        encode_sample_grid(&images, &path)?;
        paths.push(path);
    }
    Ok(paths)
}

pub fn trace_text(trainer: &Trainer<f32>) -> String {
    let mut s = String::from("epoch\tstep\tlr\td_loss\td_adv\td_cls\td_gp\tg_loss\tg_adv\tg_cls\n");
    for r in trainer.trace() {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.epoch, r.step, r.lr, r.d_loss, r.d_adv, r.d_cls, r.d_gp, r.g_loss, r.g_adv, r.g_cls
        ));
    }
    s
}

struct RunObserver<'a> {
    dir: &'a Path,
    log: &'a mut dyn Write,
    started: Instant,
    sums: (f64, f64, usize),
}

impl TrainObserver<f32> for RunObserver<'_> {
    fn on_step(&mut self, r: &sscgan::StepRecord) {
        self.sums.0 += r.d_loss;
        self.sums.1 += r.g_loss;
        self.sums.2 += 1;
    }

    fn on_epoch_end(&mut self, trainer: &mut Trainer<f32>) -> sscgan::Result<()> {
        let epoch = trainer.epoch();
        let n = self.sums.2.max(1) as f64;
        let _ = writeln!(
            self.log,
            "epoch {epoch}/{}  d_loss {:.4}  g_loss {:.4}  ({:.0?})",
            trainer.plan.epochs,
            self.sums.0 / n,
            self.sums.1 / n,
            self.started.elapsed()
        );
        self.sums = (0.0, 0.0, 0);
        let plan = trainer.plan;
        if plan.sample_every > 0 && epoch.is_multiple_of(plan.sample_every) {
            let classes: Vec<usize> = (0..trainer.model_config().num_classes).collect();
            let samples = self.dir.join("samples");
            write_class_grids(
                &mut trainer.generator,
                &classes,
                SAMPLES_PER_CLASS,
                plan.seed,
                |c| samples.join(format!("epoch{epoch:04}_class{c}.png")),
            )
            .map_err(|e| Error::Data(e.to_string()))?;
        }
        if plan.checkpoint_every > 0 && epoch.is_multiple_of(plan.checkpoint_every) {
            trainer.save_checkpoint(&self.dir.join(CHECKPOINT_FILE))?;
        }
        Ok(())
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn write_evaluation(dir: &Path, ev: &Evaluation) -> Result<(), CliError> {
    write_file(&dir.join(METRICS_FILE), &ev.to_string())?;
    write_file(&dir.join(RECORD_FILE), &(ev.record() + "\n"))
}

/// Outcome of one training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub omega: usize,
    pub dir: PathBuf,
    pub evaluation: Evaluation,
}

/// Trains one model per width multiplier, then evaluates each on the test split.
pub fn cmd_train(
    cfg: &RunConfig,
    resume: Option<&Path>,
    log: &mut dyn Write,
) -> Result<Vec<TrainOutcome>, CliError> {
    let omegas = cfg.require_omegas()?.to_vec();
    if resume.is_some() && omegas.len() > 1 {
        return Err(CliError::Usage("--resume takes a single --omega".into()));
    }
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let index = load_index(cfg, log)?;
    let (train_index, test_index) = split(&index, &cfg.split)?;
    let _ = writeln!(
        log,
        "{} patches: {} train, {} test ({} split)",
        index.len(),
        train_index.len(),
        test_index.len(),
        cfg.split.unit.as_str()
    );
    let model0 = cfg.model_for(omegas[0]);
    let train_set = source_for(train_index, &model0)?;
    let test_set = source_for(test_index, &model0)?;

    let mut outcomes = Vec::new();
    for omega in omegas.iter().copied() {
        let model = cfg.model_for(omega);
        let dir = if omegas.len() > 1 {
            cfg.out.join(format!("omega{omega}"))
        } else {
            cfg.out.clone()
        };
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_file(&dir.join(CONFIG_FILE), &cfg.to_text())?;

        let mut trainer = match resume {
            Some(path) => {
                let ckpt = read_checkpoint(path)?;
                ckpt.check_model(&model)
                    .map_err(|e| checkpoint_error(path, e))?;
                let trainer = ckpt.into_trainer().map_err(|e| checkpoint_error(path, e))?;
                let _ = writeln!(
                    log,
                    "resuming {} at epoch {}",
                    path.display(),
                    trainer.epoch()
                );
                trainer
            }
            None => Trainer::new(&model, cfg.plan, cfg.loss)?,
        };
        let _ = writeln!(
            log,
            "omega {omega}: {} generator and {} discriminator parameters, {} epochs of {} steps",
            trainer.generator.param_count(),
            trainer.discriminator.param_count(),
            trainer.plan.epochs,
            trainer.steps_per_epoch(train_set.len())
        );
        let mut observer = RunObserver {
            dir: &dir,
            log: &mut *log,
            started: Instant::now(),
            sums: (0.0, 0.0, 0),
        };
        trainer.train(train_set.as_ref(), &mut observer)?;

        trainer.save_checkpoint(&dir.join(CHECKPOINT_FILE))?;
        write_file(&dir.join(TRACE_FILE), &trace_text(&trainer))?;
        let classes: Vec<usize> = (0..model.num_classes).collect();
        let samples = dir.join("samples");
        write_class_grids(
            &mut trainer.generator,
            &classes,
            SAMPLES_PER_CLASS,
            trainer.plan.seed,
            |c| samples.join(format!("final_class{c}.png")),
        )?;
        let evaluation = evaluate_model(&mut trainer.discriminator, test_set.as_ref(), EVAL_BATCH)?;
        write_evaluation(&dir, &evaluation)?;
        let _ = writeln!(log, "omega {omega} test split:\n{evaluation}");
        outcomes.push(TrainOutcome {
            omega,
            dir,
            evaluation,
        });
    }
    Ok(outcomes)
}

/// Evaluates a checkpoint's class head on the test split of `--data`.
///
/// The split follows the checkpoint's seed unless `--seed` or `split-seed`
/// is given, so a plain `eval` scores the same held-out patients as training.
pub fn cmd_eval(
    checkpoint: &Path,
    cfg: &RunConfig,
    log: &mut dyn Write,
) -> Result<Evaluation, CliError> {
    let ckpt = read_checkpoint(checkpoint)?;
    if cfg.is_set("omega") {
        match cfg.omegas.as_slice() {
            [omega] => {
                let model = ModelConfig {
                    omega: *omega,
                    ..ckpt.model.clone()
                };
                ckpt.check_model(&model)
                    .map_err(|e| checkpoint_error(checkpoint, e))?;
            }
            _ => return Err(CliError::Usage("eval takes a single --omega".into())),
        }
    }
    let mut spec = cfg.split;
    if !cfg.is_set("seed") && !cfg.is_set("split-seed") {
        spec.seed = ckpt.plan.seed;
    }
    let model = ckpt.model.clone();
    let mut trainer = ckpt
        .into_trainer()
        .map_err(|e| checkpoint_error(checkpoint, e))?;
    let index = load_index(cfg, log)?;
    let (_, test_index) = split(&index, &spec)?;
    let test_set = source_for(test_index, &model)?;
    let evaluation = evaluate_model(&mut trainer.discriminator, test_set.as_ref(), EVAL_BATCH)?;
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    write_evaluation(&cfg.out, &evaluation)?;
    let _ = writeln!(log, "{evaluation}");
    let _ = writeln!(log, "{}", evaluation.record());
    Ok(evaluation)
}

/// Writes `count` samples per requested class as one grid image each.
pub fn cmd_generate(
    checkpoint: &Path,
    class: Option<usize>,
    count: usize,
    seed: u64,
    out: &Path,
    log: &mut dyn Write,
) -> Result<Vec<PathBuf>, CliError> {
    if count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    let ckpt = read_checkpoint(checkpoint)?;
    let classes_total = ckpt.model.num_classes;
    let classes: Vec<usize> = match class {
        Some(c) if c >= classes_total => {
            return Err(CliError::Usage(format!(
                "--class {c} outside 0..{classes_total}"
            )));
        }
        Some(c) => vec![c],
        None => (0..classes_total).collect(),
    };
    let mut trainer = ckpt
        .into_trainer()
        .map_err(|e| checkpoint_error(checkpoint, e))?;
    let paths = write_class_grids(&mut trainer.generator, &classes, count, seed, |c| {
        out.join(format!("generated_class{c}.png"))
    })?;
    for p in &paths {
        let _ = writeln!(log, "wrote {}", p.display());
    }
    Ok(paths)
}

/// Runs the numerical self-checks; fails if any check fails.
pub fn cmd_verify(seed: u64, log: &mut dyn Write) -> Result<Vec<sscgan::verify::Check>, CliError> {
    let started = Instant::now();
    let checks = sscgan::verify::run_all(seed)?;
    for c in &checks {
        let _ = writeln!(
            log,
            "{} {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    let _ = writeln!(log, "{} checks in {:.1?}", checks.len(), started.elapsed());
    let failed: Vec<&str> = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name.as_str())
        .collect();
    if !failed.is_empty() {
        return Err(CliError::Verification {
            failed: failed.len(),
            names: failed.join(", "),
        });
    }
    Ok(checks)
}
