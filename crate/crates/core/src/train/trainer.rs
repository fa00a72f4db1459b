use rand::seq::SliceRandom;
use rand::Rng;

use super::loss::{generator_loss_on, semi_supervised_d_loss, LossConfig};
use super::optim::Adam;
use super::schedule::{lr_at_epoch, TrainPlan};
use crate::data::{load_batch, PatchSource};
use crate::error::{Error, Result};
use crate::models::{Discriminator, Generator, ModelConfig};
use crate::nn::{normal_vec, seeded_rng, SeededRng};
use crate::tensor::{grad_allow_unused, Mode, Scalar, Tensor};

/// Losses of one alternating D/G iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub d_loss: f64,
    pub d_adv: f64,
    pub d_cls: f64,
    pub d_gp: f64,
    pub g_loss: f64,
    pub g_adv: f64,
    pub g_cls: f64,
}

impl StepRecord {
    pub fn is_finite(&self) -> bool {
        [
            self.d_loss,
            self.d_adv,
            self.d_cls,
            self.d_gp,
            self.g_loss,
            self.g_adv,
            self.g_cls,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Hooks called by [`Trainer::train`].
pub trait TrainObserver<T: Scalar> {
    fn on_step(&mut self, _record: &StepRecord) {}

    /// Called after each completed epoch; `trainer.epoch()` is the count so far.
    fn on_epoch_end(&mut self, _trainer: &mut Trainer<T>) -> Result<()> {
        Ok(())
    }
}

impl<T: Scalar> TrainObserver<T> for () {}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: usize,
    pub trace: Vec<StepRecord>,
}

impl TrainReport {
    /// Mean `(d_loss, g_loss)` per epoch.
    pub fn epoch_means(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64, usize)> = Vec::new();
        for r in &self.trace {
            if out.len() <= r.epoch {
                out.resize(r.epoch + 1, (0.0, 0.0, 0));
            }
            let e = &mut out[r.epoch];
            e.0 += r.d_loss;
            e.1 += r.g_loss;
            e.2 += 1;
        }
        out.into_iter()
            .map(|(d, g, n)| (d / n.max(1) as f64, g / n.max(1) as f64))
            .collect()
    }
}

/// Alternating semi-supervised GAN training.
///
/// Each iteration draws one real batch, one fake batch of the same size with
/// uniformly sampled labels, takes a discriminator step on both, then a
/// generator step on the same fake batch against the updated discriminator.
/// All randomness (shuffling, flips, `z`, labels, penalty mixing) comes from
/// one seeded stream, so identical seeds give identical runs.
#[derive(Debug, Clone)]
pub struct Trainer<T: Scalar = f32> {
    pub generator: Generator<T>,
    pub discriminator: Discriminator<T>,
    pub g_opt: Adam<T>,
    pub d_opt: Adam<T>,
    pub plan: TrainPlan,
    pub loss: LossConfig,
    pub(crate) rng: SeededRng,
    pub(crate) epoch: usize,
    pub(crate) trace: Vec<StepRecord>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: &ModelConfig, plan: TrainPlan, loss: LossConfig) -> Result<Self> {
        plan.validate()?;
        loss.validate()?;
        let mut rng = seeded_rng(plan.seed);
        rng.set_stream(1);
        Ok(Trainer {
            generator: Generator::build(model, plan.seed)?,
            discriminator: Discriminator::build(model, plan.seed)?,
            g_opt: Adam::new(plan.lr0),
            d_opt: Adam::new(plan.lr0),
            plan,
            loss,
            rng,
            epoch: 0,
            trace: Vec::new(),
        })
    }

    pub fn model_config(&self) -> &ModelConfig {
        self.generator.config()
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn trace(&self) -> &[StepRecord] {
        &self.trace
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.plan.batch)
    }

    fn check_source(&self, source: &dyn PatchSource) -> Result<()> {
        if source.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        let cfg = self.model_config();
        let (h, w) = source.extent();
        if (h, w) != (cfg.height, cfg.width) {
            return Err(Error::geometry(
                "train",
                format!(
                    "patches are {h}x{w} but the model expects {}x{}",
                    cfg.height, cfg.width
                ),
            ));
        }
        let classes = cfg.num_classes;
        if let Some(label) = source.labels().into_iter().find(|&l| l >= classes) {
            return Err(Error::Label { label, classes });
        }
        Ok(())
    }

    /// One discriminator step followed by one generator step on `indices`.
    pub fn train_step(
        &mut self,
        source: &dyn PatchSource,
        indices: &[usize],
        epoch: usize,
        step: usize,
    ) -> Result<StepRecord> {
        let (x_real, y_real) = load_batch::<T>(source, indices, true, &mut self.rng)?;
        let cfg = self.model_config().clone();
        // Batch norm in the generator needs two samples per channel.
        let b = indices.len().max(2);
        let z = Tensor::from_vec(
            normal_vec(b * cfg.latent_dim, &mut self.rng),
            &[b, cfg.latent_dim],
        )?;
        let y_fake: Vec<usize> = (0..b)
            .map(|_| self.rng.random_range(0..cfg.num_classes))
            .collect();
        let x_fake = self.generator.forward(&z, &y_fake, Mode::Train)?;

        let d_loss = semi_supervised_d_loss(
            &mut self.discriminator,
            &x_real,
            &y_real,
            &x_fake.detach(),
            &y_fake,
            &self.loss,
            &mut self.rng,
        )?;
        let grads = grads_or_zero(&d_loss.total, &self.discriminator.params())?;
        self.d_opt.update(self.discriminator.params_mut(), &grads)?;

        let g_loss = generator_loss_on(&mut self.discriminator, &x_fake, &y_fake, &self.loss)?;
        let grads = grads_or_zero(&g_loss.total, &self.generator.params())?;
        self.g_opt.update(self.generator.params_mut(), &grads)?;

        Ok(StepRecord {
            epoch,
            step,
            lr: self.d_opt.lr,
            d_loss: d_loss.total.item()?.f64(),
            d_adv: d_loss.adv,
            d_cls: d_loss.cls,
            d_gp: d_loss.gp,
            g_loss: g_loss.total.item()?.f64(),
            g_adv: g_loss.adv,
            g_cls: g_loss.cls,
        })
    }

    /// Runs epoch `self.epoch()` over a fresh seeded shuffle; the final
    /// partial batch is kept.
    pub fn run_epoch(
        &mut self,
        source: &dyn PatchSource,
        observer: &mut dyn TrainObserver<T>,
    ) -> Result<()> {
        self.check_source(source)?;
        let epoch = self.epoch;
        let lr = lr_at_epoch(epoch, &self.plan)?;
        self.g_opt.lr = lr;
        self.d_opt.lr = lr;
        let mut order: Vec<usize> = (0..source.len()).collect();
        order.shuffle(&mut self.rng);
        for (step, chunk) in order.chunks(self.plan.batch).enumerate() {
            let record = self.train_step(source, chunk, epoch, step)?;
            observer.on_step(&record);
            self.trace.push(record);
        }
        self.epoch += 1;
        observer.on_epoch_end(self)
    }

    /// Trains from the current epoch up to (not including) epoch `end`.
    pub fn train_until(
        &mut self,
        source: &dyn PatchSource,
        end: usize,
        observer: &mut dyn TrainObserver<T>,
    ) -> Result<TrainReport> {
        if end > self.plan.epochs {
            return Err(Error::Config(format!(
                "cannot train to epoch {end} of a {}-epoch plan",
                self.plan.epochs
            )));
        }
        while self.epoch < end {
            self.run_epoch(source, observer)?;
        }
        Ok(self.report())
    }

    /// Trains through the remaining epochs of the plan.
    pub fn train(
        &mut self,
        source: &dyn PatchSource,
        observer: &mut dyn TrainObserver<T>,
    ) -> Result<TrainReport> {
        self.train_until(source, self.plan.epochs, observer)
    }

    pub fn report(&self) -> TrainReport {
        TrainReport {
            epochs: self.epoch,
            trace: self.trace.clone(),
        }
    }
}

fn grads_or_zero<T: Scalar>(loss: &Tensor<T>, params: &[&Tensor<T>]) -> Result<Vec<Tensor<T>>> {
    Ok(grad_allow_unused(loss, params, false)?
        .into_iter()
        .zip(params)
        .map(|(g, p)| g.unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect())
}
