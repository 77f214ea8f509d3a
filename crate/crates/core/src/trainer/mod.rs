//! Staged adversarial training of the refiner, the discriminator and the
//! task network, with exact checkpoint/resume.

mod checkpoint;
mod config;
mod corpus;
mod schedule;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{write_metrics_csv, DataConfig, RunConfig, RUN_CONFIG_VERSION};
pub use corpus::{Batch, Sampler, TrainCorpus, TrainSample};
pub use schedule::{schedule_events, Event, Network, Objective, Schedule, Stage};

use histosynth_nn::{Adam, ParamGrads};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gan::{
    discriminator_gradients, refiner_gradients, DiscriminatorConfig, DiscriminatorModel,
    LossWeights, RefinerConfig, RefinerModel, RefinerObjective,
};
use crate::task::{TaskConfig, TaskModel};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub refiner: RefinerConfig,
    pub discriminator: DiscriminatorConfig,
    pub task: TaskConfig,
}

/// Everything that determines a training run besides the corpus.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub schedule: Schedule,
    pub weights: LossWeights,
    pub models: ModelConfig,
    /// Seeds batch sampling. Model initialisation uses the per-model seeds.
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.weights.validate()
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    /// 1-based index of the update.
    pub step: u64,
    pub stage: Stage,
    pub network: Network,
    pub objective: Objective,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepCounts {
    pub g: u64,
    pub d: u64,
    pub r: u64,
}

/// Models, optimizers, progress and RNG of a run. Everything needed to
/// continue a run bit-for-bit lives here.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: TrainConfig,
    pub refiner: RefinerModel,
    pub disc: DiscriminatorModel,
    pub task: TaskModel,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub opt_r: Adam,
    pub stage: Stage,
    /// Number of scheduled updates already performed.
    pub cursor: usize,
    pub counts: StepCounts,
    /// Forward passes of the task network made on behalf of training.
    pub task_queries: u64,
    pub history: Vec<MetricRecord>,
    pub(crate) rng: ChaCha8Rng,
    pub(crate) sampler: Sampler,
}

impl TrainState {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let refiner = RefinerModel::new(config.models.refiner.clone());
        let disc = DiscriminatorModel::new(config.models.discriminator.clone());
        let task = TaskModel::new(config.models.task.clone());
        let s = &config.schedule;
        let opt_g = Adam::new(&refiner.params, s.lr_g);
        let opt_d = Adam::new(&disc.params, s.lr_d);
        let opt_r = Adam::new(&task.params, s.lr_r);
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            config,
            refiner,
            disc,
            task,
            opt_g,
            opt_d,
            opt_r,
            stage: Stage::Init,
            cursor: 0,
            counts: StepCounts::default(),
            task_queries: 0,
            history: Vec::new(),
            rng,
            sampler: Sampler::default(),
        })
    }

    pub fn events(&self) -> Vec<Event> {
        schedule_events(&self.config.schedule)
    }

    pub fn is_done(&self) -> bool {
        self.cursor >= self.config.schedule.total_events()
    }

    /// Draw the next batch from the run's RNG.
    pub fn next_batch(&mut self, corpus: &TrainCorpus) -> Result<Batch> {
        corpus::draw_batch(
            corpus,
            self.config.models.task.task,
            self.config.schedule.batch_size,
            &mut self.sampler,
            &mut self.rng,
        )
    }

    /// One update of the network that `objective` trains. The other two
    /// networks and their optimizers are left untouched.
    pub fn training_step(&mut self, objective: Objective, batch: &Batch) -> Result<f64> {
        if !objective.legal_in(self.stage) {
            return Err(Error::IllegalObjective {
                stage: self.stage.to_string(),
                objective: objective.to_string(),
            });
        }
        let step = self.history.len() as u64 + 1;
        let non_finite = |network: Network, stage: Stage| Error::NonFinite {
            stage: stage.to_string(),
            step,
            network: network.to_string(),
        };
        let network = objective.network();
        let loss = match objective {
            Objective::GReg | Objective::GAdv | Objective::GFull => {
                let which = match objective {
                    Objective::GReg => RefinerObjective::Reg,
                    Objective::GAdv => RefinerObjective::Adversarial,
                    _ => RefinerObjective::Full,
                };
                let full = which == RefinerObjective::Full;
                let eval = refiner_gradients(
                    &self.refiner,
                    &self.disc,
                    full.then_some(&self.task),
                    &self.config.weights,
                    which,
                    &batch.input,
                    &batch.reference,
                    full.then_some(&batch.target),
                )?;
                if full {
                    self.task_queries += 1;
                }
                check_finite(eval.loss, &eval.grads)
                    .map_err(|_| non_finite(network, self.stage))?;
                self.opt_g.step(&mut self.refiner.params, &eval.grads);
                self.counts.g += 1;
                eval.loss
            }
            Objective::DPairs => {
                let fake = self.refiner.refine_batch(&batch.input, &batch.reference)?;
                let eval = discriminator_gradients(
                    &self.disc,
                    &batch.real,
                    &batch.reference,
                    &fake,
                    &batch.reference,
                )?;
                check_finite(eval.loss, &eval.grads)
                    .map_err(|_| non_finite(network, self.stage))?;
                self.opt_d.step(&mut self.disc.params, &eval.grads);
                self.counts.d += 1;
                eval.loss
            }
            Objective::RTask => {
                let refined = self.refiner.refine_batch(&batch.input, &batch.reference)?;
                let eval = self.task.evaluate(&refined, &batch.target, false)?;
                self.task_queries += 1;
                check_finite(eval.loss, &eval.params)
                    .map_err(|_| non_finite(network, self.stage))?;
                self.opt_r.step(&mut self.task.params, &eval.params);
                self.counts.r += 1;
                eval.loss
            }
        };
        self.history.push(MetricRecord {
            step,
            stage: self.stage,
            network,
            objective,
            loss,
        });
        Ok(loss)
    }

    /// Perform up to `limit` scheduled updates (all remaining ones when
    /// `None`), calling `observer` after each.
    pub fn run(
        &mut self,
        corpus: &TrainCorpus,
        limit: Option<usize>,
        observer: &mut dyn FnMut(&TrainState),
    ) -> Result<()> {
        let events = self.events();
        let end = limit.map_or(events.len(), |l| (self.cursor + l).min(events.len()));
        while self.cursor < end {
            let event = events[self.cursor];
            self.stage = event.stage;
            let batch = self.next_batch(corpus)?;
            self.training_step(event.objective, &batch)?;
            self.cursor += 1;
            observer(self);
        }
        if self.cursor >= events.len() {
            self.stage = Stage::Done;
        }
        Ok(())
    }
}

fn check_finite(loss: f64, grads: &ParamGrads) -> std::result::Result<(), ()> {
    let grads_ok = (0..grads.len()).all(|i| {
        grads
            .get(histosynth_nn::ParamId(i))
            .is_none_or(|g| g.all_finite())
    });
    if loss.is_finite() && grads_ok {
        Ok(())
    } else {
        Err(())
    }
}

/// Train from scratch through the whole schedule.
pub fn run_training(corpus: &TrainCorpus, config: TrainConfig) -> Result<TrainState> {
    let mut state = TrainState::new(config)?;
    state.run(corpus, None, &mut |_| {})?;
    Ok(state)
}
