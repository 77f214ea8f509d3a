use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, FieldError, Result};

/// Iteration counts and optimizer settings of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    /// Refiner pretraining iterations on the regularization loss alone.
    pub pretrain_g: usize,
    /// Discriminator pretraining iterations.
    pub pretrain_d: usize,
    /// Task network pretraining iterations.
    pub pretrain_r: usize,
    /// Rounds of joint refiner/discriminator training.
    pub gd_rounds: usize,
    /// Rounds of joint refiner/discriminator/task training.
    pub gdr_rounds: usize,
    pub inner_g: usize,
    pub inner_d: usize,
    pub inner_r: usize,
    pub batch_size: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub lr_r: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            pretrain_g: 500,
            pretrain_d: 500,
            pretrain_r: 500,
            gd_rounds: 100,
            gdr_rounds: 200,
            inner_g: 2,
            inner_d: 1,
            inner_r: 1,
            batch_size: 8,
            lr_g: 1e-4,
            lr_d: 1e-4,
            lr_r: 1e-4,
        }
    }
}

impl Schedule {
    /// A schedule that performs no updates at all.
    pub fn zero() -> Self {
        Self {
            pretrain_g: 0,
            pretrain_d: 0,
            pretrain_r: 0,
            gd_rounds: 0,
            gdr_rounds: 0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.batch_size == 0 {
            errors.push(FieldError::new("batch_size", "must be >= 1"));
        }
        for (f, v) in [
            ("lr_g", self.lr_g),
            ("lr_d", self.lr_d),
            ("lr_r", self.lr_r),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                errors.push(FieldError::new(f, "must be finite and >= 0"));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Params(errors))
        }
    }

    pub fn total_events(&self) -> usize {
        self.pretrain_g
            + self.pretrain_d
            + self.gd_rounds * (self.inner_g + self.inner_d)
            + self.pretrain_r
            + self.gdr_rounds * (self.inner_g + self.inner_d + self.inner_r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Init,
    PretrainG,
    PretrainD,
    GdLoop,
    PretrainR,
    GdrLoop,
    Done,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Init => "init",
            Stage::PretrainG => "pretrain_G",
            Stage::PretrainD => "pretrain_D",
            Stage::GdLoop => "gd_loop",
            Stage::PretrainR => "pretrain_R",
            Stage::GdrLoop => "gdr_loop",
            Stage::Done => "done",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Network {
    G,
    D,
    R,
}

impl fmt::Display for Network {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Network::G => "G",
            Network::D => "D",
            Network::R => "R",
        })
    }
}

/// What a single update optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Refiner on the regularization loss.
    GReg,
    /// Refiner on regularization plus adversarial loss.
    GAdv,
    /// Refiner on the full objective including the hard-example term.
    GFull,
    /// Discriminator on real versus refined pairs.
    DPairs,
    /// Task network on refined images.
    RTask,
}

impl Objective {
    pub fn network(self) -> Network {
        match self {
            Objective::GReg | Objective::GAdv | Objective::GFull => Network::G,
            Objective::DPairs => Network::D,
            Objective::RTask => Network::R,
        }
    }

    pub fn legal_in(self, stage: Stage) -> bool {
        matches!(
            (stage, self),
            (Stage::PretrainG, Objective::GReg)
                | (Stage::PretrainD, Objective::DPairs)
                | (Stage::GdLoop, Objective::GAdv | Objective::DPairs)
                | (Stage::PretrainR, Objective::RTask)
                | (
                    Stage::GdrLoop,
                    Objective::GFull | Objective::DPairs | Objective::RTask
                )
        )
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::GReg => "g_reg",
            Objective::GAdv => "g_adv",
            Objective::GFull => "g_full",
            Objective::DPairs => "d_pairs",
            Objective::RTask => "r_task",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub stage: Stage,
    pub objective: Objective,
}

impl Event {
    pub fn network(&self) -> Network {
        self.objective.network()
    }
}

/// The full ordered list of updates a schedule performs.
pub fn schedule_events(s: &Schedule) -> Vec<Event> {
    let mut out = Vec::with_capacity(s.total_events());
    let mut push = |stage, objective, n: usize| {
        for _ in 0..n {
            out.push(Event { stage, objective });
        }
    };
    push(Stage::PretrainG, Objective::GReg, s.pretrain_g);
    push(Stage::PretrainD, Objective::DPairs, s.pretrain_d);
    for _ in 0..s.gd_rounds {
        push(Stage::GdLoop, Objective::GAdv, s.inner_g);
        push(Stage::GdLoop, Objective::DPairs, s.inner_d);
    }
    push(Stage::PretrainR, Objective::RTask, s.pretrain_r);
    for _ in 0..s.gdr_rounds {
        push(Stage::GdrLoop, Objective::GFull, s.inner_g);
        push(Stage::GdrLoop, Objective::DPairs, s.inner_d);
        push(Stage::GdrLoop, Objective::RTask, s.inner_r);
    }
    out
}
