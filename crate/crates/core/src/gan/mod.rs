//! Style-conditioned refiner and discriminator, their losses, and the
//! gradient assembly that ties the refiner to the discriminator and the task
//! network.

mod discriminator;
mod loss;
mod refiner;

pub use discriminator::{DiscriminatorConfig, DiscriminatorModel};
pub use loss::{
    bce_loss, ce_loss, disc_loss, hard_loss, real_loss, reg_loss, softmax, total_refiner_loss,
    LossGrad, LossWeights, PROB_EPS,
};
pub use refiner::{RefinerConfig, RefinerModel};

use histosynth_nn::{Graph, ParamGrads, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::{TaskModel, TaskTarget};

/// Which terms of the refiner objective are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefinerObjective {
    /// `α L_reg`
    Reg,
    /// `α L_reg + β L_real`
    Adversarial,
    /// `α L_reg + β L_real + γ L_hard`
    Full,
}

#[derive(Debug, Clone)]
pub struct RefinerEval {
    pub loss: f64,
    pub l_reg: f64,
    pub l_real: Option<f64>,
    /// Task loss seen by the frozen task network (the hard term is its negation).
    pub l_task: Option<f64>,
    pub grads: ParamGrads,
    pub refined: Tensor,
}

/// Objective value and refiner parameter gradients for one batch.
///
/// The discriminator and task network are only read, never updated; their
/// gradients are used to carry the signal back to the refined images. The
/// task network is consulted only for [`RefinerObjective::Full`].
#[allow(clippy::too_many_arguments)]
pub fn refiner_gradients(
    refiner: &RefinerModel,
    disc: &DiscriminatorModel,
    task: Option<&TaskModel>,
    weights: &LossWeights,
    objective: RefinerObjective,
    input: &Tensor,
    reference: &Tensor,
    target: Option<&TaskTarget>,
) -> Result<RefinerEval> {
    let mut g = Graph::new(&refiner.params);
    let i = g.input(input.clone(), false);
    let s = g.input(reference.clone(), false);
    let out = refiner.forward(&mut g, i, s)?;
    let refined = g.value(out).clone();

    let reg = reg_loss(input, &refined, weights.lambda1, weights.lambda2)?;
    let mut seed = reg.grad.scale(weights.alpha);
    let mut l_real = None;
    let mut l_task = None;

    if objective != RefinerObjective::Reg {
        let mut dg = Graph::new(&disc.params);
        let cand = dg.input(refined.clone(), true);
        let r = dg.input(reference.clone(), false);
        let p = disc.forward(&mut dg, cand, r)?;
        let (value, gp) = real_loss(dg.value(p).data());
        let grads = dg.backward(p, &Tensor::from_vec(dg.value(p).dims(), gp)?)?;
        if let Some(gc) = grads.node(cand) {
            seed.add_scaled(gc, weights.beta);
        }
        l_real = Some(value);
    }

    if objective == RefinerObjective::Full {
        let task =
            task.ok_or_else(|| Error::Invalid("full objective needs a task network".into()))?;
        let target =
            target.ok_or_else(|| Error::Invalid("full objective needs task targets".into()))?;
        let eval = task.evaluate(&refined, target, true)?;
        if let Some(gi) = &eval.input_grad {
            // hard term is -L_R
            seed.add_scaled(gi, -weights.gamma);
        }
        l_task = Some(eval.loss);
    }

    let loss = total_refiner_loss(
        weights,
        reg.value,
        l_real.unwrap_or(0.0),
        l_task.map(hard_loss).unwrap_or(0.0),
    );
    let grads = g.backward(out, &seed)?.into_params();
    Ok(RefinerEval {
        loss,
        l_reg: reg.value,
        l_real,
        l_task,
        grads,
        refined,
    })
}

#[derive(Debug, Clone)]
pub struct DiscriminatorEval {
    pub loss: f64,
    pub grads: ParamGrads,
    pub real_scores: Vec<f64>,
    pub fake_scores: Vec<f64>,
}

/// Discriminator loss on real pairs `(real, reference)` and synthetic pairs
/// `(fake, fake_reference)`, with parameter gradients.
pub fn discriminator_gradients(
    disc: &DiscriminatorModel,
    real: &Tensor,
    reference: &Tensor,
    fake: &Tensor,
    fake_reference: &Tensor,
) -> Result<DiscriminatorEval> {
    let run =
        |cand: &Tensor, refr: &Tensor| -> Result<(Vec<f64>, Graph<'_>, histosynth_nn::NodeId)> {
            let mut g = Graph::new(&disc.params);
            let c = g.input(cand.clone(), false);
            let r = g.input(refr.clone(), false);
            let p = disc.forward(&mut g, c, r)?;
            Ok((g.value(p).data().to_vec(), g, p))
        };
    let (real_scores, g_real, p_real) = run(real, reference)?;
    let (fake_scores, g_fake, p_fake) = run(fake, fake_reference)?;
    let (loss, gr, gf) = disc_loss(&real_scores, &fake_scores);
    let mut grads = g_real
        .backward(p_real, &Tensor::from_vec(g_real.value(p_real).dims(), gr)?)?
        .into_params();
    let fake_grads = g_fake
        .backward(p_fake, &Tensor::from_vec(g_fake.value(p_fake).dims(), gf)?)?
        .into_params();
    grads.add_scaled(&fake_grads, 1.0);
    Ok(DiscriminatorEval {
        loss,
        grads,
        real_scores,
        fake_scores,
    })
}
