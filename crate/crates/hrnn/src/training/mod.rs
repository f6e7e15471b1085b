//! Restricted-gradient training in two interchangeable implementations: a
//! full-graph oracle (barriers on the upward edges, one backward over the
//! whole unroll) and the memory-frugal streaming schedule that backprops each
//! segment the moment its superior level ticks. The two produce the same
//! gradients; the acceptance suite holds them to 1e-9 relative error.

mod losses;
mod oracle;
mod run;
mod streaming;

pub mod ledger;

pub use ledger::{full_tbptt_count, memory_formula, LedgerEvent, MemoryLedger, VecKind};
pub use losses::{aux_loss_at_tick, AuxTarget};
pub use oracle::train_step_oracle;
pub use run::{run_training, BackwardKind, RunOutcome, RunSettings, StopRule, TrainHooks};
pub use streaming::train_step_streaming;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::hierarchy::{HrnnConfig, TickSchedule};
use crate::real::Real;

/// Step targets of one batch.
#[derive(Clone, Debug)]
pub enum TaskTargets {
    /// A class per step per element, with a per-step mask saying which steps
    /// carry task loss. `classes[t]` has one entry per batch element.
    PerStep {
        classes: Vec<Vec<usize>>,
        mask: Vec<bool>,
    },
    /// Classification at the final step only.
    FinalStep { classes: Vec<usize> },
}

impl TaskTargets {
    pub fn loss_steps(&self, t_len: usize) -> Vec<usize> {
        match self {
            TaskTargets::PerStep { mask, .. } => {
                (0..t_len).filter(|&t| mask.get(t).copied().unwrap_or(false)).collect()
            }
            TaskTargets::FinalStep { .. } => vec![t_len - 1],
        }
    }

    pub fn classes_at(&self, t: usize) -> &[usize] {
        match self {
            TaskTargets::PerStep { classes, .. } => &classes[t],
            TaskTargets::FinalStep { classes } => classes,
        }
    }

    pub fn final_only(&self) -> bool {
        matches!(self, TaskTargets::FinalStep { .. })
    }
}

/// A batch whose elements share one tick schedule, laid out as (D, B)
/// matrices per step.
pub struct SharedBatch<F: Real> {
    pub inputs: Vec<Tensor<F>>,
    /// Class index per step per element, for discrete inputs (decoder
    /// targets). None for continuous inputs.
    pub input_classes: Option<Vec<Vec<usize>>>,
    pub targets: TaskTargets,
    pub schedule: TickSchedule,
    pub batch: usize,
}

/// One sequence with its own schedule (boundary-driven tasks).
pub struct ElementSeq<F: Real> {
    pub inputs: Vec<Tensor<F>>,
    pub input_classes: Option<Vec<usize>>,
    pub targets: TaskTargets,
    pub schedule: TickSchedule,
}

pub enum TrainBatch<F: Real> {
    Shared(SharedBatch<F>),
    /// Independent per-element unrolls sharing one parameter binding; used
    /// when tick schedules are data-driven and differ across elements.
    PerElement(Vec<ElementSeq<F>>),
}

impl<F: Real> TrainBatch<F> {
    pub fn steps(&self) -> usize {
        match self {
            TrainBatch::Shared(b) => b.inputs.len(),
            TrainBatch::PerElement(els) => els.iter().map(|e| e.inputs.len()).max().unwrap_or(0),
        }
    }
}

/// Pre-sampled auxiliary reconstruction indices: for each producing level,
/// for each consumer tick, a 1-based "i-th previous input" per batch element.
/// Sampling these up front keeps the oracle and streaming paths (and repeated
/// runs) on identical draws.
#[derive(Clone, Debug, Default)]
pub struct AuxDraws {
    /// draws[j] = list of (consumer tick step, i per element).
    pub draws: Vec<Vec<(usize, Vec<usize>)>>,
}

impl AuxDraws {
    pub fn sample(
        cfg: &HrnnConfig,
        schedule: &TickSchedule,
        batch: usize,
        rng: &mut ChaCha8Rng,
    ) -> AuxDraws {
        let levels = cfg.levels();
        let mut draws = Vec::with_capacity(levels - 1);
        for j in 0..levels - 1 {
            let mut level_draws = Vec::new();
            if cfg.beta[j] > 0.0 {
                for t in schedule.aux_ticks(j + 1) {
                    let seg = schedule.segment_before(j + 1, t).len();
                    let is: Vec<usize> =
                        (0..batch).map(|_| rng.gen_range(1..=seg.max(1))).collect();
                    level_draws.push((t, is));
                }
            }
            draws.push(level_draws);
        }
        AuxDraws { draws }
    }

    pub fn at(&self, level: usize, tick: usize) -> Option<&Vec<usize>> {
        self.draws
            .get(level)
            .and_then(|d| d.iter().find(|(t, _)| *t == tick).map(|(_, is)| is))
    }
}

pub enum AuxPlan {
    Shared(AuxDraws),
    PerElement(Vec<AuxDraws>),
}

impl AuxPlan {
    pub fn sample<F: Real>(
        cfg: &HrnnConfig,
        batch: &TrainBatch<F>,
        rng: &mut ChaCha8Rng,
    ) -> AuxPlan {
        match batch {
            TrainBatch::Shared(b) => {
                AuxPlan::Shared(AuxDraws::sample(cfg, &b.schedule, b.batch, rng))
            }
            TrainBatch::PerElement(els) => AuxPlan::PerElement(
                els.iter()
                    .map(|e| AuxDraws::sample(cfg, &e.schedule, 1, rng))
                    .collect(),
            ),
        }
    }
}

/// Loss components of one optimizer step, in nats.
#[derive(Clone, Debug)]
pub struct LossReport {
    pub task_nats: f64,
    /// Mean auxiliary reconstruction loss per producing level (0.0 where the
    /// weight is zero and the decoder was skipped).
    pub aux_nats: Vec<f64>,
    pub beta: Vec<f64>,
    pub combined_nats: f64,
}

impl LossReport {
    pub fn assemble(task_nats: f64, aux_nats: Vec<f64>, beta: Vec<f64>) -> LossReport {
        let mut combined = task_nats;
        for (a, b) in aux_nats.iter().zip(&beta) {
            combined += b * a;
        }
        LossReport {
            task_nats,
            aux_nats,
            beta,
            combined_nats: combined,
        }
    }

    pub fn task_bits(&self) -> f64 {
        self.task_nats / std::f64::consts::LN_2
    }

    pub fn is_finite(&self) -> bool {
        self.combined_nats.is_finite()
            && self.task_nats.is_finite()
            && self.aux_nats.iter().all(|a| a.is_finite())
    }
}

/// Weight given to each task-loss step so that the reported task loss is the
/// mean over loss-carrying steps.
pub(crate) fn task_step_weight(targets: &TaskTargets, t_len: usize) -> Result<f64> {
    let n = targets.loss_steps(t_len).len();
    if n == 0 {
        return Err(Error::Config("batch carries no task-loss steps".into()));
    }
    Ok(1.0 / n as f64)
}
