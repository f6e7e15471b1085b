//! The outer training loop: sample a batch, run one restricted-gradient step
//! (oracle or streaming), apply Adam once, log metrics, evaluate
//! periodically. Fully deterministic given the seeds.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hierarchy::{HrnnConfig, ModelSpec};
use crate::layers::{AdamHyper, AdamState, ParamSet};
use crate::metrics::{MetricRecord, MetricsSink};
use crate::real::Real;

use super::{train_step_oracle, train_step_streaming, AuxPlan, TrainBatch};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackwardKind {
    /// Full-graph backward (with barriers in the restricted modes).
    Oracle,
    /// Segment-streaming backward; restricted modes only.
    Streaming,
}

impl BackwardKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackwardKind::Oracle => "oracle",
            BackwardKind::Streaming => "streaming",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(BackwardKind::Oracle),
            "streaming" => Ok(BackwardKind::Streaming),
            other => Err(Error::Config(format!(
                "backward: unknown value '{other}' (expected oracle or streaming)"
            ))),
        }
    }
}

/// Early-stop rule: stop once an eval metric drops below a threshold.
#[derive(Clone, Debug)]
pub struct StopRule {
    pub metric: String,
    pub below: f64,
}

#[derive(Clone, Debug)]
pub struct RunSettings {
    pub steps: usize,
    /// Evaluate every this many optimizer steps (0 = final step only).
    pub eval_every: usize,
    pub seed_data: u64,
    pub backward: BackwardKind,
    pub adam: AdamHyper,
    pub stop: Option<StopRule>,
    pub check_finite: bool,
}

/// Task-specific callbacks: batch sampling and periodic evaluation.
pub struct TrainHooks<'a, F: Real> {
    pub sample: Box<dyn FnMut(&mut ChaCha8Rng) -> Result<TrainBatch<F>> + 'a>,
    pub evaluate: Box<dyn FnMut(&ParamSet<F>) -> Result<BTreeMap<String, f64>> + 'a>,
}

pub struct RunOutcome<F: Real> {
    pub params: ParamSet<F>,
    pub adam: AdamState<F>,
    pub steps_run: usize,
    pub last_eval: BTreeMap<String, f64>,
}

pub fn run_training<F: Real>(
    cfg: &HrnnConfig,
    spec: &ModelSpec,
    mut params: ParamSet<F>,
    settings: &RunSettings,
    hooks: &mut TrainHooks<'_, F>,
    sink: &mut dyn MetricsSink,
) -> Result<RunOutcome<F>> {
    cfg.validate()?;
    let mut adam = AdamState::new(&params, settings.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed_data);
    let started = Instant::now();
    let mut last_eval = BTreeMap::new();
    let mut steps_run = 0usize;

    for step in 0..settings.steps {
        let batch = (hooks.sample)(&mut rng)?;
        let plan = AuxPlan::sample(cfg, &batch, &mut rng);

        let (grads, report, ledger_peak) = match settings.backward {
            BackwardKind::Streaming => match (&batch, &plan) {
                (TrainBatch::Shared(b), AuxPlan::Shared(p)) => {
                    let (g, r, ledger) =
                        train_step_streaming(cfg, spec, &params, b, p, settings.check_finite)?;
                    (g, r, Some(ledger.paper_peak() as u64))
                }
                _ => {
                    return Err(Error::Config(
                        "streaming backward requires a shared-schedule batch".into(),
                    ))
                }
            },
            BackwardKind::Oracle => {
                let (g, r) =
                    train_step_oracle(cfg, spec, &params, &batch, &plan, settings.check_finite)?;
                (g, r, None)
            }
        };

        if !report.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!("combined loss {}", report.combined_nats),
            });
        }
        adam.step(&mut params, &grads)?;
        steps_run = step + 1;

        sink.record(&MetricRecord::train(
            step as u64,
            &report,
            ledger_peak,
            started.elapsed().as_secs_f64() * 1e3,
        ))?;

        let due = (settings.eval_every > 0 && steps_run % settings.eval_every == 0)
            || steps_run == settings.steps;
        if due {
            let metrics = (hooks.evaluate)(&params)?;
            sink.record(&MetricRecord::eval(
                steps_run as u64,
                metrics.clone(),
                started.elapsed().as_secs_f64() * 1e3,
            ))?;
            last_eval = metrics;
            if let Some(rule) = &settings.stop {
                if last_eval.get(&rule.metric).is_some_and(|&v| v < rule.below) {
                    break;
                }
            }
        }
    }

    Ok(RunOutcome {
        params,
        adam,
        steps_run,
        last_eval,
    })
}
