//! Full-graph training step: unroll everything on one tape (per backward
//! window), place barriers on upward edges per the mode, run one backward.
//! Memory grows with the window length; this path exists as the equivalence
//! oracle for the streaming schedule and as the trainer for the
//! unrestricted modes.

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::hierarchy::{
    forward_sequence, BoundModel, ForwardLog, HeadMode, HrnnConfig, LevelState, Mode, ModelSpec,
    TickSchedule,
};
use crate::layers::{GradMap, ParamSet};
use crate::real::Real;

use super::losses::{aux_loss_at_tick, gather_previous, AuxTarget};
use super::{task_step_weight, AuxDraws, AuxPlan, LossReport, SharedBatch, TrainBatch};

pub fn train_step_oracle<F: Real>(
    cfg: &HrnnConfig,
    spec: &ModelSpec,
    params: &ParamSet<F>,
    batch: &TrainBatch<F>,
    plan: &AuxPlan,
    check_finite: bool,
) -> Result<(GradMap<F>, LossReport)> {
    cfg.validate()?;
    match (batch, plan) {
        (TrainBatch::Shared(b), AuxPlan::Shared(p)) => {
            shared_step(cfg, spec, params, b, p, check_finite)
        }
        (TrainBatch::PerElement(els), AuxPlan::PerElement(ps)) => {
            per_element_step(cfg, spec, params, els, ps, check_finite)
        }
        _ => Err(Error::Config("batch and aux plan layouts disagree".into())),
    }
}

/// Accumulate `term` into the running scalar loss.
fn push_term<F: Real>(
    tape: &mut Tape<F>,
    acc: &mut Option<Tensor<F>>,
    term: Tensor<F>,
) -> Result<()> {
    *acc = Some(match acc.take() {
        Some(prev) => tape.add(&prev, &term)?,
        None => term,
    });
    Ok(())
}

struct AuxBookkeeping {
    /// Evaluated reconstruction events per producing level.
    n_events: Vec<usize>,
    /// Sum of unweighted tick losses per level (for the report).
    sums: Vec<f64>,
}

impl AuxBookkeeping {
    fn report(&self) -> Vec<f64> {
        self.n_events
            .iter()
            .zip(&self.sums)
            .map(|(&n, &s)| if n > 0 { s / n as f64 } else { 0.0 })
            .collect()
    }
}

fn shared_step<F: Real>(
    cfg: &HrnnConfig,
    spec: &ModelSpec,
    params: &ParamSet<F>,
    batch: &SharedBatch<F>,
    plan: &AuxDraws,
    check_finite: bool,
) -> Result<(GradMap<F>, LossReport)> {
    let t_eff = batch.inputs.len();
    if batch.schedule.t_max() != t_eff {
        return Err(Error::Schedule(format!(
            "schedule covers {} steps, batch has {t_eff}",
            batch.schedule.t_max()
        )));
    }
    let window = cfg.backward_window()?.min(t_eff);
    let w_task = task_step_weight(&batch.targets, t_eff)?;
    let loss_steps: std::collections::BTreeSet<usize> =
        batch.targets.loss_steps(t_eff).into_iter().collect();

    // An auxiliary event is evaluated iff its tick lies strictly inside a
    // backward window; window-boundary ticks are truncated away.
    let levels = cfg.levels();
    let mut book = AuxBookkeeping {
        n_events: vec![0; levels - 1],
        sums: vec![0.0; levels - 1],
    };
    for j in 0..levels - 1 {
        book.n_events[j] = plan.draws[j].iter().filter(|(t, _)| t % window != 0).count();
    }

    let mut grad_acc = GradMap::new();
    let mut task_nats = 0.0f64;
    let mut carried: Option<Vec<LevelState<F>>> = None;

    let mut t0 = 0usize;
    while t0 < t_eff {
        let t1 = (t0 + window).min(t_eff);
        let mut tape: Tape<F> = Tape::new();
        tape.set_check_finite(check_finite);
        let model = BoundModel::bind(&mut tape, params, spec, true)?;
        let head_mode = if batch.targets.final_only() {
            HeadMode::OnlyAt(t_eff - 1)
        } else {
            HeadMode::Every
        };
        let log = forward_sequence(
            &mut tape,
            &model,
            cfg,
            &batch.schedule,
            &batch.inputs[t0..t1],
            carried.take(),
            t0,
            head_mode,
        )?;

        let mut loss: Option<Tensor<F>> = None;

        for t in t0..t1 {
            if !loss_steps.contains(&t) {
                continue;
            }
            let y = log.outputs[t - t0]
                .as_ref()
                .ok_or_else(|| Error::Config(format!("no head output at loss step {t}")))?;
            let ce = tape.softmax_cross_entropy(y, batch.targets.classes_at(t))?;
            task_nats += ce.item().as_f64() * w_task;
            let term = tape.scale(&ce, F::from_f64(w_task))?;
            push_term(&mut tape, &mut loss, term)?;
        }

        add_aux_terms(
            cfg, &mut tape, &model, &log, &batch.schedule, plan, &mut book, &mut loss,
            t0, t1, |j, t, is, seg_len| aux_target_shared(cfg, batch, &log, j, t, is, seg_len),
        )?;

        if let Some(loss) = loss {
            let grads = tape.backward(&loss)?;
            for (name, tensor) in model.named_tensors(spec) {
                if let Some(g) = grads.get(tensor) {
                    grad_acc.accumulate(&name, g);
                }
            }
        }
        carried = Some(detach_states(&log.finals));
        t0 = t1;
    }

    let report = LossReport::assemble(task_nats, book.report(), cfg.beta.clone());
    Ok((grad_acc, report))
}

/// Build the reconstruction target for producing level `j` at tick `t` in a
/// shared batch. Targets are detached values (or plain class indices), which
/// realizes the barrier on deep-level targets.
#[allow(clippy::too_many_arguments)]
fn aux_target_shared<F: Real>(
    cfg: &HrnnConfig,
    batch: &SharedBatch<F>,
    log: &ForwardLog<F>,
    j: usize,
    t: usize,
    is: &[usize],
    seg_len: usize,
) -> Result<AuxTarget<F>> {
    if j == 0 {
        if cfg.discrete_input {
            let classes = batch
                .input_classes
                .as_ref()
                .ok_or_else(|| Error::Config("discrete task without input classes".into()))?;
            Ok(AuxTarget::Classes(
                is.iter()
                    .enumerate()
                    .map(|(b, &i)| classes[t - i][b])
                    .collect(),
            ))
        } else {
            // Inputs are data; the segment ending at t is [t - seg_len, t).
            let sources = batch.inputs[t - seg_len..t].to_vec();
            Ok(AuxTarget::Values(gather_previous(&sources, is)))
        }
    } else {
        // The i-th previous input of level j is the i-th latest up-sent state
        // of level j-1; detaching the values realizes the target barrier.
        let sent = &log.up_sent[j - 1];
        let seg: Vec<Tensor<F>> = sent
            .iter()
            .filter(|(tick, _)| *tick < t)
            .map(|(_, tensor)| Tensor::new(tensor.shape().to_vec(), tensor.to_vec()))
            .collect();
        let tail: Vec<Tensor<F>> = seg.iter().rev().take(seg_len).rev().cloned().collect();
        Ok(AuxTarget::Values(gather_previous(&tail, is)))
    }
}

/// Walk the plan's ticks inside (t0, t1) and append beta-weighted terms.
#[allow(clippy::too_many_arguments)]
fn add_aux_terms<F: Real>(
    cfg: &HrnnConfig,
    tape: &mut Tape<F>,
    model: &BoundModel<F>,
    log: &ForwardLog<F>,
    schedule: &TickSchedule,
    plan: &AuxDraws,
    book: &mut AuxBookkeeping,
    loss: &mut Option<Tensor<F>>,
    t0: usize,
    t1: usize,
    mut target_of: impl FnMut(usize, usize, &[usize], usize) -> Result<AuxTarget<F>>,
) -> Result<()> {
    for j in 0..cfg.levels() - 1 {
        if cfg.beta[j] == 0.0 || book.n_events[j] == 0 {
            continue;
        }
        let weight = cfg.beta[j] / book.n_events[j] as f64;
        for (t, is) in &plan.draws[j] {
            let t = *t;
            if t <= t0 || t >= t1 {
                continue;
            }
            let h_up = log.up_sent[j]
                .iter()
                .find(|(tick, _)| *tick == t)
                .map(|(_, tensor)| tensor)
                .ok_or_else(|| Error::Schedule(format!("no up-sent state at tick {t}")))?;
            let seg_len = schedule.segment_before(j + 1, t).len();
            let target = target_of(j, t, is, seg_len)?;
            let tick_loss =
                aux_loss_at_tick(tape, &model.decoders[j], h_up, &target, is, seg_len)?;
            book.sums[j] += tick_loss.item().as_f64();
            let term = tape.scale(&tick_loss, F::from_f64(weight))?;
            push_term(tape, loss, term)?;
        }
    }
    Ok(())
}

fn detach_states<F: Real>(states: &[LevelState<F>]) -> Vec<LevelState<F>> {
    states
        .iter()
        .map(|s| LevelState {
            h: Tensor::new(s.h.shape().to_vec(), s.h.to_vec()),
            c: Tensor::new(s.c.shape().to_vec(), s.c.to_vec()),
        })
        .collect()
}

fn per_element_step<F: Real>(
    cfg: &HrnnConfig,
    spec: &ModelSpec,
    params: &ParamSet<F>,
    elements: &[super::ElementSeq<F>],
    plans: &[AuxDraws],
    check_finite: bool,
) -> Result<(GradMap<F>, LossReport)> {
    if cfg.mode == Mode::MrHrnn {
        return Err(Error::Config(
            "per-element batches do not support the shortened-window mode".into(),
        ));
    }
    if elements.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let levels = cfg.levels();

    let n_loss_steps: usize = elements
        .iter()
        .map(|e| e.targets.loss_steps(e.inputs.len()).len())
        .sum();
    if n_loss_steps == 0 {
        return Err(Error::Config("batch carries no task-loss steps".into()));
    }
    let w_task = 1.0 / n_loss_steps as f64;

    let mut book = AuxBookkeeping {
        n_events: vec![0; levels - 1],
        sums: vec![0.0; levels - 1],
    };
    for j in 0..levels - 1 {
        book.n_events[j] = plans.iter().map(|p| p.draws[j].len()).sum();
    }

    let mut tape: Tape<F> = Tape::new();
    tape.set_check_finite(check_finite);
    let model = BoundModel::bind(&mut tape, params, spec, true)?;
    let mut loss: Option<Tensor<F>> = None;
    let mut task_nats = 0.0f64;

    for (e, plan) in elements.iter().zip(plans) {
        let t_len = e.inputs.len();
        if e.schedule.t_max() != t_len {
            return Err(Error::Schedule(format!(
                "element schedule covers {} steps, element has {t_len}",
                e.schedule.t_max()
            )));
        }
        let head_mode = if e.targets.final_only() {
            HeadMode::OnlyAt(t_len - 1)
        } else {
            HeadMode::Every
        };
        let log = forward_sequence(
            &mut tape, &model, cfg, &e.schedule, &e.inputs, None, 0, head_mode,
        )?;

        for t in e.targets.loss_steps(t_len) {
            let y = log.outputs[t]
                .as_ref()
                .ok_or_else(|| Error::Config(format!("no head output at loss step {t}")))?;
            let ce = tape.softmax_cross_entropy(y, e.targets.classes_at(t))?;
            task_nats += ce.item().as_f64() * w_task;
            let term = tape.scale(&ce, F::from_f64(w_task))?;
            push_term(&mut tape, &mut loss, term)?;
        }

        add_aux_terms(
            cfg, &mut tape, &model, &log, &e.schedule, plan, &mut book, &mut loss,
            0, t_len, |j, t, is, seg_len| {
                if j == 0 {
                    if cfg.discrete_input {
                        let classes = e.input_classes.as_ref().ok_or_else(|| {
                            Error::Config("discrete task without input classes".into())
                        })?;
                        Ok(AuxTarget::Classes(
                            is.iter().map(|&i| classes[t - i]).collect(),
                        ))
                    } else {
                        let lo = t.saturating_sub(seg_len);
                        let sources: Vec<Tensor<F>> = e.inputs[lo..t].to_vec();
                        Ok(AuxTarget::Values(gather_previous(&sources, is)))
                    }
                } else {
                    let sent = &log.up_sent[j - 1];
                    let seg: Vec<Tensor<F>> = sent
                        .iter()
                        .filter(|(tick, _)| *tick < t)
                        .map(|(_, tensor)| Tensor::new(tensor.shape().to_vec(), tensor.to_vec()))
                        .collect();
                    let tail: Vec<Tensor<F>> =
                        seg.iter().rev().take(seg_len).rev().cloned().collect();
                    Ok(AuxTarget::Values(gather_previous(&tail, is)))
                }
            },
        )?;
    }

    let mut grad_acc = GradMap::new();
    if let Some(loss) = loss {
        let grads = tape.backward(&loss)?;
        for (name, tensor) in model.named_tensors(spec) {
            if let Some(g) = grads.get(tensor) {
                grad_acc.accumulate(&name, g);
            }
        }
    }
    let report = LossReport::assemble(task_nats, book.report(), cfg.beta.clone());
    Ok((grad_acc, report))
}
