//! Streaming restricted-gradient training step.
//!
//! One forward sweep. Each level records its live segment on its own small
//! tape; upward state exchange passes detached values, which realizes the
//! gradient restriction without barrier nodes. The moment level j+1 ticks,
//! the just-finished level-j segment is backpropagated over its local losses
//! (task terms inside the segment plus that tick's auxiliary reconstruction),
//! its parameter gradients are accumulated, the gradient w.r.t. the injected
//! superior state is stored as a seed for level j+1, and the segment's states
//! are released. At the end of the sequence the surviving segments close
//! bottom-up, the topmost over its whole run. Gradients equal the full-graph
//! oracle's; only the peak number of live state vectors differs.

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::hierarchy::{HrnnConfig, LevelState, Mode, ModelSpec};
use crate::layers::{lstm_step, BoundDecoder, BoundHead, BoundLstm, GradMap, ParamSet};
use crate::real::Real;

use super::ledger::{MemoryLedger, VecKind};
use super::losses::{aux_loss_at_tick, gather_previous, AuxTarget};
use super::{task_step_weight, AuxDraws, LossReport, SharedBatch};

struct LevelRun<F: Real> {
    tape: Tape<F>,
    lstm: BoundLstm<F>,
    decoder: Option<BoundDecoder<F>>,
    head: Option<BoundHead<F>>,
    /// Retained steps of the live segment, on this tape.
    states: Vec<LevelState<F>>,
    state_ticks: Vec<usize>,
    /// Inputs consumed this segment (detached), in consumption order.
    inputs_buf: Vec<Tensor<F>>,
    /// Leaf for the superior state injected at segment start.
    injection: Option<Tensor<F>>,
    /// Stored restricted gradients addressed to my states, keyed by tick.
    seeds: Vec<(usize, Vec<F>)>,
    loss: Option<Tensor<F>>,
    seg_start: usize,
}

struct Engine<'a, F: Real> {
    cfg: &'a HrnnConfig,
    spec: &'a ModelSpec,
    params: &'a ParamSet<F>,
    batch: &'a SharedBatch<F>,
    plan: &'a AuxDraws,
    check_finite: bool,
    w_task: f64,
    n_events: Vec<usize>,
    runs: Vec<Option<LevelRun<F>>>,
    /// Final state of the segment that closed this step, bridging the gap
    /// until the superior consumes it.
    last_closed_h: Vec<Option<Tensor<F>>>,
    grad_acc: GradMap<F>,
    ledger: MemoryLedger,
    task_nats: f64,
    aux_sums: Vec<f64>,
}

pub fn train_step_streaming<F: Real>(
    cfg: &HrnnConfig,
    spec: &ModelSpec,
    params: &ParamSet<F>,
    batch: &SharedBatch<F>,
    plan: &AuxDraws,
    check_finite: bool,
) -> Result<(GradMap<F>, LossReport, MemoryLedger)> {
    cfg.validate()?;
    if !matches!(cfg.mode, Mode::GrHrnn | Mode::Ours) {
        return Err(Error::Config(format!(
            "streaming backward requires a gradient-restricted mode, got {}",
            cfg.mode.as_str()
        )));
    }
    let t_eff = batch.inputs.len();
    if batch.schedule.t_max() != t_eff {
        return Err(Error::Schedule(format!(
            "schedule covers {} steps, batch has {t_eff}",
            batch.schedule.t_max()
        )));
    }
    let levels = cfg.levels();
    let mut engine = Engine {
        cfg,
        spec,
        params,
        batch,
        plan,
        check_finite,
        w_task: task_step_weight(&batch.targets, t_eff)?,
        n_events: (0..levels - 1).map(|j| plan.draws[j].len()).collect(),
        runs: (0..levels).map(|_| None).collect(),
        last_closed_h: (0..levels).map(|_| None).collect(),
        grad_acc: GradMap::new(),
        ledger: MemoryLedger::new(levels),
        task_nats: 0.0,
        aux_sums: vec![0.0; levels - 1],
    };
    engine.sweep(t_eff)?;

    let report = LossReport::assemble(
        engine.task_nats,
        engine
            .n_events
            .iter()
            .zip(&engine.aux_sums)
            .map(|(&n, &s)| if n > 0 { s / n as f64 } else { 0.0 })
            .collect(),
        cfg.beta.clone(),
    );
    Ok((engine.grad_acc, report, engine.ledger))
}

impl<'a, F: Real> Engine<'a, F> {
    fn sweep(&mut self, t_eff: usize) -> Result<()> {
        let levels = self.cfg.levels();
        let schedule = &self.batch.schedule;
        let loss_steps: std::collections::BTreeSet<usize> = self
            .batch
            .targets
            .loss_steps(t_eff)
            .into_iter()
            .collect();

        for t in 0..t_eff {
            // Close finished segments bottom-up: level j closes when its
            // superior ticks. The stored gradient each closure produces is
            // seeded into level j+1 before that level itself can close.
            if t > 0 {
                let mut j = 0;
                while j + 1 < levels && schedule.is_tick(j + 1, t) {
                    self.close_segment(j, Some(t))?;
                    j += 1;
                }
            }

            // Updates top-down, so a freshly updated superior state is
            // available for injection into the level below.
            for j in (1..levels).rev() {
                if schedule.is_tick(j, t) {
                    self.level_update(j, t)?;
                }
            }
            self.level0_step(t, &loss_steps)?;
        }

        // End of sequence: every surviving segment closes, unconsumed.
        for j in 0..levels {
            self.close_segment(j, None)?;
        }
        Ok(())
    }

    /// Current state value of a level, detached: the open segment's latest
    /// state, or the snapshot of a segment that closed earlier in this step,
    /// or zeros before any update.
    fn state_value(&self, j: usize) -> Tensor<F> {
        if let Some(s) = self.runs[j].as_ref().and_then(|r| r.states.last()) {
            return Tensor::new(s.h.shape().to_vec(), s.h.to_vec());
        }
        if let Some(snapshot) = &self.last_closed_h[j] {
            return snapshot.clone();
        }
        LevelState::zeros(self.cfg.level_sizes[j], self.batch.batch).h
    }

    fn start_segment(&mut self, j: usize, t: usize, injection_value: Option<Tensor<F>>) -> Result<()> {
        debug_assert!(self.runs[j].is_none());
        let mut tape: Tape<F> = Tape::new();
        tape.set_check_finite(self.check_finite);
        let lstm = BoundLstm::bind(&mut tape, self.params, &self.spec.lstms[j], true)?;
        let decoder = if j + 1 < self.cfg.levels() && self.cfg.beta[j] > 0.0 {
            Some(BoundDecoder::bind(
                &mut tape,
                self.params,
                &self.spec.decoders[j],
                true,
            )?)
        } else {
            None
        };
        let head = if j == 0 {
            Some(BoundHead::bind(&mut tape, self.params, &self.spec.head, true)?)
        } else {
            None
        };
        let injection = match injection_value {
            Some(v) => Some(tape.leaf(v.shape().to_vec(), v.to_vec())?),
            None => None,
        };
        self.runs[j] = Some(LevelRun {
            tape,
            lstm,
            decoder,
            head,
            states: Vec::new(),
            state_ticks: Vec::new(),
            inputs_buf: Vec::new(),
            injection,
            seeds: Vec::new(),
            loss: None,
            seg_start: t,
        });
        Ok(())
    }

    /// Update of level j >= 1 at its tick `t`.
    fn level_update(&mut self, j: usize, t: usize) -> Result<()> {
        let levels = self.cfg.levels();
        let batch = self.batch.batch;
        let upsent = self.state_value(j - 1);
        let fresh = t == 0 || (j + 1 < levels && self.batch.schedule.is_tick(j + 1, t));
        if fresh {
            // The superior updated earlier in this step's top-down pass.
            let injection_value = if j + 1 < levels {
                Some(self.state_value(j + 1))
            } else {
                None
            };
            self.start_segment(j, t, injection_value)?;
        }

        let run = self.runs[j].as_mut().expect("segment open");
        let input = if j + 1 < levels {
            let inj = if fresh {
                run.injection.clone().expect("injection at segment start")
            } else {
                LevelState::zeros(self.cfg.level_sizes[j + 1], batch).h
            };
            run.tape.concat(&[&upsent, &inj])?
        } else {
            upsent.clone()
        };
        let state_in = match run.states.last() {
            Some(s) if !fresh => s.clone(),
            _ => LevelState::zeros(self.cfg.level_sizes[j], batch),
        };
        let (h, c) = lstm_step(&mut run.tape, &run.lstm, &state_in.h, &state_in.c, &input)?;
        run.states.push(LevelState { h, c });
        run.state_ticks.push(t);
        run.inputs_buf.push(upsent);
        let elems = self.cfg.level_sizes[j] * batch;
        self.ledger.retain(j, VecKind::StateH, elems);
        self.ledger.retain(j, VecKind::StateC, elems);
        self.ledger
            .retain(j, VecKind::Upsent, self.cfg.level_sizes[j - 1] * batch);
        Ok(())
    }

    fn level0_step(
        &mut self,
        t: usize,
        loss_steps: &std::collections::BTreeSet<usize>,
    ) -> Result<()> {
        let levels = self.cfg.levels();
        let batch = self.batch.batch;
        let fresh = t == 0 || (levels > 1 && self.batch.schedule.is_tick(1, t));
        if fresh {
            let injection_value = if levels > 1 {
                Some(self.state_value(1))
            } else {
                None
            };
            self.start_segment(0, t, injection_value)?;
        }
        let x = self.batch.inputs[t].clone();
        let run = self.runs[0].as_mut().expect("segment open");
        let input = if levels > 1 {
            let inj = if fresh {
                run.injection.clone().expect("injection at segment start")
            } else {
                LevelState::zeros(self.cfg.level_sizes[1], batch).h
            };
            run.tape.concat(&[&x, &inj])?
        } else {
            x.clone()
        };
        let state_in = match run.states.last() {
            Some(s) if !fresh => s.clone(),
            _ => LevelState::zeros(self.cfg.level_sizes[0], batch),
        };
        let (h, c) = lstm_step(&mut run.tape, &run.lstm, &state_in.h, &state_in.c, &input)?;
        run.states.push(LevelState { h, c });
        run.state_ticks.push(t);
        run.inputs_buf.push(x);
        let elems = self.cfg.level_sizes[0] * batch;
        self.ledger.retain(0, VecKind::StateH, elems);
        self.ledger.retain(0, VecKind::StateC, elems);

        if loss_steps.contains(&t) {
            let head = run.head.as_ref().expect("head bound on level 0");
            let h_now = run.states.last().unwrap().h.clone();
            let y = head.apply(&mut run.tape, &h_now)?;
            let ce = run
                .tape
                .softmax_cross_entropy(&y, self.batch.targets.classes_at(t))?;
            self.task_nats += ce.item().as_f64() * self.w_task;
            let term = run.tape.scale(&ce, F::from_f64(self.w_task))?;
            run.loss = Some(match run.loss.take() {
                Some(prev) => run.tape.add(&prev, &term)?,
                None => term,
            });
        }
        Ok(())
    }

    /// Backprop and drop the live segment of level j. `consumed_at` is the
    /// superior tick consuming the final state (None at end of sequence:
    /// no consumption, no auxiliary loss).
    fn close_segment(&mut self, j: usize, consumed_at: Option<usize>) -> Result<()> {
        let mut run = self.runs[j].take().ok_or_else(|| {
            Error::Schedule(format!("closing level {j} with no open segment"))
        })?;
        let batch = self.batch.batch;
        let levels = self.cfg.levels();
        self.last_closed_h[j] = run
            .states
            .last()
            .map(|s| Tensor::new(s.h.shape().to_vec(), s.h.to_vec()));

        // Auxiliary reconstruction term for the consumed up-sent state.
        if let Some(t) = consumed_at {
            if self.cfg.beta[j] > 0.0 && !run.states.is_empty() {
                let is = self
                    .plan
                    .at(j, t)
                    .ok_or_else(|| {
                        Error::Schedule(format!("no auxiliary draw for level {j} tick {t}"))
                    })?
                    .clone();
                let seg_len = run.inputs_buf.len();
                let target = if j == 0 {
                    if self.cfg.discrete_input {
                        let classes = self.batch.input_classes.as_ref().ok_or_else(|| {
                            Error::Config("discrete task without input classes".into())
                        })?;
                        AuxTarget::Classes(
                            is.iter()
                                .enumerate()
                                .map(|(b, &i)| classes[t - i][b])
                                .collect(),
                        )
                    } else {
                        AuxTarget::Values(gather_previous(&run.inputs_buf, &is))
                    }
                } else {
                    AuxTarget::Values(gather_previous(&run.inputs_buf, &is))
                };
                let h_up = run.states.last().unwrap().h.clone();
                let decoder = run.decoder.as_ref().expect("decoder bound when beta > 0");
                let tick_loss =
                    aux_loss_at_tick(&mut run.tape, decoder, &h_up, &target, &is, seg_len)?;
                self.aux_sums[j] += tick_loss.item().as_f64();
                let weight = self.cfg.beta[j] / self.n_events[j] as f64;
                let term = run.tape.scale(&tick_loss, F::from_f64(weight))?;
                run.loss = Some(match run.loss.take() {
                    Some(prev) => run.tape.add(&prev, &term)?,
                    None => term,
                });
            }
        }

        // Seed stored gradients: d(loss)/d(h) injected as sum(g ⊙ h).
        let seeds = std::mem::take(&mut run.seeds);
        let n_seeds = seeds.len();
        for (tick, g) in seeds {
            let idx = run
                .state_ticks
                .iter()
                .position(|&s| s == tick)
                .ok_or_else(|| {
                    Error::Ledger(format!("stored gradient for unknown tick {tick} at level {j}"))
                })?;
            let h = run.states[idx].h.clone();
            let g_t = Tensor::new(h.shape().to_vec(), g);
            let prod = run.tape.mul(&g_t, &h)?;
            let term = run.tape.sum(&prod)?;
            run.loss = Some(match run.loss.take() {
                Some(prev) => run.tape.add(&prev, &term)?,
                None => term,
            });
        }

        // Backward over the segment's local losses.
        let mut stored: Option<Vec<F>> = None;
        if let Some(loss) = &run.loss {
            let grads = run.tape.backward(loss)?;
            let [w_x, w_h, b] = self.spec.lstms[j].param_names();
            for (name, tensor) in [
                (w_x, &run.lstm.w_x),
                (w_h, &run.lstm.w_h),
                (b, &run.lstm.b),
            ] {
                if let Some(g) = grads.get(tensor) {
                    self.grad_acc.accumulate(&name, g);
                }
            }
            if let Some(dec) = &run.decoder {
                let [w1, b1, w2, b2] = self.spec.decoders[j].param_names();
                for (name, tensor) in
                    [(w1, &dec.w1), (b1, &dec.b1), (w2, &dec.w2), (b2, &dec.b2)]
                {
                    if let Some(g) = grads.get(tensor) {
                        self.grad_acc.accumulate(&name, g);
                    }
                }
            }
            if let Some(head) = &run.head {
                let [hw, hb] = self.spec.head.param_names();
                for (name, tensor) in [(hw, &head.w), (hb, &head.b)] {
                    if let Some(g) = grads.get(tensor) {
                        self.grad_acc.accumulate(&name, g);
                    }
                }
            }
            if let Some(inj) = &run.injection {
                stored = Some(grads.get_or_zeros(inj));
            }
        } else if let Some(inj) = &run.injection {
            stored = Some(vec![F::zero(); inj.len()]);
        }

        // Ledger: the produced stored gradient exists together with the still
        // retained segment (this is the peak instant), then the segment and
        // the seeds it consumed are released.
        if stored.is_some() {
            self.ledger
                .retain(j + 1, VecKind::StoredGrad, self.cfg.level_sizes[j + 1] * batch);
        }
        for _ in 0..n_seeds {
            self.ledger
                .release(j, VecKind::StoredGrad, self.cfg.level_sizes[j] * batch)?;
        }
        let elems = self.cfg.level_sizes[j] * batch;
        for _ in 0..run.states.len() {
            self.ledger.release(j, VecKind::StateH, elems)?;
            self.ledger.release(j, VecKind::StateC, elems)?;
        }
        if j > 0 {
            for _ in 0..run.inputs_buf.len() {
                self.ledger
                    .release(j, VecKind::Upsent, self.cfg.level_sizes[j - 1] * batch)?;
            }
        }

        if let Some(g) = stored {
            if j + 1 < levels {
                let target = self.runs[j + 1]
                    .as_mut()
                    .ok_or_else(|| Error::Ledger(format!("level {} has no open segment", j + 1)))?;
                target.seeds.push((run.seg_start, g));
            }
        }
        Ok(())
    }
}
