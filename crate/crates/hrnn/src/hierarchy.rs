//! The hierarchical recurrent network itself: per-level tick schedules,
//! state resets, upward/downward state exchange, and the unrolled forward
//! pass.
//!
//! Level 0 consumes one external input per step. Level j >= 1 updates only at
//! its tick steps, consuming the previous state of level j-1; between ticks
//! its state is carried unchanged (the same tape node, no copy). When level
//! j+1 ticks, level j is reset to zeros and restarts from the freshly updated
//! superior state, which is concatenated into its input. In the restricted
//! modes the upward edge (lower state into upper update) is wrapped in a
//! gradient barrier; the downward injection is never barriered.

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::layers::{
    BoundDecoder, BoundHead, BoundLstm, DecoderSpec, HeadSpec, InitRng, LstmSpec, ParamSet,
};
use crate::real::Real;

/// Training-mode flag. Forward activations are identical across modes given
/// identical parameters; the modes differ in how gradients flow (and, for
/// `MrHrnn`, in the backward-window length).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Full gradients through all edges.
    Hrnn,
    /// Upward edges barriered, no auxiliary losses (beta = 0).
    GrHrnn,
    /// Upward edges barriered, auxiliary decoder losses on. The crate's
    /// namesake training scheme.
    Ours,
    /// Full gradients but the backward window is shortened to 2T/k + k so
    /// training memory matches the restricted modes.
    MrHrnn,
}

impl Mode {
    pub fn barriers_upward(self) -> bool {
        matches!(self, Mode::GrHrnn | Mode::Ours)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Hrnn => "hrnn",
            Mode::GrHrnn => "gr-hrnn",
            Mode::Ours => "ours",
            Mode::MrHrnn => "mr-hrnn",
        }
    }

    pub fn parse(s: &str) -> Result<Mode> {
        match s {
            "hrnn" => Ok(Mode::Hrnn),
            "gr-hrnn" => Ok(Mode::GrHrnn),
            "ours" => Ok(Mode::Ours),
            "mr-hrnn" => Ok(Mode::MrHrnn),
            other => Err(Error::Config(format!(
                "mode: unknown value '{other}' (expected hrnn, gr-hrnn, ours or mr-hrnn)"
            ))),
        }
    }
}

/// How tick steps are generated.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ScheduleSpec {
    /// Level j ticks every prod(ks[..j]) steps.
    Fixed { ks: Vec<usize> },
    /// Two-level data-driven ticks (e.g. word boundaries); `k_max` bounds the
    /// longest segment and fixes the decoder one-hot width.
    Boundary { k_max: usize },
}

/// Concrete tick steps for one unrolled sequence. Level 0 ticks every step.
#[derive(Clone, Debug)]
pub struct TickSchedule {
    levels: usize,
    t_max: usize,
    /// Per level j >= 1 (index j-1): sorted tick steps in [0, t_max).
    ticks: Vec<Vec<usize>>,
    /// Per level j >= 1 (index j-1): O(1) tick test.
    masks: Vec<Vec<bool>>,
    /// Per producing level j in 0..levels-1: longest segment of level-j steps
    /// between consecutive level-(j+1) ticks (or sequence end).
    k_max: Vec<usize>,
}

impl TickSchedule {
    /// Fixed-rate schedule: level j ticks at multiples of prod(ks[..j]).
    pub fn fixed(levels: usize, ks: &[usize], t_max: usize) -> Result<TickSchedule> {
        if levels < 2 {
            return Err(Error::Schedule(format!("need at least 2 levels, got {levels}")));
        }
        if ks.len() != levels - 1 {
            return Err(Error::Schedule(format!(
                "need {} tick factors for {} levels, got {}",
                levels - 1,
                levels,
                ks.len()
            )));
        }
        if t_max == 0 {
            return Err(Error::Schedule("empty sequence".into()));
        }
        if ks.iter().any(|&k| k == 0) {
            return Err(Error::Schedule("tick factor must be positive".into()));
        }
        let mut ticks = Vec::new();
        let mut period = 1usize;
        for &k in ks {
            period *= k;
            ticks.push((0..t_max).step_by(period).collect::<Vec<usize>>());
        }
        Ok(Self::from_tick_lists(levels, t_max, ticks))
    }

    /// Two-level schedule from per-step boundary flags: a flag at position p
    /// means "a segment ends after consuming step p", so the upper level
    /// ticks at p+1. Step 0 is always a tick (all levels start a segment).
    pub fn boundary(flags: &[bool]) -> Result<TickSchedule> {
        if flags.is_empty() {
            return Err(Error::Schedule("empty sequence".into()));
        }
        let t_max = flags.len();
        let mut ticks = vec![0usize];
        for (p, &f) in flags.iter().enumerate() {
            if f && p + 1 < t_max {
                ticks.push(p + 1);
            }
        }
        ticks.dedup();
        Ok(Self::from_tick_lists(2, t_max, vec![ticks]))
    }

    fn from_tick_lists(levels: usize, t_max: usize, ticks: Vec<Vec<usize>>) -> TickSchedule {
        let masks = ticks
            .iter()
            .map(|list| {
                let mut m = vec![false; t_max];
                for &t in list {
                    m[t] = true;
                }
                m
            })
            .collect();
        let mut schedule = TickSchedule {
            levels,
            t_max,
            ticks,
            masks,
            k_max: Vec::new(),
        };
        schedule.k_max = (0..levels - 1)
            .map(|j| schedule.compute_k_max(j))
            .collect();
        schedule
    }

    /// Longest run of level-j steps between consecutive level-(j+1) ticks,
    /// counting the trailing segment that ends at t_max.
    fn compute_k_max(&self, producing_level: usize) -> usize {
        let consumer_ticks = &self.ticks[producing_level];
        let mut longest = 0usize;
        for (i, &start) in consumer_ticks.iter().enumerate() {
            let end = consumer_ticks.get(i + 1).copied().unwrap_or(self.t_max);
            longest = longest.max(self.steps_between(producing_level, start, end));
        }
        longest
    }

    /// Number of level-j steps in [start, end).
    fn steps_between(&self, level: usize, start: usize, end: usize) -> usize {
        if level == 0 {
            end - start
        } else {
            self.ticks[level - 1]
                .iter()
                .filter(|&&t| t >= start && t < end)
                .count()
        }
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn is_tick(&self, level: usize, t: usize) -> bool {
        if level == 0 {
            t < self.t_max
        } else {
            self.masks[level - 1].get(t).copied().unwrap_or(false)
        }
    }

    /// Sorted tick steps of a level (level 0 ticks every step).
    pub fn ticks_of(&self, level: usize) -> Vec<usize> {
        if level == 0 {
            (0..self.t_max).collect()
        } else {
            self.ticks[level - 1].clone()
        }
    }

    pub fn tick_count(&self, level: usize) -> usize {
        if level == 0 {
            self.t_max
        } else {
            self.ticks[level - 1].len()
        }
    }

    /// One-hot width for the decoder reading level-j up-sent states.
    pub fn k_max(&self, producing_level: usize) -> usize {
        self.k_max[producing_level]
    }

    /// Ticks of `level` strictly inside (0, t_max): the steps at which an
    /// auxiliary reconstruction of level `level - 1` is evaluated.
    pub fn aux_ticks(&self, level: usize) -> Vec<usize> {
        self.ticks_of(level).into_iter().filter(|&t| t > 0).collect()
    }

    /// Steps of level `consumer_level - 1` in the segment that closes when
    /// `consumer_level` ticks at `t`: the producing level's steps since the
    /// consumer's previous tick.
    pub fn segment_before(&self, consumer_level: usize, t: usize) -> Vec<usize> {
        let prev = self.ticks[consumer_level - 1]
            .iter()
            .copied()
            .filter(|&s| s < t)
            .next_back()
            .unwrap_or(0);
        if consumer_level == 1 {
            (prev..t).collect()
        } else {
            self.ticks[consumer_level - 2]
                .iter()
                .copied()
                .filter(|&s| s >= prev && s < t)
                .collect()
        }
    }
}

/// Model-level configuration: sizes, mode, schedule shape, loss weights.
#[derive(Clone, Debug)]
pub struct HrnnConfig {
    /// Hidden width per level, lowest first.
    pub level_sizes: Vec<usize>,
    pub input_dim: usize,
    pub output_classes: usize,
    /// Discrete inputs are reconstructed with cross-entropy, continuous ones
    /// with mean squared error.
    pub discrete_input: bool,
    pub decoder_hidden: usize,
    pub mode: Mode,
    /// Auxiliary-loss weight per producing level (levels 0..l-2).
    pub beta: Vec<f64>,
    /// Unroll length T.
    pub unroll: usize,
    pub schedule: ScheduleSpec,
    /// Apply the output head (and task loss) only at the final step.
    pub head_final_only: bool,
}

impl HrnnConfig {
    pub fn levels(&self) -> usize {
        self.level_sizes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.levels();
        if l < 2 {
            return Err(Error::Config("need at least 2 levels".into()));
        }
        if self.beta.len() != l - 1 {
            return Err(Error::Config(format!(
                "beta: need {} weights for {} levels, got {}",
                l - 1,
                l,
                self.beta.len()
            )));
        }
        if self.beta.iter().any(|&b| b < 0.0) {
            return Err(Error::Config("beta must be >= 0".into()));
        }
        if self.unroll == 0 {
            return Err(Error::Config("unroll must be positive".into()));
        }
        match &self.schedule {
            ScheduleSpec::Fixed { ks } => {
                if ks.len() != l - 1 {
                    return Err(Error::Config(format!(
                        "schedule: need {} tick factors for {} levels, got {}",
                        l - 1,
                        l,
                        ks.len()
                    )));
                }
            }
            ScheduleSpec::Boundary { .. } => {
                if l != 2 {
                    return Err(Error::Config(
                        "boundary schedules support exactly 2 levels".into(),
                    ));
                }
            }
        }
        if self.mode == Mode::MrHrnn && l != 2 {
            return Err(Error::Config("mr-hrnn is defined for 2 levels".into()));
        }
        Ok(())
    }

    /// Backward-window length: the full unroll, except for the
    /// memory-matched mode where it is 2T/k + k.
    pub fn backward_window(&self) -> Result<usize> {
        match self.mode {
            Mode::MrHrnn => match &self.schedule {
                ScheduleSpec::Fixed { ks } => {
                    let k = ks[0];
                    Ok((2 * self.unroll / k + k).max(1))
                }
                ScheduleSpec::Boundary { .. } => Err(Error::Config(
                    "mr-hrnn needs a fixed schedule to size its window".into(),
                )),
            },
            _ => Ok(self.unroll),
        }
    }

    /// Build the concrete schedule for a sequence of `t_eff <= unroll` steps.
    pub fn schedule_for(&self, t_eff: usize) -> Result<TickSchedule> {
        match &self.schedule {
            ScheduleSpec::Fixed { ks } => TickSchedule::fixed(self.levels(), ks, t_eff),
            ScheduleSpec::Boundary { .. } => Err(Error::Config(
                "boundary schedules are built from data, not from the config".into(),
            )),
        }
    }

    /// Decoder one-hot width for producing level j, before seeing data.
    fn decoder_width(&self, j: usize) -> usize {
        match &self.schedule {
            ScheduleSpec::Fixed { ks } => ks[j],
            ScheduleSpec::Boundary { k_max } => *k_max,
        }
    }

    /// Input width of the level-j cell: its per-step input plus the
    /// superior-state injection slot (top level has no slot).
    pub fn cell_input_dim(&self, j: usize) -> usize {
        let l = self.levels();
        let own = if j == 0 {
            self.input_dim
        } else {
            self.level_sizes[j - 1]
        };
        if j + 1 < l {
            own + self.level_sizes[j + 1]
        } else {
            own
        }
    }
}

/// Parameter-name layout of the full model.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub lstms: Vec<LstmSpec>,
    pub head: HeadSpec,
    pub decoders: Vec<DecoderSpec>,
}

impl ModelSpec {
    pub fn new(cfg: &HrnnConfig) -> ModelSpec {
        let l = cfg.levels();
        let lstms = (0..l)
            .map(|j| LstmSpec::new(format!("lstm{j}"), cfg.cell_input_dim(j), cfg.level_sizes[j]))
            .collect();
        let head = HeadSpec::new("head", cfg.level_sizes[0], cfg.output_classes);
        let decoders = (0..l - 1)
            .map(|j| {
                let out_dim = if j == 0 {
                    cfg.input_dim
                } else {
                    cfg.level_sizes[j - 1]
                };
                DecoderSpec::new(
                    format!("dec{j}"),
                    cfg.level_sizes[j],
                    cfg.decoder_width(j),
                    cfg.decoder_hidden,
                    out_dim,
                )
            })
            .collect();
        ModelSpec {
            lstms,
            head,
            decoders,
        }
    }

    /// Fresh parameters; the draw stream is fixed by (seed, architecture).
    pub fn init_params<F: Real>(&self, seed: u64) -> ParamSet<F> {
        let mut rng: InitRng = crate::layers::init_rng(seed);
        let mut params = ParamSet::new();
        for lstm in &self.lstms {
            lstm.init(&mut params, &mut rng);
        }
        self.head.init(&mut params, &mut rng);
        for dec in &self.decoders {
            dec.init(&mut params, &mut rng);
        }
        params
    }
}

/// All model parameters registered on one tape.
pub struct BoundModel<F: Real> {
    pub lstms: Vec<BoundLstm<F>>,
    pub head: BoundHead<F>,
    pub decoders: Vec<BoundDecoder<F>>,
}

impl<F: Real> BoundModel<F> {
    pub fn bind(
        tape: &mut Tape<F>,
        params: &ParamSet<F>,
        spec: &ModelSpec,
        trainable: bool,
    ) -> Result<Self> {
        Ok(BoundModel {
            lstms: spec
                .lstms
                .iter()
                .map(|s| BoundLstm::bind(tape, params, s, trainable))
                .collect::<Result<_>>()?,
            head: BoundHead::bind(tape, params, &spec.head, trainable)?,
            decoders: spec
                .decoders
                .iter()
                .map(|s| BoundDecoder::bind(tape, params, s, trainable))
                .collect::<Result<_>>()?,
        })
    }

    /// Every bound parameter with its name, for gradient extraction.
    pub fn named_tensors(&self, spec: &ModelSpec) -> Vec<(String, &Tensor<F>)> {
        let mut out = Vec::new();
        for (s, b) in spec.lstms.iter().zip(&self.lstms) {
            let [w_x, w_h, bias] = s.param_names();
            out.push((w_x, &b.w_x));
            out.push((w_h, &b.w_h));
            out.push((bias, &b.b));
        }
        let [hw, hb] = spec.head.param_names();
        out.push((hw, &self.head.w));
        out.push((hb, &self.head.b));
        for (s, d) in spec.decoders.iter().zip(&self.decoders) {
            let [w1, b1, w2, b2] = s.param_names();
            out.push((w1, &d.w1));
            out.push((b1, &d.b1));
            out.push((w2, &d.w2));
            out.push((b2, &d.b2));
        }
        out
    }
}

/// Recurrent state of one level.
#[derive(Clone)]
pub struct LevelState<F: Real> {
    pub h: Tensor<F>,
    pub c: Tensor<F>,
}

impl<F: Real> LevelState<F> {
    pub fn zeros(hidden: usize, batch: usize) -> Self {
        let shape = if batch == 1 {
            vec![hidden]
        } else {
            vec![hidden, batch]
        };
        LevelState {
            h: Tensor::zeros(shape.clone()),
            c: Tensor::zeros(shape),
        }
    }
}

/// What one step produced.
pub struct StepResult<F: Real> {
    /// Head output, when the head was applied at this step.
    pub y: Option<Tensor<F>>,
    /// (producing level, state sent upward) for every level that ticked.
    pub up_sent: Vec<(usize, Tensor<F>)>,
}

/// One global time step. `states` holds the pre-step states and is updated
/// in place. `t` is the global step index used against the schedule.
#[allow(clippy::too_many_arguments)]
pub fn hrnn_step<F: Real>(
    tape: &mut Tape<F>,
    model: &BoundModel<F>,
    cfg: &HrnnConfig,
    schedule: &TickSchedule,
    states: &mut [LevelState<F>],
    x: &Tensor<F>,
    t: usize,
    apply_head: bool,
) -> Result<StepResult<F>> {
    let l = cfg.levels();
    if t >= schedule.t_max() {
        return Err(Error::Schedule(format!(
            "step {t} outside schedule of length {}",
            schedule.t_max()
        )));
    }
    let batch = x.cols();
    let barrier = cfg.mode.barriers_upward();
    let mut up_sent = Vec::new();

    // Upper levels first (highest ticking level down), so a freshly updated
    // superior state is injected into the level below within the same step.
    for j in (1..l).rev() {
        if !schedule.is_tick(j, t) {
            continue;
        }
        let sent = states[j - 1].h.clone();
        up_sent.push((j - 1, sent.clone()));
        let consumed = if barrier { tape.barrier(&sent)? } else { sent };

        let input = if j + 1 < l {
            let inj = if schedule.is_tick(j + 1, t) {
                states[j + 1].h.clone()
            } else {
                LevelState::zeros(cfg.level_sizes[j + 1], batch).h
            };
            tape.concat(&[&consumed, &inj])?
        } else {
            consumed
        };

        // Reset at the superior's tick; the top level never resets.
        let reset = j + 1 < l && schedule.is_tick(j + 1, t);
        let state_in = if reset {
            LevelState::zeros(cfg.level_sizes[j], batch)
        } else {
            states[j].clone()
        };
        let (h, c) = crate::layers::lstm_step(tape, &model.lstms[j], &state_in.h, &state_in.c, &input)?;
        states[j] = LevelState { h, c };
    }

    // Level 0 runs every step; at a level-1 tick it restarts from zeros with
    // the fresh superior state concatenated into its input.
    let reset = l > 1 && schedule.is_tick(1, t);
    let input = if l > 1 {
        let inj = if reset {
            states[1].h.clone()
        } else {
            LevelState::zeros(cfg.level_sizes[1], batch).h
        };
        tape.concat(&[x, &inj])?
    } else {
        x.clone()
    };
    let state_in = if reset {
        LevelState::zeros(cfg.level_sizes[0], batch)
    } else {
        states[0].clone()
    };
    let (h, c) = crate::layers::lstm_step(tape, &model.lstms[0], &state_in.h, &state_in.c, &input)?;
    states[0] = LevelState { h, c };

    let y = if apply_head {
        Some(model.head.apply(tape, &states[0].h)?)
    } else {
        None
    };
    Ok(StepResult { y, up_sent })
}

/// Which steps get a head application.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadMode {
    Every,
    /// Only at this global step index.
    OnlyAt(usize),
}

/// Full forward log over a window of steps.
pub struct ForwardLog<F: Real> {
    /// Head outputs aligned with the window (None where the head was off).
    pub outputs: Vec<Option<Tensor<F>>>,
    /// Per producing level j: (tick step, up-sent state h^j at that tick).
    pub up_sent: Vec<Vec<(usize, Tensor<F>)>>,
    /// Post-step state of every level at every window step.
    pub trace: Vec<Vec<LevelState<F>>>,
    /// Final states, for carrying across windows.
    pub finals: Vec<LevelState<F>>,
}

/// Iterated `hrnn_step` over `inputs`, starting from zero states (or carried
/// ones) at global step `t_offset`.
#[allow(clippy::too_many_arguments)]
pub fn forward_sequence<F: Real>(
    tape: &mut Tape<F>,
    model: &BoundModel<F>,
    cfg: &HrnnConfig,
    schedule: &TickSchedule,
    inputs: &[Tensor<F>],
    init: Option<Vec<LevelState<F>>>,
    t_offset: usize,
    head_mode: HeadMode,
) -> Result<ForwardLog<F>> {
    let l = cfg.levels();
    let batch = inputs.first().map_or(1, |x| x.cols());
    let mut states: Vec<LevelState<F>> = match init {
        Some(s) => s,
        None => (0..l)
            .map(|j| LevelState::zeros(cfg.level_sizes[j], batch))
            .collect(),
    };

    let mut log = ForwardLog {
        outputs: Vec::with_capacity(inputs.len()),
        up_sent: vec![Vec::new(); l.saturating_sub(1)],
        trace: Vec::with_capacity(inputs.len()),
        finals: Vec::new(),
    };

    for (i, x) in inputs.iter().enumerate() {
        let t = t_offset + i;
        let apply_head = match head_mode {
            HeadMode::Every => true,
            HeadMode::OnlyAt(step) => t == step,
        };
        let step = hrnn_step(tape, model, cfg, schedule, &mut states, x, t, apply_head)?;
        for (level, sent) in step.up_sent {
            log.up_sent[level].push((t, sent));
        }
        log.outputs.push(step.y);
        log.trace.push(states.clone());
    }
    log.finals = states;
    Ok(log)
}

/// Build a two-level schedule from per-step boundary flags.
pub fn make_boundary_schedule(flags: &[bool]) -> Result<TickSchedule> {
    TickSchedule::boundary(flags)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(mode: Mode) -> HrnnConfig {
        HrnnConfig {
            level_sizes: vec![3, 4],
            input_dim: 2,
            output_classes: 2,
            discrete_input: true,
            decoder_hidden: 8,
            mode,
            beta: vec![1.0],
            unroll: 12,
            schedule: ScheduleSpec::Fixed { ks: vec![4] },
            head_final_only: false,
        }
    }

    fn run_forward(cfg: &HrnnConfig, seed: u64, xs: &[Vec<f64>]) -> (ForwardLog<f64>, ModelSpec) {
        let spec = ModelSpec::new(cfg);
        let params: ParamSet<f64> = spec.init_params(seed);
        let mut tape: Tape<f64> = Tape::new();
        let model = BoundModel::bind(&mut tape, &params, &spec, false).unwrap();
        let schedule = cfg.schedule_for(xs.len()).unwrap();
        let inputs: Vec<Tensor<f64>> = xs.iter().map(|v| Tensor::vector(v.clone())).collect();
        let log = forward_sequence(
            &mut tape,
            &model,
            cfg,
            &schedule,
            &inputs,
            None,
            0,
            HeadMode::Every,
        )
        .unwrap();
        (log, spec)
    }

    fn random_inputs(t: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..t)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn fixed_schedule_counts_and_nesting() {
        let s = TickSchedule::fixed(3, &[4, 2], 20).unwrap();
        assert_eq!(s.ticks_of(1), vec![0, 4, 8, 12, 16]);
        assert_eq!(s.ticks_of(2), vec![0, 8, 16]);
        // Nested: every tick of level 2 is a tick of level 1.
        for &t in &s.ticks_of(2) {
            assert!(s.is_tick(1, t));
        }
        // ceil(T/k) level-1 ticks.
        let s = TickSchedule::fixed(2, &[4], 13).unwrap();
        assert_eq!(s.tick_count(1), 4); // 0, 4, 8, 12
        assert_eq!(s.k_max(0), 4);
    }

    #[test]
    fn boundary_schedule_from_flags() {
        // "a bc d": token ends at 1 and 4; end-of-stream flag yields no tick.
        let flags = [false, true, false, false, true, true];
        let s = TickSchedule::boundary(&flags).unwrap();
        assert_eq!(s.ticks_of(1), vec![0, 2, 5]);
        // Segments [0,2) [2,5) [5,6): lengths 2, 3, 1.
        assert_eq!(s.k_max(0), 3);

        // All flags set = fixed k=1.
        let s = TickSchedule::boundary(&[true; 5]).unwrap();
        assert_eq!(s.ticks_of(1), vec![0, 1, 2, 3, 4]);
        assert_eq!(s.k_max(0), 1);

        // Only the final step flagged: a single segment of the whole length.
        let mut flags = vec![false; 7];
        flags[6] = true;
        let s = TickSchedule::boundary(&flags).unwrap();
        assert_eq!(s.ticks_of(1), vec![0]);
        assert_eq!(s.k_max(0), 7);

        assert!(TickSchedule::boundary(&[]).is_err());
    }

    #[test]
    fn boundary_schedule_for_the_cat() {
        // "the cat": the space after "the" ends the first word.
        let text: Vec<char> = "the cat".chars().collect();
        let flags: Vec<bool> = text
            .iter()
            .enumerate()
            .map(|(i, &c)| c == ' ' || i + 1 == text.len())
            .collect();
        let s = make_boundary_schedule(&flags).unwrap();
        assert_eq!(s.ticks_of(1), vec![0, 4]);
        assert_eq!(s.k_max(0), 4); // "the " is the longest segment
    }

    #[test]
    fn zero_params_give_zero_outputs() {
        let cfg = small_cfg(Mode::Hrnn);
        let spec = ModelSpec::new(&cfg);
        let mut params: ParamSet<f64> = spec.init_params(1);
        for (_, t) in params.iter_mut() {
            t.values.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut tape: Tape<f64> = Tape::new();
        let model = BoundModel::bind(&mut tape, &params, &spec, false).unwrap();
        let schedule = cfg.schedule_for(8).unwrap();
        let inputs: Vec<Tensor<f64>> =
            random_inputs(8, 2, 3).into_iter().map(Tensor::vector).collect();
        let log = forward_sequence(
            &mut tape,
            &model,
            &cfg,
            &schedule,
            &inputs,
            None,
            0,
            HeadMode::Every,
        )
        .unwrap();
        for y in log.outputs.iter().flatten() {
            assert_eq!(y.values(), &[0.0, 0.0]);
        }
    }

    #[test]
    fn upper_state_unchanged_between_ticks() {
        let cfg = small_cfg(Mode::Hrnn);
        let xs = random_inputs(12, 2, 7);
        let (log, _) = run_forward(&cfg, 5, &xs);
        for t in 0..12usize {
            let prev = t.checked_sub(1).map(|p| &log.trace[p][1].h);
            let now = &log.trace[t][1].h;
            if t % 4 != 0 {
                // Same buffer: carried, not copied.
                assert!(Tensor::same_buffer(prev.unwrap(), now));
                assert_eq!(prev.unwrap().values(), now.values());
            } else if let Some(prev) = prev {
                assert!(!Tensor::same_buffer(prev, now));
            }
        }
    }

    #[test]
    fn reset_cuts_dependence_on_previous_segment_when_upper_is_zero() {
        // With an all-zero upper cell the injected state is always zero, so
        // after a reset the lower level's outputs depend only on the current
        // segment's inputs.
        let cfg = small_cfg(Mode::Hrnn);
        let spec = ModelSpec::new(&cfg);
        let mut params: ParamSet<f64> = spec.init_params(11);
        for name in ["lstm1.w_x", "lstm1.w_h", "lstm1.b"] {
            params
                .get_mut(name)
                .unwrap()
                .values
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
        let mut xs = random_inputs(8, 2, 13);
        let run = |xs: &[Vec<f64>]| {
            let mut tape: Tape<f64> = Tape::new();
            let model = BoundModel::bind(&mut tape, &params, &spec, false).unwrap();
            let schedule = cfg.schedule_for(8).unwrap();
            let inputs: Vec<Tensor<f64>> =
                xs.iter().map(|v| Tensor::vector(v.clone())).collect();
            forward_sequence(
                &mut tape,
                &model,
                &cfg,
                &schedule,
                &inputs,
                None,
                0,
                HeadMode::Every,
            )
            .unwrap()
            .outputs
            .iter()
            .map(|y| y.as_ref().unwrap().to_vec())
            .collect::<Vec<_>>()
        };
        let base = run(&xs);
        xs[1][0] += 0.5; // perturb inside the first segment (k = 4)
        let perturbed = run(&xs);
        assert_ne!(base[1], perturbed[1]);
        for t in 4..8 {
            assert_eq!(base[t], perturbed[t], "step {t} leaked across the reset");
        }
    }

    #[test]
    fn k_equal_one_resets_every_step() {
        let mut cfg = small_cfg(Mode::Hrnn);
        cfg.schedule = ScheduleSpec::Fixed { ks: vec![1] };
        let xs = random_inputs(5, 2, 17);
        let (log, _) = run_forward(&cfg, 3, &xs);
        // The upper level updates at every step.
        for t in 1..5 {
            assert!(!Tensor::same_buffer(&log.trace[t - 1][1].h, &log.trace[t][1].h));
        }
        // Up-sent log records one send per step.
        assert_eq!(log.up_sent[0].len(), 5);
    }

    #[test]
    fn forward_is_identical_across_modes() {
        let xs = random_inputs(12, 2, 23);
        let (plain, _) = run_forward(&small_cfg(Mode::Hrnn), 9, &xs);
        let (restricted, _) = run_forward(&small_cfg(Mode::Ours), 9, &xs);
        for (a, b) in plain.outputs.iter().zip(restricted.outputs.iter()) {
            let (a, b) = (a.as_ref().unwrap(), b.as_ref().unwrap());
            assert!(a
                .values()
                .iter()
                .zip(b.values())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn three_level_dims_are_consistent() {
        let cfg = HrnnConfig {
            level_sizes: vec![3, 4, 5],
            input_dim: 2,
            output_classes: 2,
            discrete_input: true,
            decoder_hidden: 8,
            mode: Mode::Ours,
            beta: vec![0.1, 1.0],
            unroll: 16,
            schedule: ScheduleSpec::Fixed { ks: vec![2, 2] },
            head_final_only: false,
        };
        cfg.validate().unwrap();
        assert_eq!(cfg.cell_input_dim(0), 2 + 4);
        assert_eq!(cfg.cell_input_dim(1), 3 + 5);
        assert_eq!(cfg.cell_input_dim(2), 4);
        let xs = random_inputs(16, 2, 29);
        let (log, _) = run_forward(&cfg, 31, &xs);
        assert_eq!(log.up_sent[0].len(), 8); // level-1 ticks
        assert_eq!(log.up_sent[1].len(), 4); // level-2 ticks
        assert_eq!(log.trace[15][2].h.shape(), &[5]);
    }

    #[test]
    fn mr_window_formula() {
        let mut cfg = small_cfg(Mode::MrHrnn);
        cfg.unroll = 200;
        cfg.schedule = ScheduleSpec::Fixed { ks: vec![10] };
        assert_eq!(cfg.backward_window().unwrap(), 50);
        cfg.unroll = 60;
        cfg.schedule = ScheduleSpec::Fixed { ks: vec![6] };
        assert_eq!(cfg.backward_window().unwrap(), 26);
    }

    #[test]
    fn mode_strings_roundtrip() {
        for m in [Mode::Hrnn, Mode::GrHrnn, Mode::Ours, Mode::MrHrnn] {
            assert_eq!(Mode::parse(m.as_str()).unwrap(), m);
        }
        assert!(Mode::parse("bogus").is_err());
    }
}
