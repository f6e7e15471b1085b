//! Task generators, dataset ingestion, and evaluation procedures.

pub mod copy;
pub mod fixtures;
pub mod mnist;
pub mod ptb;

pub use copy::{gen_copy, CopySample, COPY_ALPHABET, COPY_BLANK};
pub use mnist::{load_mnist, PixelSequence};
pub use ptb::{load_ptb, unigram_baseline_bits, CharCorpus};

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::hierarchy::{
    forward_sequence, BoundModel, HeadMode, HrnnConfig, ModelSpec, TickSchedule,
};
use crate::layers::ParamSet;
use crate::real::Real;
use crate::training::{ElementSeq, SharedBatch, TaskTargets, TrainBatch};

/// Forward-only logits: parameters bind as constants, so nothing is recorded.
fn eval_logits<F: Real>(
    cfg: &HrnnConfig,
    spec: &ModelSpec,
    params: &ParamSet<F>,
    schedule: &TickSchedule,
    inputs: &[Tensor<F>],
    head_mode: HeadMode,
) -> Result<Vec<Option<Tensor<F>>>> {
    let mut tape: Tape<F> = Tape::new();
    let model = BoundModel::bind(&mut tape, params, spec, false)?;
    let log = forward_sequence(&mut tape, &model, cfg, schedule, inputs, None, 0, head_mode)?;
    Ok(log.outputs)
}

/// Mean cross-entropy in base 2 over masked (step, element) pairs.
pub fn bits_per_char<F: Real>(
    step_logits: &[Tensor<F>],
    step_classes: &[Vec<usize>],
    mask: &[bool],
) -> f64 {
    let mut total = 0.0f64;
    let mut count = 0usize;
    for (t, logits) in step_logits.iter().enumerate() {
        if !mask.get(t).copied().unwrap_or(false) {
            continue;
        }
        let classes = &step_classes[t];
        let c = logits.rows();
        let b = logits.cols();
        let v = logits.values();
        for (elem, &target) in classes.iter().enumerate() {
            let mut maxv = f64::NEG_INFINITY;
            for ci in 0..c {
                maxv = maxv.max(v[ci * b + elem].as_f64());
            }
            let mut denom = 0.0f64;
            for ci in 0..c {
                denom += (v[ci * b + elem].as_f64() - maxv).exp();
            }
            let nll = denom.ln() - (v[target * b + elem].as_f64() - maxv);
            total += nll / std::f64::consts::LN_2;
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Fraction of columns whose argmax logit matches the label.
pub fn evaluate_classification<F: Real>(logits: &Tensor<F>, labels: &[usize]) -> f64 {
    let c = logits.rows();
    let b = logits.cols();
    let v = logits.values();
    let mut correct = 0usize;
    for (elem, &label) in labels.iter().enumerate() {
        let mut best = 0usize;
        let mut best_v = f64::NEG_INFINITY;
        for ci in 0..c {
            let x = v[ci * b + elem].as_f64();
            if x > best_v {
                best_v = x;
                best = ci;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    correct as f64 / labels.len().max(1) as f64
}

/// Largest n such that evaluation passes the threshold at n and at every
/// smaller length: linear scan with stride 1 from n = 1 until the first
/// failure. A model failing at n = 1 scores 0.
pub fn l_max_search(
    mut eval_at: impl FnMut(usize) -> Result<f64>,
    threshold: f64,
    max_n: usize,
) -> Result<usize> {
    for n in 1..=max_n {
        if eval_at(n)? >= threshold {
            return Ok(n - 1);
        }
    }
    Ok(max_n)
}

// ── Copy task ────────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct CopyTask {
    pub train_len: usize,
    pub batch: usize,
    pub eval_batches: usize,
    pub seed_eval: u64,
}

impl CopyTask {
    /// One batch at a sampled length: the full train_len half the time,
    /// otherwise uniform over [1, train_len]. Batch elements share the
    /// length so steps stay rectangular. Training on a single fixed length
    /// degenerates into position-keyed recall that fails at every other
    /// length (L_max would be 0); the mixture keeps the model honest over
    /// all lengths while spending half the updates on the hardest one.
    pub fn sample_batch<F: Real>(
        &self,
        cfg: &HrnnConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<TrainBatch<F>> {
        let n = if rng.gen_bool(0.5) {
            self.train_len
        } else {
            rng.gen_range(1..=self.train_len)
        };
        let samples: Vec<CopySample> = (0..self.batch)
            .map(|_| gen_copy(n, rng))
            .collect();
        let (inputs, input_classes, target_classes) = copy::stack_copy_batch(&samples);
        let t_len = inputs.len();
        Ok(TrainBatch::Shared(SharedBatch {
            schedule: cfg.schedule_for(t_len)?,
            inputs,
            input_classes: Some(input_classes),
            targets: TaskTargets::PerStep {
                classes: target_classes,
                // Training scores every position; recall-only masking is an
                // evaluation concern.
                mask: vec![true; t_len],
            },
            batch: self.batch,
        }))
    }

    /// Mean recall bits/char at copy length n on fresh deterministic batches.
    pub fn eval_bits<F: Real>(
        &self,
        cfg: &HrnnConfig,
        spec: &ModelSpec,
        params: &ParamSet<F>,
        n: usize,
    ) -> Result<f64> {
        let mut total = 0.0;
        for b in 0..self.eval_batches.max(1) {
            let mut rng =
                ChaCha8Rng::seed_from_u64(self.seed_eval ^ (n as u64) << 20 ^ b as u64);
            let samples: Vec<CopySample> =
                (0..self.batch).map(|_| gen_copy(n, &mut rng)).collect();
            let (inputs, _, target_classes) = copy::stack_copy_batch::<F>(&samples);
            let schedule = cfg.schedule_for(inputs.len())?;
            let outputs = eval_logits(cfg, spec, params, &schedule, &inputs, HeadMode::Every)?;
            let logits: Vec<Tensor<F>> = outputs.into_iter().map(|o| o.unwrap()).collect();
            let mask: Vec<bool> = (0..2 * n).map(|t| t >= n).collect();
            total += bits_per_char(&logits, &target_classes, &mask);
        }
        Ok(total / self.eval_batches.max(1) as f64)
    }

    pub fn evaluate<F: Real>(
        &self,
        cfg: &HrnnConfig,
        spec: &ModelSpec,
        params: &ParamSet<F>,
    ) -> Result<BTreeMap<String, f64>> {
        let bits = self.eval_bits(cfg, spec, params, self.train_len)?;
        Ok([("bits_per_char".to_string(), bits)].into())
    }

    pub fn l_max<F: Real>(
        &self,
        cfg: &HrnnConfig,
        spec: &ModelSpec,
        params: &ParamSet<F>,
        threshold: f64,
        max_n: usize,
    ) -> Result<usize> {
        l_max_search(|n| self.eval_bits(cfg, spec, params, n), threshold, max_n)
    }
}

// ── Sequential-pixel classification ──────────────────────────────────

#[derive(Clone, Debug)]
pub struct MnistTask {
    pub train: Vec<PixelSequence>,
    pub test: Vec<PixelSequence>,
    pub batch: usize,
}

impl MnistTask {
    pub fn sample_batch<F: Real>(
        &self,
        cfg: &HrnnConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<TrainBatch<F>> {
        let picks: Vec<&PixelSequence> = (0..self.batch)
            .map(|_| &self.train[rng.gen_range(0..self.train.len())])
            .collect();
        let (inputs, labels) = mnist::stack_pixel_batch(&picks);
        Ok(TrainBatch::Shared(SharedBatch {
            schedule: cfg.schedule_for(inputs.len())?,
            inputs,
            input_classes: None,
            targets: TaskTargets::FinalStep { classes: labels },
            batch: self.batch,
        }))
    }

    pub fn accuracy<F: Real>(
        &self,
        cfg: &HrnnConfig,
        spec: &ModelSpec,
        params: &ParamSet<F>,
    ) -> Result<f64> {
        let mut correct_weighted = 0.0f64;
        let mut total = 0usize;
        for chunk in self.test.chunks(self.batch.max(1)) {
            let picks: Vec<&PixelSequence> = chunk.iter().collect();
            let (inputs, labels) = mnist::stack_pixel_batch::<F>(&picks);
            let t_len = inputs.len();
            let schedule = cfg.schedule_for(t_len)?;
            let outputs = eval_logits(
                cfg,
                spec,
                params,
                &schedule,
                &inputs,
                HeadMode::OnlyAt(t_len - 1),
            )?;
            let logits = outputs
                .last()
                .and_then(|o| o.as_ref())
                .ok_or_else(|| Error::Config("no head output at final step".into()))?;
            correct_weighted += evaluate_classification(logits, &labels) * labels.len() as f64;
            total += labels.len();
        }
        Ok(correct_weighted / total.max(1) as f64)
    }

    pub fn evaluate<F: Real>(
        &self,
        cfg: &HrnnConfig,
        spec: &ModelSpec,
        params: &ParamSet<F>,
    ) -> Result<BTreeMap<String, f64>> {
        Ok([("accuracy".to_string(), self.accuracy(cfg, spec, params)?)].into())
    }
}

// ── Character-level language modeling ────────────────────────────────

#[derive(Clone, Debug)]
pub struct PtbTask {
    pub corpus: CharCorpus,
    pub batch: usize,
    pub window: usize,
    /// Held-out prefix length used for periodic evaluation.
    pub eval_chars: usize,
}

impl PtbTask {
    fn element<F: Real>(&self, start: usize, ids: &[usize], flags: &[bool]) -> Result<ElementSeq<F>> {
        let v = self.corpus.vocab_size();
        let w = self.window;
        let inputs: Vec<Tensor<F>> = ids[start..start + w]
            .iter()
            .map(|&c| {
                let mut values = vec![F::zero(); v];
                values[c] = F::one();
                Tensor::vector(values)
            })
            .collect();
        let targets: Vec<Vec<usize>> = ids[start + 1..start + w + 1]
            .iter()
            .map(|&c| vec![c])
            .collect();
        Ok(ElementSeq {
            schedule: crate::hierarchy::make_boundary_schedule(&flags[start..start + w])?,
            inputs,
            input_classes: Some(ids[start..start + w].to_vec()),
            targets: TaskTargets::PerStep {
                classes: targets,
                mask: vec![true; w],
            },
        })
    }

    pub fn sample_batch<F: Real>(
        &self,
        _cfg: &HrnnConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<TrainBatch<F>> {
        let ids = &self.corpus.train;
        if ids.len() < self.window + 1 {
            return Err(Error::Data("train split shorter than the window".into()));
        }
        let elements = (0..self.batch)
            .map(|_| {
                let start = rng.gen_range(0..ids.len() - self.window);
                self.element(start, ids, &self.corpus.train_boundaries)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainBatch::PerElement(elements))
    }

    /// Validation bits/char over the held-out prefix, tiled in windows.
    pub fn valid_bits<F: Real>(
        &self,
        cfg: &HrnnConfig,
        spec: &ModelSpec,
        params: &ParamSet<F>,
    ) -> Result<f64> {
        let ids = &self.corpus.valid;
        let flags = &self.corpus.valid_boundaries;
        let limit = self.eval_chars.min(ids.len().saturating_sub(1));
        let mut total = 0.0f64;
        let mut count = 0usize;
        let mut start = 0usize;
        while start + 1 < limit {
            let w = self.window.min(limit - start - 1).max(1);
            let v = self.corpus.vocab_size();
            let inputs: Vec<Tensor<F>> = ids[start..start + w]
                .iter()
                .map(|&c| {
                    let mut values = vec![F::zero(); v];
                    values[c] = F::one();
                    Tensor::vector(values)
                })
                .collect();
            let schedule = crate::hierarchy::make_boundary_schedule(&flags[start..start + w])?;
            let outputs = eval_logits(cfg, spec, params, &schedule, &inputs, HeadMode::Every)?;
            let logits: Vec<Tensor<F>> = outputs.into_iter().map(|o| o.unwrap()).collect();
            let classes: Vec<Vec<usize>> =
                ids[start + 1..start + w + 1].iter().map(|&c| vec![c]).collect();
            let mask = vec![true; w];
            total += bits_per_char(&logits, &classes, &mask) * w as f64;
            count += w;
            start += w;
        }
        Ok(total / count.max(1) as f64)
    }

    pub fn evaluate<F: Real>(
        &self,
        cfg: &HrnnConfig,
        spec: &ModelSpec,
        params: &ParamSet<F>,
    ) -> Result<BTreeMap<String, f64>> {
        Ok([
            ("bits_per_char".to_string(), self.valid_bits(cfg, spec, params)?),
            (
                "unigram_bits".to_string(),
                unigram_baseline_bits(
                    &self.corpus,
                    &self.corpus.valid[..self.eval_chars.min(self.corpus.valid.len())],
                ),
            ),
        ]
        .into())
    }
}

/// Uniform handle over the configured task.
pub enum TaskData {
    Copy(CopyTask),
    Mnist(MnistTask),
    Ptb(PtbTask),
}

impl TaskData {
    pub fn input_dim(&self) -> usize {
        match self {
            TaskData::Copy(_) => COPY_ALPHABET,
            TaskData::Mnist(_) => 1,
            TaskData::Ptb(t) => t.corpus.vocab_size(),
        }
    }

    pub fn output_classes(&self) -> usize {
        match self {
            TaskData::Copy(_) => COPY_ALPHABET,
            TaskData::Mnist(_) => 10,
            TaskData::Ptb(t) => t.corpus.vocab_size(),
        }
    }

    pub fn discrete_input(&self) -> bool {
        !matches!(self, TaskData::Mnist(_))
    }

    pub fn head_final_only(&self) -> bool {
        matches!(self, TaskData::Mnist(_))
    }

    pub fn sample_batch<F: Real>(
        &self,
        cfg: &HrnnConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<TrainBatch<F>> {
        match self {
            TaskData::Copy(t) => t.sample_batch(cfg, rng),
            TaskData::Mnist(t) => t.sample_batch(cfg, rng),
            TaskData::Ptb(t) => t.sample_batch(cfg, rng),
        }
    }

    pub fn evaluate<F: Real>(
        &self,
        cfg: &HrnnConfig,
        spec: &ModelSpec,
        params: &ParamSet<F>,
    ) -> Result<BTreeMap<String, f64>> {
        match self {
            TaskData::Copy(t) => t.evaluate(cfg, spec, params),
            TaskData::Mnist(t) => t.evaluate(cfg, spec, params),
            TaskData::Ptb(t) => t.evaluate(cfg, spec, params),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_score_log2_alphabet() {
        let logits = vec![Tensor::vector(vec![0.5f64, 0.5, 0.5])];
        let classes = vec![vec![1usize]];
        let bits = bits_per_char(&logits, &classes, &[true]);
        assert!((bits - 3.0f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions_score_zero() {
        let logits = vec![Tensor::vector(vec![60.0f64, 0.0, 0.0])];
        let classes = vec![vec![0usize]];
        let bits = bits_per_char(&logits, &classes, &[true]);
        assert!(bits < 1e-12);
    }

    #[test]
    fn confident_binary_chance_is_one_bit() {
        // A model that never predicts blank but is at chance between the two
        // bits scores exactly 1 bit/char on recall content.
        let logits = vec![Tensor::vector(vec![5.0f64, 5.0, -60.0])];
        let classes = vec![vec![1usize]];
        let bits = bits_per_char(&logits, &classes, &[true]);
        assert!((bits - 1.0).abs() < 1e-9, "{bits}");
    }

    #[test]
    fn masked_positions_are_excluded() {
        let logits = vec![
            Tensor::vector(vec![100.0f64, 0.0, 0.0]), // would be ~0 bits
            Tensor::vector(vec![0.5f64, 0.5, 0.5]),
        ];
        let classes = vec![vec![0usize], vec![2usize]];
        let bits = bits_per_char(&logits, &classes, &[false, true]);
        assert!((bits - 3.0f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn classification_argmax_and_chance() {
        let logits = Tensor::matrix(3, 2, vec![1.0f64, 0.0, 9.0, 0.1, 0.0, 0.05]);
        // Column 0 argmax = class 1 (9.0), column 1 argmax = class 1 (0.1).
        assert_eq!(evaluate_classification(&logits, &[1, 1]), 1.0);
        assert_eq!(evaluate_classification(&logits, &[1, 0]), 0.5);
        let single = Tensor::vector(vec![0.0f64, 3.0]);
        assert_eq!(evaluate_classification(&single, &[1]), 1.0);
    }

    #[test]
    fn l_max_search_with_stub_models() {
        // A stub that solves exactly lengths <= 7.
        let stub = |n: usize| -> crate::error::Result<f64> {
            Ok(if n <= 7 { 0.01 } else { 1.0 })
        };
        assert_eq!(l_max_search(stub, 0.15, 50).unwrap(), 7);
        // A random model fails immediately.
        let chance = |_: usize| -> crate::error::Result<f64> { Ok(1.0) };
        assert_eq!(l_max_search(chance, 0.15, 50).unwrap(), 0);
        // A perfect model runs into the cap.
        let perfect = |_: usize| -> crate::error::Result<f64> { Ok(0.0) };
        assert_eq!(l_max_search(perfect, 0.15, 9).unwrap(), 9);
    }

    #[test]
    fn copy_eval_of_untrained_model_is_near_chance() {
        use crate::hierarchy::{Mode, ScheduleSpec};
        let cfg = HrnnConfig {
            level_sizes: vec![8, 8],
            input_dim: COPY_ALPHABET,
            output_classes: COPY_ALPHABET,
            discrete_input: true,
            decoder_hidden: 16,
            mode: Mode::Ours,
            beta: vec![1.0],
            unroll: 16,
            schedule: ScheduleSpec::Fixed { ks: vec![4] },
            head_final_only: false,
        };
        let spec = ModelSpec::new(&cfg);
        let params: ParamSet<f64> = spec.init_params(2);
        let task = CopyTask {
            train_len: 6,
            batch: 8,
            eval_batches: 2,
            seed_eval: 11,
        };
        let bits = task.eval_bits(&cfg, &spec, &params, 6).unwrap();
        // Fresh random parameters sit near the blank-vs-bit chance region.
        assert!(bits > 0.5, "untrained model scored {bits}");
        let lmax = task.l_max(&cfg, &spec, &params, 0.15, 10).unwrap();
        assert_eq!(lmax, 0);
    }
}
