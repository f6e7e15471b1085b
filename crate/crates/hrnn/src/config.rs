//! Experiment configuration: a flat key=value text format. Unknown keys are
//! errors, not warnings; serialization writes every documented key, so
//! parse -> serialize -> parse is the identity and a run's resolved config
//! can be archived next to its outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::hierarchy::{HrnnConfig, Mode, ScheduleSpec};
use crate::layers::AdamHyper;
use crate::training::BackwardKind;

pub const DATA_DIR_ENV: &str = "HRNN_DATA_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    Copy,
    Mnist,
    MnistPermuted,
    PtbChar,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Copy => "copy",
            TaskKind::Mnist => "mnist",
            TaskKind::MnistPermuted => "mnist-permuted",
            TaskKind::PtbChar => "ptb-char",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(TaskKind::Copy),
            "mnist" => Ok(TaskKind::Mnist),
            "mnist-permuted" => Ok(TaskKind::MnistPermuted),
            "ptb-char" => Ok(TaskKind::PtbChar),
            other => Err(Error::Config(format!(
                "task: unknown value '{other}' (expected copy, mnist, mnist-permuted or ptb-char)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    Fp32,
    Fp64,
}

impl Precision {
    pub fn as_str(self) -> &'static str {
        match self {
            Precision::Fp32 => "fp32",
            Precision::Fp64 => "fp64",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fp32" => Ok(Precision::Fp32),
            "fp64" => Ok(Precision::Fp64),
            other => Err(Error::Config(format!(
                "precision: unknown value '{other}' (expected fp32 or fp64)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub mode: Mode,
    pub backward: BackwardKind,
    pub levels: usize,
    pub sizes: Vec<usize>,
    pub k: Vec<usize>,
    pub boundary_schedule: bool,
    pub unroll: usize,
    pub beta: Vec<f64>,
    pub decoder_hidden: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub eval_every: usize,
    pub seed_init: u64,
    pub seed_data: u64,
    pub seed_eval: u64,
    pub precision: Precision,
    pub check_finite: bool,
    pub out_dir: PathBuf,
    pub stop_metric: String,
    pub stop_below: f64,
    // Task knobs.
    pub copy_len: usize,
    pub copy_eval_batches: usize,
    pub mnist_images: PathBuf,
    pub mnist_labels: PathBuf,
    pub mnist_test_images: PathBuf,
    pub mnist_test_labels: PathBuf,
    /// 0 keeps the native resolution; d mean-pools to d x d (small-scale
    /// knob, not a reference setting).
    pub mnist_side: usize,
    /// 0 keeps every training image.
    pub mnist_train_count: usize,
    pub ptb_train: PathBuf,
    pub ptb_valid: PathBuf,
    pub ptb_test: PathBuf,
    pub ptb_eval_chars: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: TaskKind::Copy,
            mode: Mode::Ours,
            backward: BackwardKind::Streaming,
            levels: 2,
            sizes: vec![64, 128],
            k: vec![6],
            boundary_schedule: false,
            unroll: 60,
            beta: vec![1.0],
            decoder_hidden: 256,
            lr: 0.001,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 50,
            steps: 1000,
            eval_every: 100,
            seed_init: 1,
            seed_data: 2,
            seed_eval: 3,
            precision: Precision::Fp32,
            check_finite: true,
            out_dir: PathBuf::from("runs/default"),
            stop_metric: String::new(),
            stop_below: 0.0,
            copy_len: 24,
            copy_eval_batches: 2,
            mnist_images: PathBuf::new(),
            mnist_labels: PathBuf::new(),
            mnist_test_images: PathBuf::new(),
            mnist_test_labels: PathBuf::new(),
            mnist_side: 0,
            mnist_train_count: 0,
            ptb_train: PathBuf::new(),
            ptb_valid: PathBuf::new(),
            ptb_test: PathBuf::new(),
            ptb_eval_chars: 5000,
        }
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<T>()
                .map_err(|_| Error::Config(format!("{key}: cannot parse '{p}'")))
        })
        .collect()
}

fn join_list<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl ExperimentConfig {
    /// Parse the flat key=value format. '#' starts a comment; blank lines are
    /// skipped; keys may not repeat; unknown keys are errors.
    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got '{raw}'", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("duplicate key '{key}'")));
            }
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    pub fn parse_file(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Apply one key=value assignment (also used for flag overrides, where
    /// the flag name equals the config key).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "task" => self.task = TaskKind::parse(value)?,
            "mode" => self.mode = Mode::parse(value)?,
            "backward" => self.backward = BackwardKind::parse(value)?,
            "levels" => self.levels = parse_num(key, value)?,
            "sizes" => self.sizes = parse_list(key, value)?,
            "k" => self.k = parse_list(key, value)?,
            "schedule" => {
                self.boundary_schedule = match value {
                    "fixed" => false,
                    "boundary" => true,
                    other => {
                        return Err(Error::Config(format!(
                            "schedule: unknown value '{other}' (expected fixed or boundary)"
                        )))
                    }
                }
            }
            "unroll" => self.unroll = parse_num(key, value)?,
            "beta" => self.beta = parse_list(key, value)?,
            "decoder_hidden" => self.decoder_hidden = parse_num(key, value)?,
            "lr" => self.lr = parse_num(key, value)?,
            "adam_beta1" => self.adam_beta1 = parse_num(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse_num(key, value)?,
            "adam_eps" => self.adam_eps = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "steps" => self.steps = parse_num(key, value)?,
            "eval_every" => self.eval_every = parse_num(key, value)?,
            "seed_init" => self.seed_init = parse_num(key, value)?,
            "seed_data" => self.seed_data = parse_num(key, value)?,
            "seed_eval" => self.seed_eval = parse_num(key, value)?,
            "precision" => self.precision = Precision::parse(value)?,
            "check_finite" => self.check_finite = parse_bool(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "stop_metric" => self.stop_metric = value.to_string(),
            "stop_below" => self.stop_below = parse_num(key, value)?,
            "copy_len" => self.copy_len = parse_num(key, value)?,
            "copy_eval_batches" => self.copy_eval_batches = parse_num(key, value)?,
            "mnist_images" => self.mnist_images = PathBuf::from(value),
            "mnist_labels" => self.mnist_labels = PathBuf::from(value),
            "mnist_test_images" => self.mnist_test_images = PathBuf::from(value),
            "mnist_test_labels" => self.mnist_test_labels = PathBuf::from(value),
            "mnist_side" => self.mnist_side = parse_num(key, value)?,
            "mnist_train_count" => self.mnist_train_count = parse_num(key, value)?,
            "ptb_train" => self.ptb_train = PathBuf::from(value),
            "ptb_valid" => self.ptb_valid = PathBuf::from(value),
            "ptb_test" => self.ptb_test = PathBuf::from(value),
            "ptb_eval_chars" => self.ptb_eval_chars = parse_num(key, value)?,
            other => {
                return Err(Error::Config(format!("unknown config key '{other}'")));
            }
        }
        Ok(())
    }

    /// Emit every documented key, sorted, one per line.
    pub fn serialize(&self) -> String {
        let mut pairs: Vec<(&str, String)> = vec![
            ("task", self.task.as_str().into()),
            ("mode", self.mode.as_str().into()),
            ("backward", self.backward.as_str().into()),
            ("levels", self.levels.to_string()),
            ("sizes", join_list(&self.sizes)),
            ("k", join_list(&self.k)),
            (
                "schedule",
                if self.boundary_schedule { "boundary" } else { "fixed" }.into(),
            ),
            ("unroll", self.unroll.to_string()),
            ("beta", join_list(&self.beta)),
            ("decoder_hidden", self.decoder_hidden.to_string()),
            ("lr", self.lr.to_string()),
            ("adam_beta1", self.adam_beta1.to_string()),
            ("adam_beta2", self.adam_beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("steps", self.steps.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("seed_init", self.seed_init.to_string()),
            ("seed_data", self.seed_data.to_string()),
            ("seed_eval", self.seed_eval.to_string()),
            ("precision", self.precision.as_str().into()),
            ("check_finite", self.check_finite.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("stop_metric", self.stop_metric.clone()),
            ("stop_below", self.stop_below.to_string()),
            ("copy_len", self.copy_len.to_string()),
            ("copy_eval_batches", self.copy_eval_batches.to_string()),
            ("mnist_images", self.mnist_images.display().to_string()),
            ("mnist_labels", self.mnist_labels.display().to_string()),
            ("mnist_test_images", self.mnist_test_images.display().to_string()),
            ("mnist_test_labels", self.mnist_test_labels.display().to_string()),
            ("mnist_side", self.mnist_side.to_string()),
            ("mnist_train_count", self.mnist_train_count.to_string()),
            ("ptb_train", self.ptb_train.display().to_string()),
            ("ptb_valid", self.ptb_valid.display().to_string()),
            ("ptb_test", self.ptb_test.display().to_string()),
            ("ptb_eval_chars", self.ptb_eval_chars.to_string()),
        ];
        pairs.sort_by(|a, b| a.0.cmp(b.0));
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Sequence length the task presents (before windowing).
    pub fn sequence_len(&self) -> usize {
        match self.task {
            TaskKind::Copy => 2 * self.copy_len,
            TaskKind::Mnist | TaskKind::MnistPermuted => {
                if self.mnist_side > 0 {
                    self.mnist_side * self.mnist_side
                } else {
                    self.unroll
                }
            }
            TaskKind::PtbChar => self.unroll,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::Config("levels: need at least 2".into()));
        }
        if self.sizes.len() != self.levels {
            return Err(Error::Config(format!(
                "sizes: need {} entries for {} levels, got {}",
                self.levels,
                self.levels,
                self.sizes.len()
            )));
        }
        if self.beta.len() != self.levels - 1 {
            return Err(Error::Config(format!(
                "beta: need {} entries for {} levels, got {}",
                self.levels - 1,
                self.levels,
                self.beta.len()
            )));
        }
        if !self.boundary_schedule && self.k.len() != self.levels - 1 {
            return Err(Error::Config(format!(
                "k: need {} entries for {} levels, got {}",
                self.levels - 1,
                self.levels,
                self.k.len()
            )));
        }
        if self.boundary_schedule && self.task != TaskKind::PtbChar {
            return Err(Error::Config(
                "schedule: boundary schedules are only defined for ptb-char".into(),
            ));
        }
        if self.task == TaskKind::PtbChar && !self.boundary_schedule {
            return Err(Error::Config(
                "schedule: ptb-char drives ticks from word boundaries; set schedule = boundary"
                    .into(),
            ));
        }
        if self.backward == BackwardKind::Streaming
            && !matches!(self.mode, Mode::GrHrnn | Mode::Ours)
        {
            return Err(Error::Config(format!(
                "backward: streaming requires mode gr-hrnn or ours, got {}",
                self.mode.as_str()
            )));
        }
        if self.backward == BackwardKind::Streaming && self.task == TaskKind::PtbChar {
            return Err(Error::Config(
                "backward: ptb-char batches have per-element schedules; use backward = oracle \
                 (gradients match streaming exactly)"
                    .into(),
            ));
        }
        if self.mode == Mode::MrHrnn && (self.levels != 2 || self.boundary_schedule) {
            return Err(Error::Config(
                "mode: mr-hrnn is defined for 2 levels with a fixed schedule".into(),
            ));
        }
        if self.task == TaskKind::Copy && 2 * self.copy_len > self.unroll {
            return Err(Error::Config(format!(
                "copy_len: sequence 2*{} exceeds unroll {}",
                self.copy_len, self.unroll
            )));
        }
        if matches!(self.task, TaskKind::Mnist | TaskKind::MnistPermuted) {
            let t = self.sequence_len();
            if self.unroll != t {
                return Err(Error::Config(format!(
                    "unroll: pixel sequences have {t} steps, got unroll {}",
                    self.unroll
                )));
            }
        }
        if self.batch_size == 0 || self.steps == 0 {
            return Err(Error::Config("batch_size and steps must be positive".into()));
        }
        self.model_config().validate()
    }

    /// The model-level view of this experiment.
    pub fn model_config(&self) -> HrnnConfig {
        let (input_dim, output_classes, discrete) = match self.task {
            TaskKind::Copy => (crate::tasks::COPY_ALPHABET, crate::tasks::COPY_ALPHABET, true),
            TaskKind::Mnist | TaskKind::MnistPermuted => (1, 10, false),
            // Placeholder width; rebuilt once the corpus (and its vocabulary
            // and k_max) is loaded.
            TaskKind::PtbChar => (1, 1, true),
        };
        HrnnConfig {
            level_sizes: self.sizes.clone(),
            input_dim,
            output_classes,
            discrete_input: discrete,
            decoder_hidden: self.decoder_hidden,
            mode: self.mode,
            beta: self.beta.clone(),
            unroll: self.unroll,
            schedule: if self.boundary_schedule {
                ScheduleSpec::Boundary { k_max: 1 }
            } else {
                ScheduleSpec::Fixed { ks: self.k.clone() }
            },
            head_final_only: matches!(self.task, TaskKind::Mnist | TaskKind::MnistPermuted),
        }
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    /// Resolve a data path against HRNN_DATA_DIR when it is relative.
    pub fn resolve_data_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            return p.to_path_buf();
        }
        match std::env::var_os(DATA_DIR_ENV) {
            Some(root) => PathBuf::from(root).join(p),
            None => p.to_path_buf(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::Config(format!("{key}: expected true or false, got '{other}'"))),
    }
}

/// The model-selection grid for the auxiliary-loss weight.
pub const BETA_GRID: [f64; 7] = [1e-3, 1e-2, 1e-1, 0.0, 1.0, 10.0, 100.0];
