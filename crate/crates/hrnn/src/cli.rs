//! Subcommand implementations. The binary in main.rs parses arguments and
//! dispatches here; everything returns Result so exit codes and messages
//! stay uniform.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::finite_diff_check;
use crate::checkpoint;
use crate::config::{ExperimentConfig, Precision, TaskKind};
use crate::error::{Error, Result};
use crate::hierarchy::{HrnnConfig, Mode, ModelSpec, ScheduleSpec};
use crate::layers::ParamSet;
use crate::metrics::{export_csv, read_log, JsonlWriter, MetricsSink};
use crate::real::Real;
use crate::tasks::{CopyTask, MnistTask, PtbTask, TaskData};
use crate::training::{
    full_tbptt_count, memory_formula, run_training, train_step_oracle, train_step_streaming,
    AuxDraws, AuxPlan, RunOutcome, RunSettings, StopRule, TrainBatch, TrainHooks,
};

/// Fixed permutation seed: the permuted-pixels task uses the same order for
/// every run.
const PERMUTATION_SEED: u64 = 7919;

/// Directory lock so concurrent runs cannot share an output directory.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<DirLock> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(".hrnn.lock");
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "output directory is locked by another run: {} (remove the stale lock if no run is active)",
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Load task data and finalize the model config (ptb-char fills in its
/// vocabulary-dependent dimensions here).
pub fn build_task(cfg: &ExperimentConfig) -> Result<(TaskData, HrnnConfig)> {
    let mut model = cfg.model_config();
    let task = match cfg.task {
        TaskKind::Copy => TaskData::Copy(CopyTask {
            train_len: cfg.copy_len,
            batch: cfg.batch_size,
            eval_batches: cfg.copy_eval_batches,
            seed_eval: cfg.seed_eval,
        }),
        TaskKind::Mnist | TaskKind::MnistPermuted => {
            let permute = matches!(cfg.task, TaskKind::MnistPermuted)
                .then_some(PERMUTATION_SEED);
            let side = (cfg.mnist_side > 0).then_some(cfg.mnist_side);
            let need = |p: &Path, key: &str| -> Result<PathBuf> {
                if p.as_os_str().is_empty() {
                    return Err(Error::Config(format!("{key}: required for this task")));
                }
                let resolved = cfg.resolve_data_path(p);
                if !resolved.exists() {
                    return Err(Error::Data(format!(
                        "missing data file: {}",
                        resolved.display()
                    )));
                }
                Ok(resolved)
            };
            let mut train = crate::tasks::load_mnist(
                &need(&cfg.mnist_images, "mnist_images")?,
                &need(&cfg.mnist_labels, "mnist_labels")?,
                side,
                permute,
            )?;
            let test = crate::tasks::load_mnist(
                &need(&cfg.mnist_test_images, "mnist_test_images")?,
                &need(&cfg.mnist_test_labels, "mnist_test_labels")?,
                side,
                permute,
            )?;
            if cfg.mnist_train_count > 0 {
                train.truncate(cfg.mnist_train_count);
            }
            if train.is_empty() || test.is_empty() {
                return Err(Error::Data("empty image dataset".into()));
            }
            TaskData::Mnist(MnistTask {
                train,
                test,
                batch: cfg.batch_size,
            })
        }
        TaskKind::PtbChar => {
            let need = |p: &Path, key: &str| -> Result<PathBuf> {
                if p.as_os_str().is_empty() {
                    return Err(Error::Config(format!("{key}: required for this task")));
                }
                let resolved = cfg.resolve_data_path(p);
                if !resolved.exists() {
                    return Err(Error::Data(format!(
                        "missing data file: {}",
                        resolved.display()
                    )));
                }
                Ok(resolved)
            };
            let corpus = crate::tasks::load_ptb(
                &need(&cfg.ptb_train, "ptb_train")?,
                &need(&cfg.ptb_valid, "ptb_valid")?,
                &need(&cfg.ptb_test, "ptb_test")?,
            )?;
            model.input_dim = corpus.vocab_size();
            model.output_classes = corpus.vocab_size();
            model.schedule = ScheduleSpec::Boundary {
                k_max: corpus.k_max,
            };
            TaskData::Ptb(PtbTask {
                corpus,
                batch: cfg.batch_size,
                window: cfg.unroll,
                eval_chars: cfg.ptb_eval_chars,
            })
        }
    };
    model.validate()?;
    Ok((task, model))
}

fn settings(cfg: &ExperimentConfig) -> RunSettings {
    RunSettings {
        steps: cfg.steps,
        eval_every: cfg.eval_every,
        seed_data: cfg.seed_data,
        backward: cfg.backward,
        adam: cfg.adam(),
        stop: (!cfg.stop_metric.is_empty()).then(|| StopRule {
            metric: cfg.stop_metric.clone(),
            below: cfg.stop_below,
        }),
        check_finite: cfg.check_finite,
    }
}

/// Train per config; writes metrics.jsonl, model.ckpt, and the resolved
/// config snapshot into out_dir.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    let _lock = DirLock::acquire(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join("config.resolved.txt"), cfg.serialize())?;
    let mut sink = JsonlWriter::create(&cfg.out_dir.join("metrics.jsonl"))?;
    match cfg.precision {
        Precision::Fp32 => train_impl::<f32>(cfg, &mut sink),
        Precision::Fp64 => train_impl::<f64>(cfg, &mut sink),
    }
}

fn train_impl<F: Real>(cfg: &ExperimentConfig, sink: &mut dyn MetricsSink) -> Result<()> {
    let (task, model) = build_task(cfg)?;
    let spec = ModelSpec::new(&model);
    let params: ParamSet<F> = spec.init_params(cfg.seed_init);
    let mut hooks = TrainHooks {
        sample: Box::new(|rng: &mut ChaCha8Rng| task.sample_batch::<F>(&model, rng)),
        evaluate: Box::new(|p: &ParamSet<F>| task.evaluate(&model, &spec, p)),
    };
    let outcome: RunOutcome<F> =
        run_training(&model, &spec, params, &settings(cfg), &mut hooks, sink)?;
    checkpoint::save(
        &cfg.out_dir.join("model.ckpt"),
        &outcome.params,
        &outcome.adam,
    )?;
    println!(
        "trained {} steps; final eval: {}",
        outcome.steps_run,
        format_metrics(&outcome.last_eval)
    );
    Ok(())
}

fn format_metrics(m: &BTreeMap<String, f64>) -> String {
    if m.is_empty() {
        return "(none)".into();
    }
    m.iter()
        .map(|(k, v)| format!("{k}={v:.6}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Compare streaming vs oracle gradients and run the finite-difference
/// check on a small instance derived from the config. Errors on breach.
pub fn cmd_gradcheck(cfg: &ExperimentConfig) -> Result<()> {
    if !matches!(cfg.mode, Mode::GrHrnn | Mode::Ours) {
        return Err(Error::Config(format!(
            "gradcheck: mode {} has no streaming counterpart; use gr-hrnn or ours",
            cfg.mode.as_str()
        )));
    }
    if cfg.unroll > 60 {
        return Err(Error::Config(format!(
            "gradcheck: unroll {} exceeds the enforced small limit 60",
            cfg.unroll
        )));
    }
    let (tolerance, label) = match cfg.precision {
        Precision::Fp64 => (1e-9, "fp64"),
        Precision::Fp32 => (1e-4, "fp32 (relaxed tolerance)"),
    };
    let err = match cfg.precision {
        Precision::Fp32 => gradcheck_impl::<f32>(cfg)?,
        Precision::Fp64 => gradcheck_impl::<f64>(cfg)?,
    };
    println!("streaming vs oracle max rel err: {err:.3e} (tolerance {tolerance:.0e}, {label})");

    let fd_err = combined_step_fd(cfg)?;
    println!("finite-difference check (full combined step, fp64, unrestricted): max rel err {fd_err:.3e} (tolerance 1e-5)");

    if err > tolerance {
        return Err(Error::Config(format!(
            "gradcheck failed: streaming vs oracle max rel err {err:.3e} > {tolerance:.0e}"
        )));
    }
    if fd_err > 1e-5 {
        return Err(Error::Config(format!(
            "gradcheck failed: finite-difference max rel err {fd_err:.3e} > 1e-5"
        )));
    }
    println!("gradcheck ok");
    Ok(())
}

/// A small synthetic discrete batch shaped like the config's model.
fn gradcheck_model(cfg: &ExperimentConfig) -> HrnnConfig {
    let mut model = cfg.model_config();
    // Small dimensions keep the check sub-second regardless of the config.
    model.level_sizes = model.level_sizes.iter().map(|&s| s.min(8)).collect();
    model.decoder_hidden = model.decoder_hidden.min(16);
    model.input_dim = 3;
    model.output_classes = 3;
    model.discrete_input = true;
    model.head_final_only = false;
    if let ScheduleSpec::Boundary { .. } = model.schedule {
        model.schedule = ScheduleSpec::Fixed {
            ks: vec![4; model.level_sizes.len() - 1],
        };
    }
    model
}

fn synthetic_shared_batch<F: Real>(
    model: &HrnnConfig,
    t_len: usize,
    batch: usize,
    seed: u64,
) -> Result<crate::training::SharedBatch<F>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = model.input_dim;
    let mut inputs = Vec::with_capacity(t_len);
    let mut input_classes = Vec::with_capacity(t_len);
    let mut targets = Vec::with_capacity(t_len);
    for _ in 0..t_len {
        let classes: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..d)).collect();
        let mut values = vec![F::zero(); d * batch];
        for (b, &c) in classes.iter().enumerate() {
            values[c * batch + b] = F::one();
        }
        inputs.push(if batch == 1 {
            crate::autodiff::Tensor::vector(values)
        } else {
            crate::autodiff::Tensor::matrix(d, batch, values)
        });
        input_classes.push(classes);
        targets.push((0..batch).map(|_| rng.gen_range(0..model.output_classes)).collect());
    }
    Ok(crate::training::SharedBatch {
        schedule: model.schedule_for(t_len)?,
        inputs,
        input_classes: Some(input_classes),
        targets: crate::training::TaskTargets::PerStep {
            classes: targets,
            mask: vec![true; t_len],
        },
        batch,
    })
}

fn gradcheck_impl<F: Real>(cfg: &ExperimentConfig) -> Result<f64> {
    let model = gradcheck_model(cfg);
    let spec = ModelSpec::new(&model);
    let params: ParamSet<F> = spec.init_params(cfg.seed_init);
    let t_len = cfg.unroll.min(24).max(8);
    let batch = 2usize;
    let b = synthetic_shared_batch::<F>(&model, t_len, batch, cfg.seed_data)?;
    let plan = AuxDraws::sample(
        &model,
        &b.schedule,
        batch,
        &mut ChaCha8Rng::seed_from_u64(cfg.seed_data ^ 1),
    );
    let (g_stream, _, _) = train_step_streaming(&model, &spec, &params, &b, &plan, true)?;
    let (g_oracle, _) = train_step_oracle(
        &model,
        &spec,
        &params,
        &TrainBatch::Shared(b),
        &AuxPlan::Shared(plan),
        true,
    )?;
    Ok(g_stream.max_rel_err(&g_oracle))
}

/// Finite differences need the true gradient, so this check runs the same
/// instance without gradient restriction.
fn combined_step_fd(cfg: &ExperimentConfig) -> Result<f64> {
    let mut model = gradcheck_model(cfg);
    model.mode = Mode::Hrnn;
    let spec = ModelSpec::new(&model);
    let params: ParamSet<f64> = spec.init_params(cfg.seed_init);
    let t_len = 8usize;
    let b = synthetic_shared_batch::<f64>(&model, t_len, 1, cfg.seed_data ^ 7)?;
    let plan = AuxDraws::sample(
        &model,
        &b.schedule,
        1,
        &mut ChaCha8Rng::seed_from_u64(cfg.seed_data ^ 8),
    );

    let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
    let flat: Vec<Vec<f64>> = params.iter().map(|(_, t)| t.values.clone()).collect();
    let rebuild = |vals: &[Vec<f64>]| -> ParamSet<f64> {
        let mut p = ParamSet::new();
        for ((name, tensor), v) in params.iter().zip(vals) {
            p.insert(name.clone(), tensor.shape.clone(), v.clone());
        }
        p
    };

    let (grads, report) = train_step_oracle(
        &model,
        &spec,
        &params,
        &TrainBatch::Shared(synthetic_shared_batch::<f64>(&model, t_len, 1, cfg.seed_data ^ 7)?),
        &AuxPlan::Shared(plan.clone()),
        true,
    )?;
    debug_assert!(report.is_finite());
    let tape_grads: Vec<Vec<f64>> = names
        .iter()
        .map(|n| {
            grads
                .get(n)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; params.get(n).unwrap().values.len()])
        })
        .collect();

    let loss_of = |vals: &[Vec<f64>]| -> Result<f64> {
        let p = rebuild(vals);
        let b = synthetic_shared_batch::<f64>(&model, t_len, 1, cfg.seed_data ^ 7)?;
        let (_, report) = train_step_oracle(
            &model,
            &spec,
            &p,
            &TrainBatch::Shared(b),
            &AuxPlan::Shared(plan.clone()),
            true,
        )?;
        Ok(report.combined_nats)
    };
    finite_diff_check(&loss_of, &flat, &tape_grads, 1e-6)
}


/// One streaming step on synthetic data; prints the ledger peak against the
/// closed-form bound and the full-unroll count.
pub fn cmd_memcheck(levels: usize, k: usize, t: usize) -> Result<()> {
    let formula = memory_formula(levels, k, t)?;
    let full = full_tbptt_count(levels, k, t);
    let model = HrnnConfig {
        level_sizes: vec![6; levels],
        input_dim: 3,
        output_classes: 3,
        discrete_input: true,
        decoder_hidden: 8,
        mode: Mode::Ours,
        beta: vec![1.0; levels - 1],
        unroll: t,
        schedule: ScheduleSpec::Fixed {
            ks: vec![k; levels - 1],
        },
        head_final_only: false,
    };
    let spec = ModelSpec::new(&model);
    let params: ParamSet<f64> = spec.init_params(1);
    let cfg_stub = ExperimentConfig::default();
    let b = synthetic_shared_batch::<f64>(&model, t, 1, cfg_stub.seed_data)?;
    let plan = AuxDraws::sample(&model, &b.schedule, 1, &mut ChaCha8Rng::seed_from_u64(9));
    let (_, _, ledger) = train_step_streaming(&model, &spec, &params, &b, &plan, true)?;

    println!(
        "streaming peak: {} state vectors; bound k + 2*ceil(T/k){}: {}; full unroll: {}",
        ledger.paper_peak(),
        if levels > 2 { " generalized" } else { "" },
        formula,
        full
    );
    println!(
        "per-level peaks: {}",
        (0..levels)
            .map(|j| format!("level {j}: {}", ledger.level_peak(j)))
            .collect::<Vec<_>>()
            .join(", ")
    );
    if ledger.paper_peak() > formula {
        return Err(Error::Ledger(format!(
            "memcheck failed: peak {} exceeds bound {formula}",
            ledger.paper_peak()
        )));
    }
    println!("memcheck ok");
    Ok(())
}

/// Longest copy length the checkpointed model solves under the threshold.
pub fn cmd_lmax(cfg: &ExperimentConfig, ckpt: &Path, threshold: f64, max_n: usize) -> Result<usize> {
    if cfg.task != TaskKind::Copy {
        return Err(Error::Config(format!(
            "lmax: defined for the copy task, config says {}",
            cfg.task.as_str()
        )));
    }
    let (task, model) = build_task(cfg)?;
    let TaskData::Copy(task) = task else {
        unreachable!()
    };
    let spec = ModelSpec::new(&model);
    let l_max = match cfg.precision {
        Precision::Fp32 => {
            let (params, _) = checkpoint::load::<f32>(ckpt, cfg.adam())?;
            task.l_max(&model, &spec, &params, threshold, max_n)?
        }
        Precision::Fp64 => {
            let (params, _) = checkpoint::load::<f64>(ckpt, cfg.adam())?;
            task.l_max(&model, &spec, &params, threshold, max_n)?
        }
    };
    println!("L_max = {l_max}");
    Ok(l_max)
}

/// Evaluate a checkpoint on the configured task.
pub fn cmd_eval(cfg: &ExperimentConfig, ckpt: &Path) -> Result<BTreeMap<String, f64>> {
    let (task, model) = build_task(cfg)?;
    let spec = ModelSpec::new(&model);
    let metrics = match cfg.precision {
        Precision::Fp32 => {
            let (params, _) = checkpoint::load::<f32>(ckpt, cfg.adam())?;
            task.evaluate(&model, &spec, &params)?
        }
        Precision::Fp64 => {
            let (params, _) = checkpoint::load::<f64>(ckpt, cfg.adam())?;
            task.evaluate(&model, &spec, &params)?
        }
    };
    println!("{}", format_metrics(&metrics));
    Ok(metrics)
}

pub fn cmd_export_csv(log: &Path, out: &Path) -> Result<()> {
    let records = read_log(log)?;
    std::fs::write(out, export_csv(&records))?;
    println!("wrote {} rows to {}", records.len(), out.display());
    Ok(())
}
