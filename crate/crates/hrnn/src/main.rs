//! Experiment runner: train, gradcheck, memcheck, lmax, eval, export-csv.

use std::path::PathBuf;
use std::process::ExitCode;

use hrnn::cli;
use hrnn::config::ExperimentConfig;
use hrnn::error::{Error, Result};

const USAGE: &str = "\
usage: hrnn <command> [options]

commands:
  train       --config FILE [key=value ...]   train per config
  gradcheck   --config FILE [key=value ...]   streaming-vs-oracle and finite-difference checks
  memcheck    LEVELS K T                      ledger peak vs closed-form bound
  lmax        --config FILE --checkpoint FILE [--threshold B] [--max-n N] [key=value ...]
  eval        --config FILE --checkpoint FILE [key=value ...]
  export-csv  --log FILE --out FILE           flatten a metrics log for plotting

Any config key can be overridden on the command line as key=value or
--key value (flag name == config key). Data paths resolve against
$HRNN_DATA_DIR when relative.";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

struct ParsedArgs {
    config: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    log: Option<PathBuf>,
    out: Option<PathBuf>,
    threshold: f64,
    max_n: usize,
    overrides: Vec<(String, String)>,
    positional: Vec<String>,
}

fn parse_args(args: &[String]) -> Result<ParsedArgs> {
    let mut parsed = ParsedArgs {
        config: None,
        checkpoint: None,
        log: None,
        out: None,
        threshold: 0.15,
        max_n: 256,
        overrides: Vec::new(),
        positional: Vec::new(),
    };
    let mut i = 0;
    while i < args.len() {
        let arg = args[i].clone();
        let take_value = |i: &mut usize| -> Result<String> {
            *i += 1;
            args.get(*i)
                .cloned()
                .ok_or_else(|| Error::Config(format!("{arg}: missing value")))
        };
        match arg.as_str() {
            "--config" => parsed.config = Some(PathBuf::from(take_value(&mut i)?)),
            "--checkpoint" => parsed.checkpoint = Some(PathBuf::from(take_value(&mut i)?)),
            "--log" => parsed.log = Some(PathBuf::from(take_value(&mut i)?)),
            "--out" => parsed.out = Some(PathBuf::from(take_value(&mut i)?)),
            "--threshold" => {
                let v = take_value(&mut i)?;
                parsed.threshold = v
                    .parse()
                    .map_err(|_| Error::Config(format!("--threshold: cannot parse '{v}'")))?;
            }
            "--max-n" => {
                let v = take_value(&mut i)?;
                parsed.max_n = v
                    .parse()
                    .map_err(|_| Error::Config(format!("--max-n: cannot parse '{v}'")))?;
            }
            other if other.starts_with("--") => {
                // --key value or --key=value: flag name == config key.
                let key = other.trim_start_matches("--");
                if let Some((k, v)) = key.split_once('=') {
                    parsed.overrides.push((k.to_string(), v.to_string()));
                } else {
                    let key = key.to_string();
                    let value = take_value(&mut i)?;
                    parsed.overrides.push((key, value));
                }
            }
            other if other.contains('=') => {
                let (k, v) = other.split_once('=').unwrap();
                parsed.overrides.push((k.to_string(), v.to_string()));
            }
            other => parsed.positional.push(other.to_string()),
        }
        i += 1;
    }
    Ok(parsed)
}

fn load_config(parsed: &ParsedArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &parsed.config {
        Some(path) => ExperimentConfig::parse_file(path)?,
        None => return Err(Error::Config("--config is required".into())),
    };
    for (k, v) in &parsed.overrides {
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

fn run(args: &[String]) -> Result<()> {
    let Some(command) = args.first() else {
        eprintln!("{USAGE}");
        return Err(Error::Config("missing command".into()));
    };
    let rest = &args[1..];
    match command.as_str() {
        "train" => {
            let parsed = parse_args(rest)?;
            cli::cmd_train(&load_config(&parsed)?)
        }
        "gradcheck" => {
            let parsed = parse_args(rest)?;
            cli::cmd_gradcheck(&load_config(&parsed)?)
        }
        "memcheck" => {
            let parsed = parse_args(rest)?;
            if parsed.positional.len() != 3 {
                return Err(Error::Config(
                    "memcheck needs three arguments: LEVELS K T".into(),
                ));
            }
            let nums: Vec<usize> = parsed
                .positional
                .iter()
                .map(|s| {
                    s.parse()
                        .map_err(|_| Error::Config(format!("memcheck: cannot parse '{s}'")))
                })
                .collect::<Result<_>>()?;
            cli::cmd_memcheck(nums[0], nums[1], nums[2])
        }
        "lmax" => {
            let parsed = parse_args(rest)?;
            let cfg = load_config(&parsed)?;
            let ckpt = parsed
                .checkpoint
                .ok_or_else(|| Error::Config("--checkpoint is required".into()))?;
            cli::cmd_lmax(&cfg, &ckpt, parsed.threshold, parsed.max_n).map(|_| ())
        }
        "eval" => {
            let parsed = parse_args(rest)?;
            let cfg = load_config(&parsed)?;
            let ckpt = parsed
                .checkpoint
                .ok_or_else(|| Error::Config("--checkpoint is required".into()))?;
            cli::cmd_eval(&cfg, &ckpt).map(|_| ())
        }
        "export-csv" => {
            let parsed = parse_args(rest)?;
            let log = parsed
                .log
                .ok_or_else(|| Error::Config("--log is required".into()))?;
            let out = parsed
                .out
                .ok_or_else(|| Error::Config("--out is required".into()))?;
            cli::cmd_export_csv(&log, &out)
        }
        "--help" | "-h" | "help" => {
            println!("{USAGE}");
            Ok(())
        }
        other => {
            eprintln!("{USAGE}");
            Err(Error::Config(format!("unknown command '{other}'")))
        }
    }
}
