//! Command-line front end: dataset generation, training, architecture
//! search, genotype derivation, evaluation, gradient checking, and depth-map
//! inference. Every failure prints one machine-parsable line
//! `error[<class>]: <message>` and exits with the class code: 2 config,
//! 3 data, 4 numeric, 5 I/O.

mod commands;
mod config;
mod data;
mod output;

use std::collections::BTreeMap;
use std::path::PathBuf;

use cdcn::{Error, Result};

const USAGE: &str = "\
usage: cdcn <command> [--config <path>] [--json] [--<key> <value>]...

commands:
  gen        render a synthetic live/spoof dataset to disk
  train      train a depth-regression model, write checkpoint + loss curve
  search     run the bi-level architecture search, write trace + logits
  derive     turn searched logits into a genotype file
  eval       score metrics from a scores CSV or a checkpoint + dataset
  gradcheck  run the finite-difference gradient suite
  infer      write per-sample scores and predicted depth maps

Flags mirror config file keys; `--key value` overrides the file. Run a
command with an unknown key to see the keys it accepts.";

/// Parsed command line: optional config file, output mode, key overrides.
pub struct CliArgs {
    pub config_path: Option<PathBuf>,
    pub json: bool,
    pub flags: BTreeMap<String, String>,
}

impl CliArgs {
    fn parse(rest: &[String]) -> Result<CliArgs> {
        let mut config_path = None;
        let mut json = false;
        let mut flags = BTreeMap::new();
        let mut i = 0;
        while i < rest.len() {
            let arg = &rest[i];
            if arg == "--json" {
                json = true;
                i += 1;
                continue;
            }
            let key = arg.strip_prefix("--").ok_or_else(|| {
                Error::Config(format!("unexpected argument {arg:?}, flags look like --key value"))
            })?;
            let value = rest
                .get(i + 1)
                .ok_or_else(|| Error::Config(format!("flag --{key} needs a value")))?;
            if key == "config" {
                config_path = Some(PathBuf::from(value));
            } else {
                flags.insert(key.replace('-', "_"), value.clone());
            }
            i += 2;
        }
        Ok(CliArgs { config_path, json, flags })
    }
}

fn error_class(e: &Error) -> &'static str {
    match e {
        Error::Config(_) | Error::Shape { .. } | Error::Tape(_) => "config",
        Error::Data(_) | Error::Format { .. } => "data",
        Error::Numeric(_) => "numeric",
        Error::Io(_) => "io",
    }
}

fn exit_code(e: &Error) -> i32 {
    match error_class(e) {
        "config" => 2,
        "data" => 3,
        "numeric" => 4,
        _ => 5,
    }
}

fn run(args: &[String]) -> Result<()> {
    let command = match args.first() {
        Some(c) => c.as_str(),
        None => {
            println!("{USAGE}");
            return Err(Error::Config("no command given".to_string()));
        }
    };
    if matches!(command, "help" | "--help" | "-h") {
        println!("{USAGE}");
        return Ok(());
    }
    let cli = CliArgs::parse(&args[1..])?;
    match command {
        "gen" => commands::gen::run(&cli),
        "train" => commands::train::run(&cli),
        "search" => commands::search::run(&cli),
        "derive" => commands::derive::run(&cli),
        "eval" => commands::eval::run(&cli),
        "gradcheck" => commands::gradcheck::run(&cli),
        "infer" => commands::infer::run(&cli),
        other => Err(Error::Config(format!(
            "unknown command {other:?}; commands: gen, train, search, derive, eval, gradcheck, infer"
        ))),
    }
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if let Err(e) = run(&args) {
        eprintln!("error[{}]: {}", error_class(&e), e.message());
        std::process::exit(exit_code(&e));
    }
}
