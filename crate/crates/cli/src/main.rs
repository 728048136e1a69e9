//! `eelab`: experiment driver for the early-exit lab.
//!
//! Subcommands: gen-data, train, eval, hardness, sweep, gradcheck.
//! Flags: --config PATH, --seed N, --out DIR, --alpha X, --checkpoint PATH.
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 training
//! divergence, 1 anything else.

use std::path::PathBuf;

use eelab_core::Error;

mod commands;
mod config;

use config::Overrides;

const USAGE: &str = "usage: eelab <gen-data|train|eval|hardness|sweep|gradcheck>
    [--config PATH]      experiment config file (JSON)
    [--seed N]           override the experiment seed
    [--out DIR]          override the output directory (default $EELAB_OUT_ROOT or eelab_runs)
    [--alpha X]          override the reward trade-off coefficient
    [--checkpoint PATH]  checkpoint to evaluate (eval, hardness)";

fn parse_args(args: &[String]) -> Result<(String, Overrides), Error> {
    let mut command = None;
    let mut overrides = Overrides::default();
    let mut iter = args.iter();
    while let Some(arg) = iter.next() {
        let mut take_value = |name: &str| {
            iter.next()
                .cloned()
                .ok_or_else(|| Error::Config(format!("{name} needs a value\n{USAGE}")))
        };
        match arg.as_str() {
            "--config" => overrides.config = Some(PathBuf::from(take_value("--config")?)),
            "--out" => overrides.out = Some(PathBuf::from(take_value("--out")?)),
            "--checkpoint" => {
                overrides.checkpoint = Some(PathBuf::from(take_value("--checkpoint")?))
            }
            "--seed" => {
                let raw = take_value("--seed")?;
                overrides.seed = Some(
                    raw.parse()
                        .map_err(|_| Error::Config(format!("bad --seed value '{raw}'")))?,
                );
            }
            "--alpha" => {
                let raw = take_value("--alpha")?;
                overrides.alpha = Some(
                    raw.parse()
                        .map_err(|_| Error::Config(format!("bad --alpha value '{raw}'")))?,
                );
            }
            "--help" | "-h" => {
                println!("{USAGE}");
                std::process::exit(0);
            }
            other if other.starts_with('-') => {
                return Err(Error::Config(format!("unknown flag '{other}'\n{USAGE}")));
            }
            other => {
                if command.replace(other.to_string()).is_some() {
                    return Err(Error::Config(format!("unexpected argument '{other}'\n{USAGE}")));
                }
            }
        }
    }
    let command = command.ok_or_else(|| Error::Config(format!("missing subcommand\n{USAGE}")))?;
    Ok((command, overrides))
}

fn dispatch(command: &str, overrides: &Overrides) -> Result<(), Error> {
    match command {
        "gen-data" => commands::gen_data(overrides),
        "train" => commands::train(overrides),
        "eval" => commands::eval(overrides),
        "hardness" => commands::hardness_cmd(overrides),
        "sweep" => commands::sweep(overrides),
        "gradcheck" => commands::gradcheck(overrides),
        other => Err(Error::Config(format!("unknown subcommand '{other}'\n{USAGE}"))),
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Io(_) => 3,
        Error::Training(_) => 4,
        _ => 1,
    }
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let code = match parse_args(&args).and_then(|(command, overrides)| dispatch(&command, &overrides))
    {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    };
    std::process::exit(code);
}
