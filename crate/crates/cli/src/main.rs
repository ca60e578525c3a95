mod commands;
mod config;
mod dataset;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use lvae_core::data::default_data_dir;
use lvae_core::repro::{Preset, SEEDS};

use commands::{Failure, Outcome};
use config::{unique_leaf, ConfigSources, Kind, EXTRA_ALIASES, KEYS};

/// One `--<key>` flag per config key, with short aliases.
fn key_args(cmd: Command) -> Command {
    KEYS.iter().fold(cmd, |cmd, d| {
        let mut arg = Arg::new(d.key)
            .long(d.key)
            .help(d.help)
            .value_name("VALUE")
            .help_heading("Config keys");
        if let Some(l) = unique_leaf(d.key) {
            arg = arg.visible_alias(l);
        }
        for (alias, key) in EXTRA_ALIASES {
            if *key == d.key {
                arg = arg.visible_alias(*alias);
            }
        }
        if d.kind == Kind::Bool {
            arg = arg.num_args(0..=1).default_missing_value("true");
        }
        cmd.arg(arg)
    })
}

fn key_flags(m: &ArgMatches) -> Vec<(String, String)> {
    KEYS.iter()
        .filter_map(|d| m.get_one::<String>(d.key).map(|v| (d.key.to_string(), v.clone())))
        .collect()
}

fn config_arg() -> Arg {
    Arg::new("config")
        .long("config")
        .value_name("FILE")
        .value_parser(clap::value_parser!(PathBuf))
        .help("JSON file of dotted keys; flags win over it")
}

fn checkpoint_arg() -> Arg {
    Arg::new("checkpoint")
        .long("checkpoint")
        .required(true)
        .value_name("FILE")
        .value_parser(clap::value_parser!(PathBuf))
}

fn out_arg(required: bool, help: &'static str) -> Arg {
    Arg::new("out")
        .long("out")
        .required(required)
        .value_name("DIR")
        .value_parser(clap::value_parser!(PathBuf))
        .help(help)
}

fn cli() -> Command {
    Command::new("lvae")
        .about("Train, evaluate and inspect hierarchical VAEs with bottom-up or ladder inference")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(key_args(
            Command::new("train")
                .about("Train a model into a run directory")
                .arg(config_arg())
                .arg(out_arg(false, "run directory [default: run]"))
                .arg(
                    Arg::new("resume")
                        .long("resume")
                        .action(ArgAction::SetTrue)
                        .help("continue from the newest checkpoint in the run directory"),
                ),
        ))
        .subcommand(key_args(
            Command::new("eval")
                .about("Importance-weighted log-likelihood bound on the test set")
                .arg(checkpoint_arg())
                .arg(config_arg())
                .arg(
                    Arg::new("csv")
                        .long("csv")
                        .value_name("FILE")
                        .value_parser(clap::value_parser!(PathBuf))
                        .help("per-datapoint bounds [default: next to the checkpoint]"),
                ),
        ))
        .subcommand(key_args(
            Command::new("diagnose")
                .about("Unit activity, layer KL profile and latent projections")
                .arg(checkpoint_arg())
                .arg(config_arg())
                .arg(out_arg(false, "output directory [default: next to the checkpoint]")),
        ))
        .subcommand(
            Command::new("repro")
                .about("Desk-scale MNIST comparison of the four presets")
                .arg(out_arg(true, "output directory"))
                .arg(
                    Arg::new("preset")
                        .long("preset")
                        .value_delimiter(',')
                        .value_parser(["all", "lvae-bn-wu", "vae-bn-wu", "vae", "vae-bn"])
                        .default_value("all"),
                )
                .arg(
                    Arg::new("seeds")
                        .long("seeds")
                        .value_delimiter(',')
                        .value_parser(clap::value_parser!(u64)),
                )
                .arg(
                    Arg::new("epochs")
                        .long("epochs")
                        .value_parser(clap::value_parser!(usize))
                        .help("override the preset length (for quick checks)"),
                )
                .arg(
                    Arg::new("data-dir")
                        .long("data-dir")
                        .value_parser(clap::value_parser!(PathBuf))
                        .help("MNIST directory [default: LVAE_DATA_DIR or the bundled data]"),
                ),
        )
}

fn run(m: &ArgMatches) -> Outcome {
    match m.subcommand() {
        Some(("train", m)) => {
            let out = m.get_one::<PathBuf>("out").cloned().unwrap_or_else(|| PathBuf::from("run"));
            let resume = m.get_flag("resume");
            let mut file = m.get_one::<PathBuf>("config").cloned();
            if file.is_none() && resume && out.join("config.json").is_file() {
                file = Some(out.join("config.json"));
            }
            let mut sources = ConfigSources::with_file(file.as_deref()).map_err(Failure::Invalid)?;
            sources.flags = key_flags(m);
            commands::train(sources, &out, resume)
        }
        Some(("eval", m)) => {
            let ck = m.get_one::<PathBuf>("checkpoint").unwrap();
            let sources = commands::sources_for_checkpoint(m.get_one::<PathBuf>("config").map(|p| p.as_path()), ck, key_flags(m))?;
            commands::eval(sources, ck, m.get_one::<PathBuf>("csv").map(|p| p.as_path()))
        }
        Some(("diagnose", m)) => {
            let ck = m.get_one::<PathBuf>("checkpoint").unwrap();
            let sources = commands::sources_for_checkpoint(m.get_one::<PathBuf>("config").map(|p| p.as_path()), ck, key_flags(m))?;
            commands::diagnose(sources, ck, m.get_one::<PathBuf>("out").map(|p| p.as_path()))
        }
        Some(("repro", m)) => {
            let names: Vec<&String> = m.get_many::<String>("preset").unwrap().collect();
            let presets = if names.iter().any(|n| *n == "all") {
                Preset::ALL.to_vec()
            } else {
                names
                    .iter()
                    .map(|n| Preset::from_name(n))
                    .collect::<Result<Vec<_>, _>>()?
            };
            let seeds = m
                .get_many::<u64>("seeds")
                .map(|s| s.copied().collect())
                .unwrap_or_else(|| SEEDS.to_vec());
            commands::repro(commands::ReproArgs {
                presets,
                seeds,
                epochs: m.get_one::<usize>("epochs").copied(),
                data_dir: m.get_one::<PathBuf>("data-dir").cloned().unwrap_or_else(default_data_dir),
                out: m.get_one::<PathBuf>("out").unwrap().clone(),
            })
        }
        _ => unreachable!("subcommand required"),
    }
}

fn main() -> ExitCode {
    match run(&cli().get_matches()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(problems)) => {
            eprintln!("invalid configuration:");
            for p in problems {
                eprintln!("  - {p}");
            }
            ExitCode::from(2)
        }
        Err(Failure::Diverged(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_definition_is_consistent() {
        cli().debug_assert();
    }
}
