//! `fieldrecon`: generate topology-optimization frames, train the
//! surrogate and generative models, and reconstruct densified timelines.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};

use config::{RunConfig, COMMANDS, SEED_ENV};
use error::CliResult;
use manifest::RunRecord;

fn cli() -> Command {
    let mut app = Command::new("fieldrecon")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Topology-optimization frame generation, surrogate regression and timeline reconstruction")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for &(name, about) in COMMANDS {
        let mut sub = Command::new(name).about(about).arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .help("flat `key = value` file applied before flags"),
        );
        for key in config::schema(name) {
            let help = if key.default.is_empty() {
                key.help.to_string()
            } else {
                format!("{} [default: {}]", key.help, key.default)
            };
            sub = sub.arg(
                Arg::new(key.name)
                    .long(key.name)
                    .value_name("VALUE")
                    .action(ArgAction::Set)
                    .help(help),
            );
        }
        app = app.subcommand(sub);
    }
    app.subcommand(
        Command::new("replay")
            .about("re-run the command recorded in a run manifest")
            .arg(Arg::new("manifest").required(true).value_name("RUN_MANIFEST"))
            .arg(Arg::new("out").long("out").value_name("DIR").help("write to DIR instead of the recorded output")),
    )
}

fn resolve(name: &str, m: &ArgMatches) -> CliResult<RunConfig> {
    let file = match m.get_one::<String>("config") {
        Some(p) => config::parse_file(&PathBuf::from(p))?,
        None => Vec::new(),
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    let flags: Vec<(String, String)> = config::schema(name)
        .iter()
        .filter_map(|k| m.get_one::<String>(k.name).map(|v| (k.name.to_string(), v.clone())))
        .collect();
    RunConfig::resolve(name, &file, env_seed, &flags)
}

fn execute(cfg: &RunConfig) -> CliResult<()> {
    let mut record = RunRecord::default();
    commands::run(cfg, &mut record)?;
    let path = manifest::write(&cfg.out(), cfg, &record)?;
    println!("run manifest: {}", path.display());
    Ok(())
}

fn dispatch(matches: &ArgMatches) -> CliResult<()> {
    let (name, m) = matches.subcommand().expect("subcommand required");
    if name == "replay" {
        let path = PathBuf::from(m.get_one::<String>("manifest").expect("required"));
        let mut cfg = manifest::read_config(&path)?;
        if let Some(out) = m.get_one::<String>("out") {
            cfg.values.insert("out".into(), out.clone());
        }
        return execute(&cfg);
    }
    execute(&resolve(name, m)?)
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match dispatch(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
