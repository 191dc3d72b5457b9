use std::path::PathBuf;
use std::process::ExitCode;

use asldn::config::RunConfig;
use asldn::pipeline;
use asldn::runner::Parallel;
use clap::{Arg, ArgAction, ArgMatches, Command};

fn config_args(cmd: Command) -> Command {
    let cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .short('c')
            .value_name("FILE")
            .help("key = value config file; flags override it"),
    );
    RunConfig::KEYS.iter().fold(cmd, |cmd, key| {
        cmd.arg(
            Arg::new(*key)
                .long(key.replace('_', "-"))
                .value_name("VALUE")
                .hide_short_help(true),
        )
    })
}

fn cli() -> Command {
    Command::new("asldn")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Denoise ASL perfusion maps with a dilated wide activation network trained on noisy pairs")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(config_args(
            Command::new("simulate").about("Generate a phantom dataset").arg(
                Arg::new("force")
                    .long("force")
                    .action(ArgAction::SetTrue)
                    .help("Overwrite a non-empty dataset directory"),
            ),
        ))
        .subcommand(config_args(Command::new("train").about("Train a network on the dataset's training split")))
        .subcommand(config_args(Command::new("eval").about("Score trained weights on the test split")))
        .subcommand(
            Command::new("report")
                .about("Aggregate metric CSVs per method")
                .arg(Arg::new("csv").required(true).num_args(1..).value_name("CSV"))
                .arg(Arg::new("out").long("out").short('o').value_name("FILE")),
        )
        .subcommand(config_args(Command::new("describe").about("Print the network's structural audit")))
}

fn resolve(m: &ArgMatches) -> asldn::Result<RunConfig> {
    let mut cfg = match m.get_one::<String>("config") {
        Some(p) => RunConfig::load(&PathBuf::from(p))?,
        None => RunConfig::default(),
    };
    for key in RunConfig::KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    Ok(cfg)
}

fn run(matches: ArgMatches) -> asldn::Result<()> {
    match matches.subcommand() {
        Some(("simulate", m)) => {
            let cfg = resolve(m)?;
            let ds = pipeline::simulate(&cfg, m.get_flag("force"))?;
            println!(
                "wrote {} subjects to {}",
                ds.manifest.entries.len(),
                ds.root.display()
            );
        }
        Some(("train", m)) => {
            let cfg = resolve(m)?;
            let s = pipeline::train(&cfg, &Parallel::from_env()?)?;
            let best = &s.checkpoints[s.selected];
            println!(
                "{} epochs, {} steps, final loss {:.6}; selected {} (val PSNR {:.2} dB) -> {}",
                s.loss_trace.len(),
                s.steps,
                s.loss_trace.last().copied().unwrap_or(f64::NAN),
                best.path.display(),
                best.val_psnr_db,
                s.final_weights.display()
            );
        }
        Some(("eval", m)) => {
            let cfg = resolve(m)?;
            let r = pipeline::eval(&cfg, &Parallel::from_env()?)?;
            print!("{}", pipeline::report_table(&r.aggregates()));
            println!("wrote {}", cfg.eval_dir.join(pipeline::METRICS_CSV).display());
        }
        Some(("report", m)) => {
            let paths: Vec<PathBuf> = m.get_many::<String>("csv").unwrap().map(PathBuf::from).collect();
            let out = m.get_one::<String>("out").map(PathBuf::from);
            let aggs = pipeline::report(&paths, out.as_deref())?;
            print!("{}", pipeline::report_table(&aggs));
        }
        Some(("describe", m)) => {
            let cfg = resolve(m)?;
            print!("{}", pipeline::describe(&cfg, cfg.weights.as_deref())?);
        }
        _ => unreachable!("subcommand required"),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(cli().get_matches()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
