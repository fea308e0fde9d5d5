use std::process::ExitCode;

use actinf::harness::{
    decompose, describe_trial, emit_plot_data, exit_code, parse_cli, prepare, run_prepared, run_single,
    write_records, AgentSettings, CliCommand,
};
use actinf::model::load_spec;
use actinf::tmaze::build_tmaze_model;
use actinf::Error;

fn main() -> ExitCode {
    let cli = match parse_cli(std::env::args_os()) {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

fn dispatch(cmd: CliCommand) -> Result<(), Error> {
    match cmd {
        CliCommand::Run(args) => {
            let config = args.to_config();
            let setup = prepare(&config)?;
            let record = run_prepared(&config, &setup)?;
            let mut files = write_records(&record, &config.output_dir, config.output_format)?;
            files.extend(emit_plot_data(&record, &config.output_dir.join("plots"))?);
            println!(
                "agent {}: {} trials, final score {} ({:.1} ms)",
                config.agent,
                record.trials.len(),
                record.final_score,
                record.duration.as_secs_f64() * 1e3
            );
            for f in files {
                println!("  wrote {}", f.display());
            }
        }
        CliCommand::Trial { run, index } => {
            let config = run.to_config();
            let setup = prepare(&config)?;
            let agent = AgentSettings::from_config(&config, setup.state_prior.clone());
            let record = run_single(&config, &setup, &agent, index, 0)?;
            print!("{}", describe_trial(&setup.model, &record));
        }
        CliCommand::Decompose(args) => print!("{}", decompose(&args)?),
        CliCommand::Validate { model } => {
            let model = match model {
                Some(p) => load_spec(&p)?,
                None => build_tmaze_model(),
            };
            println!(
                "ok: {} states, {} outcomes, {} actions, horizon {}, {} policies",
                model.num_states,
                model.num_outcomes,
                model.num_actions,
                model.horizon,
                model.policies.len()
            );
        }
    }
    Ok(())
}
