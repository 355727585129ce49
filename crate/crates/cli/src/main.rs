use std::process::ExitCode;

use clap::Parser;

use sentinel_cli::config::{Cli, Command};
use sentinel_cli::{client, init_logging, keygen, robot, serve, CliError};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::from(1);
        }
    };
    let result: Result<(), CliError> = runtime.block_on(async {
        match cli.command {
            Command::Serve(args) => serve(args.resolve()?).await,
            Command::Robot(args) => robot(args.resolve()?).await,
            Command::Keygen(args) => {
                let summary = keygen(&args)?;
                println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
                Ok(())
            }
            Command::Client(args) => client(&args).await,
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            tracing::error!(error = %e, "exiting");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
