mod args;
mod config;
mod run;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::Cli;
use microcolor::Error;

const USAGE_EXIT: u8 = 2;

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        "io" => 3,
        "image" => 4,
        "shape" => 5,
        "range" => 6,
        "argument" => 7,
        "fingerprint" => 8,
        "corrupt" => 9,
        "divergence" => 10,
        "mask" => 11,
        "survey" => 12,
        _ => 1,
    }
}

fn one_line(msg: &str) -> String {
    msg.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join("; ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!(
                "error kind=usage code={USAGE_EXIT}: {}",
                one_line(&e.to_string().replace("error: ", ""))
            );
            return ExitCode::from(USAGE_EXIT);
        }
    };
    match run::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!(
                "error kind={} code={code}: {}",
                e.kind(),
                one_line(&e.to_string())
            );
            ExitCode::from(code)
        }
    }
}
