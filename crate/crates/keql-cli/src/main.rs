use std::process::ExitCode;

fn main() -> ExitCode {
    eprintln!("keql: command-line interface not wired up yet");
    ExitCode::from(2)
}
