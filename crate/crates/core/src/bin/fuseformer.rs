use std::io;
use std::process::ExitCode;

fn main() -> ExitCode {
    let code = fuseformer::commands::run_from(std::env::args_os(), &mut io::stdout(), &mut io::stderr());
    ExitCode::from(code)
}
