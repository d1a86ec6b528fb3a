use std::io::{BufWriter, Write};
use std::process::ExitCode;

fn main() -> ExitCode {
    let mut stdout = BufWriter::new(std::io::stdout());
    let mut stderr = std::io::stderr();
    let mut code = npprior::cli::run(std::env::args_os(), &mut stdout, &mut stderr);
    if stdout.flush().is_err() && code == npprior::cli::EXIT_OK {
        code = npprior::cli::EXIT_IO;
    }
    ExitCode::from(code as u8)
}
