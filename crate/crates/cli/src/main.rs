mod args;
mod exec;
mod report;

use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let spec = args::RunSpec::parse();
    let prepared = match args::prepare(spec) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let format = prepared.format;
    let out = prepared.out.clone();
    match exec::execute(&prepared) {
        Ok((report, code)) => {
            if let Err(e) = report::emit(&report, format, out.as_deref()) {
                eprintln!("error: cannot write report: {e}");
                return ExitCode::from(1);
            }
            ExitCode::from(code)
        }
        Err(e) => {
            report::emit_error(&e, format);
            ExitCode::from(1)
        }
    }
}
