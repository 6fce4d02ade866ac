use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match misfit_cli::parse_from(std::env::args_os()) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // clap reports usage errors with 2; the documented contract uses 1.
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = misfit_cli::run(&cli);
    for line in &result.summary {
        if line.starts_with("error:") {
            eprintln!("{line}");
        } else {
            println!("{line}");
        }
    }
    for path in &result.artifacts {
        println!("wrote {}", path.display());
    }
    ExitCode::from(result.exit_code as u8)
}
