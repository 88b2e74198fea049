use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let code = speechprep_cli::main_with_args(args, &mut std::io::stdout(), &mut std::io::stderr());
    ExitCode::from(code as u8)
}
