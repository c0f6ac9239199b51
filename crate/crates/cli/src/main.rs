fn main() -> std::process::ExitCode {
    blindsr_cli::main_with(std::env::args_os())
}
