fn main() -> std::process::ExitCode {
    stimulus::cli::main()
}
