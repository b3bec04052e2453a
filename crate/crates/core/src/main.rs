fn main() -> std::process::ExitCode {
    ait::cli::main()
}
