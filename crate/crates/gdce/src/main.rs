fn main() -> std::process::ExitCode {
    gdce::cli::main()
}
