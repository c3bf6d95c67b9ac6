fn main() -> std::process::ExitCode {
    fastplap::cli::main()
}
