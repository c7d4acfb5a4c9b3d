fn main() -> std::process::ExitCode {
    prosolabel::cli::main()
}
