fn main() -> std::process::ExitCode {
    mitodet::cli::main()
}
