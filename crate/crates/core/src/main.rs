fn main() -> std::process::ExitCode {
    authorprof::cli::main()
}
