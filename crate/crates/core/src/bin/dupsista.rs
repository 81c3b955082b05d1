fn main() -> std::process::ExitCode {
    dupsista::cli::main_entry()
}
