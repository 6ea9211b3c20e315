fn main() {
    std::process::exit(metascope::cli::run(std::env::args_os()));
}
