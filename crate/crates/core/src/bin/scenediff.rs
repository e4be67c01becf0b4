fn main() {
    std::process::exit(scenediff::cli::run_from(std::env::args_os()));
}
