fn main() {
    std::process::exit(hybridct::cli::run(std::env::args_os()));
}
