fn main() {
    std::process::exit(cepam::cli::run(std::env::args_os()));
}
