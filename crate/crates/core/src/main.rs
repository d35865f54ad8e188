fn main() {
    std::process::exit(dmaml::harness::cli::run(std::env::args_os()));
}
