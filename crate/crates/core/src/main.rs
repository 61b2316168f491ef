fn main() {
    std::process::exit(doubledid::cli::run_cli());
}
