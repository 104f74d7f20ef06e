fn main() {
    std::process::exit(streetctx::cli::run(std::env::args().collect()));
}
