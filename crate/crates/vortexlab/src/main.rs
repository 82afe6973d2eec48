fn main() {
    std::process::exit(vortexlab::cli::run(std::env::args()));
}
