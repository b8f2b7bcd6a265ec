fn main() {
    std::process::exit(tripcast::cli::run());
}
