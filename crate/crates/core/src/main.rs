fn main() {
    std::process::exit(cdash::cli::run());
}
