fn main() {
    std::process::exit(bttrain::cli::run());
}
