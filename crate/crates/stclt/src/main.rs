fn main() {
    std::process::exit(stclt::cli::run());
}
