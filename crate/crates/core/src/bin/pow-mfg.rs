fn main() {
    std::process::exit(pow_mfg::cli::run());
}
