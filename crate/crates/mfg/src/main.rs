fn main() {
    std::process::exit(mfg::cli::main());
}
