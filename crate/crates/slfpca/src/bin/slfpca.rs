fn main() {
    std::process::exit(slfpca::cli::run());
}
