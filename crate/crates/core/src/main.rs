fn main() {
    std::process::exit(gcrf_ssl::cli::run());
}
