fn main() {
    std::process::exit(ofdm_loading::cli::run(std::env::args_os()));
}
