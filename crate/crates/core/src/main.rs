fn main() {
    std::process::exit(nftk::cli::run(std::env::args_os()));
}
