fn main() {
    std::process::exit(trialmatch::cli::run(std::env::args_os()));
}
