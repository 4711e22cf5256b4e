fn main() {
    std::process::exit(phreg::cli::run(std::env::args_os()));
}
