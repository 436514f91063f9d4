fn main() {
    std::process::exit(orthopt::cli::dispatch(std::env::args().skip(1)));
}
