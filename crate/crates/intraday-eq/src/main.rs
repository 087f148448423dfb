fn main() {
    std::process::exit(intraday_eq::cli::run(std::env::args_os()));
}
