fn main() {
    std::process::exit(herofilter::cli::run(std::env::args_os()));
}
