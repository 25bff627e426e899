fn main() {
    std::process::exit(elastica::cli::run(std::env::args_os()));
}
