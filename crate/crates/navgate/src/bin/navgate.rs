fn main() {
    std::process::exit(navgate::cli::run(std::env::args_os()));
}
