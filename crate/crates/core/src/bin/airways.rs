fn main() {
    std::process::exit(airways::cli::run(std::env::args_os()));
}
