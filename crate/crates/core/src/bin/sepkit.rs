fn main() {
    std::process::exit(sepkit::cli::run(std::env::args_os()));
}
