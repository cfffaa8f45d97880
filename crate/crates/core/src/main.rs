fn main() {
    std::process::exit(dynparse::cli::run(std::env::args_os()));
}
