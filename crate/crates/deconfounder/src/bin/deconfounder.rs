fn main() {
    std::process::exit(deconfounder::cli::run(std::env::args_os()));
}
