fn main() {
    std::process::exit(scalevec::cli::run(std::env::args_os()));
}
