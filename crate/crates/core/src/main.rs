fn main() {
    std::process::exit(prokan::cli::run(std::env::args_os()));
}
