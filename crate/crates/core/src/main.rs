fn main() {
    std::process::exit(modex::cli::run(std::env::args_os()));
}
