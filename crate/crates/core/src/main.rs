fn main() {
    std::process::exit(svqgc::cli::run(std::env::args_os()));
}
