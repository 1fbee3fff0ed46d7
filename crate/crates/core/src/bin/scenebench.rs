fn main() {
    std::process::exit(scenebench::cli::run(std::env::args_os()));
}
