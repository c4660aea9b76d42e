fn main() {
    std::process::exit(bugloc_cli::run(std::env::args_os()));
}
