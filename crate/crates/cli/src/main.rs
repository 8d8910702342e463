fn main() {
    std::process::exit(gtr_cli::run(std::env::args_os()));
}
