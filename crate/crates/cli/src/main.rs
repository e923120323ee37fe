fn main() {
    std::process::exit(robustmed_cli::run(std::env::args_os()));
}
