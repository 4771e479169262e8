fn main() {
    std::process::exit(echoaudit::cli::run(std::env::args_os()));
}
