fn main() {
    std::process::exit(designforge_cli::run(std::env::args_os()));
}
