fn main() {
    std::process::exit(prose_forge::run_cli(std::env::args_os()));
}
