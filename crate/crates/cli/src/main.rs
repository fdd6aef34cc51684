fn main() {
    std::process::exit(apsde_cli::run_cli(std::env::args_os()));
}
