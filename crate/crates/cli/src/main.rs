fn main() {
    std::process::exit(equitopo_cli::run(std::env::args_os()));
}
