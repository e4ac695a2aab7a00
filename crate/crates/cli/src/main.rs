fn main() {
    std::process::exit(sssa_cli::run(std::env::args_os()));
}
