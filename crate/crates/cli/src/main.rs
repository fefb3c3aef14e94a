fn main() {
    std::process::exit(dflprivacy_cli::run(std::env::args_os()));
}
