fn main() {
    std::process::exit(ctquant_cli::run(std::env::args_os()));
}
