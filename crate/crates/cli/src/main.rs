fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(prnet_cli::run_cli(&args));
}
