fn main() {
    std::process::exit(sumtransfer_cli::run(std::env::args_os()));
}
