fn main() {
    std::process::exit(linbp_cli::cli_main(std::env::args_os()));
}
