fn main() {
    std::process::exit(ltstab::cli::cli_main(std::env::args_os()));
}
