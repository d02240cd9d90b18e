fn main() {
    std::process::exit(chi_contract::cli::cli_main(std::env::args_os()));
}
