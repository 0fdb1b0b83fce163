fn main() {
    std::process::exit(spdc_core::cli::run_cli(std::env::args_os()));
}
