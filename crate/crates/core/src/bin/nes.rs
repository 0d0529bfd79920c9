fn main() {
    std::process::exit(nes_core::cli::run_from_args(std::env::args_os()));
}
