fn main() {
    std::process::exit(microgrid_core::cli::run(std::env::args_os()));
}
