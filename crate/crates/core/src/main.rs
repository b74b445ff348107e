fn main() {
    std::process::exit(sit_core::cli::run(std::env::args_os()));
}
