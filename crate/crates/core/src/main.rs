fn main() {
    std::process::exit(dtdg_core::cli::run(std::env::args_os()));
}
