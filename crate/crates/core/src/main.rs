fn main() {
    std::process::exit(nonsem::cli::run(std::env::args_os()));
}
