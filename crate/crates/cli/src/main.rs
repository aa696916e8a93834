fn main() {
    std::process::exit(diffmem_cli::run(std::env::args_os()));
}
