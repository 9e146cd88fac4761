fn main() {
    std::process::exit(phylogrid_service::cli::main_with(std::env::args_os()));
}
