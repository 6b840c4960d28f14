fn main() {
    std::process::exit(scop::cli::main_with(std::env::args_os()));
}
