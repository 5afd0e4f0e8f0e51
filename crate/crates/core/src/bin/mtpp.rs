fn main() {
    std::process::exit(mtpp::cli::main_with_args(std::env::args_os()));
}
