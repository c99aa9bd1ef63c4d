fn main() {
    std::process::exit(bhring::cli::main_with_args(std::env::args_os()));
}
