fn main() {
    std::process::exit(encpc::cli::main_with(std::env::args_os()));
}
