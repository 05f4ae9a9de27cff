fn main() {
    std::process::exit(mvcn::cli::main_with_args(std::env::args_os()));
}
