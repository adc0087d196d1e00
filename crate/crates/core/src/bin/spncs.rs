fn main() {
    std::process::exit(spncs::cli::main_with_args(std::env::args_os()));
}
