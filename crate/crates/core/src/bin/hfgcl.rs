fn main() {
    std::process::exit(hfgcl::cli::main_with_args(std::env::args_os()));
}
