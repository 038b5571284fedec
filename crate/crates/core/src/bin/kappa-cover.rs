fn main() {
    std::process::exit(kappa_cover::cli_io::main_with_args(std::env::args_os()));
}
