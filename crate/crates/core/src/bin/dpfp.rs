fn main() {
    std::process::exit(dpfp::cli::main_with_args(std::env::args_os()));
}
