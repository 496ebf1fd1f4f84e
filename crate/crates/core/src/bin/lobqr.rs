fn main() {
    std::process::exit(lobqr::pipeline::main_with_args(std::env::args_os()));
}
