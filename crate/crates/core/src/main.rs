fn main() {
    std::process::exit(rc_instruct::cli::main_with_args(std::env::args_os()));
}
