fn main() {
    std::process::exit(asyred::cli::main_with(std::env::args_os()));
}
