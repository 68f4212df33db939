fn main() {
    std::process::exit(fpraker::cli::main_with(std::env::args_os()));
}
