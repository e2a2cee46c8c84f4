fn main() {
    std::process::exit(tactis::cli::main(std::env::args_os()));
}
