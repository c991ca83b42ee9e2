fn main() {
    std::process::exit(sfmdepth::cli::run(std::env::args_os()));
}
