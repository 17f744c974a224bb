fn main() {
    std::process::exit(mval::cli::run(std::env::args_os()));
}
