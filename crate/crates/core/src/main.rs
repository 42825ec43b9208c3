fn main() {
    std::process::exit(vpreg::cli::run(std::env::args_os()));
}
