fn main() {
    std::process::exit(vitreg::cli::run(std::env::args_os()));
}
