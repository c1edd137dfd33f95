fn main() {
    std::process::exit(qtraj::cli::run(std::env::args_os()));
}
