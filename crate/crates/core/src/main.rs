fn main() {
    std::process::exit(ghostalign::cli::run(std::env::args_os()));
}
