fn main() {
    std::process::exit(bertcnn::cli::run(std::env::args_os()));
}
