fn main() {
    std::process::exit(hcnn::experiment::cli::run(std::env::args_os()));
}
