fn main() {
    std::process::exit(disparity_id_cli::run(std::env::args_os()));
}
