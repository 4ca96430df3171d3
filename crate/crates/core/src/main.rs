fn main() {
    std::process::exit(noseprint::cli::run(std::env::args_os()));
}
