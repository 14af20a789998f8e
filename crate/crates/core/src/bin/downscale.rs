fn main() {
    std::process::exit(downscale::cli::run_cli(std::env::args_os()));
}
