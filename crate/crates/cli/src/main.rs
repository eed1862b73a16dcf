fn main() {
    std::process::exit(stitch_cli::run(std::env::args_os()));
}
