fn main() {
    std::process::exit(faceprobe_cli::run(std::env::args_os()));
}
