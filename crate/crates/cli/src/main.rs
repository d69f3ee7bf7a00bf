fn main() {
    std::process::exit(soundmorph_cli::run(std::env::args_os()));
}
