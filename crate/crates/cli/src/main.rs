fn main() {
    std::process::exit(cospeech_cli::run(std::env::args_os()));
}
