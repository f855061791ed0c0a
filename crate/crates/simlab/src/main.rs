fn main() {
    std::process::exit(simlab::run(std::env::args_os()));
}
