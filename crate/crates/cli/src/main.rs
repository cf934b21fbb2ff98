fn main() {
    std::process::exit(tclswarm::run(std::env::args_os()));
}
