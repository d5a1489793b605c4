fn main() {
    std::process::exit(geosteer::run(std::env::args_os()));
}
