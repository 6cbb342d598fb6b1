fn main() {
    std::process::exit(diffloss_cli::run(std::env::args()));
}
