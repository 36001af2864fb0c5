fn main() {
    std::process::exit(agemorph::cli::run());
}
