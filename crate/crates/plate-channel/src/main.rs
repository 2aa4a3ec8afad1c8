fn main() {
    std::process::exit(plate_channel::cli::main());
}
