fn main() {
    std::process::exit(multifractal::cli::main_entry());
}
