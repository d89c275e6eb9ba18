fn main() {
    seisgen::cli::main_entry()
}
