fn main() {
    // placeholder; CLI wiring lands with the pipeline modules
}
