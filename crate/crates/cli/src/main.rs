fn main() {
    std::process::exit(cellsvm_cli::run(std::env::args_os()));
}
