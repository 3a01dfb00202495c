fn main() {
    std::process::exit(flowgraph::cli::run(std::env::args_os()));
}
