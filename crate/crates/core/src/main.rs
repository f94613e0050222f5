fn main() {
    std::process::exit(graph_contrastive::cli::run(std::env::args_os()));
}
