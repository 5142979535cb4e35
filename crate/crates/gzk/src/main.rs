use gzk::cli;

fn main() {
    std::process::exit(cli::run());
}
