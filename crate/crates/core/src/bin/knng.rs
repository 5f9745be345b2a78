use std::process::ExitCode;

fn main() -> ExitCode {
    knn_descent::cli::main()
}
