fn main() {
    if let Err(err) = gce_lab::cli::run() {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}
