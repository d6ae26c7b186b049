fn main() {
    // LMPKIT_THREADS caps the worker pool; default is hardware concurrency.
    if let Ok(value) = std::env::var("LMPKIT_THREADS") {
        match value.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("ignoring LMPKIT_THREADS={value}: expected a positive integer"),
        }
    }
    if let Err(e) = lmpkit::run() {
        eprintln!(
            "{}",
            serde_json::to_string(&e.to_json()).expect("error serializes")
        );
        std::process::exit(1);
    }
}
