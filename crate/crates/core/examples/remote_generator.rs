//! Sends one prompt through the cached remote generator.
//!
//! The endpoint receives `{"prompt": ..., "max_tokens": ...}` and answers
//! with `{"output": ...}`. A second call with the same prompt is served from
//! the on-disk cache.
//!
//! `cargo run --example remote_generator -- http://127.0.0.1:8000/generate "prompt"`

use personal_rag::generator::{Generator, GeneratorConfig, GeneratorKind};

fn main() {
    let mut args = std::env::args().skip(1);
    let Some(endpoint) = args.next() else {
        eprintln!("usage: remote_generator <endpoint> [prompt]");
        std::process::exit(1);
    };
    let prompt = args.next().unwrap_or_else(|| "Write a haiku about retrieval.".into());
    let config = GeneratorConfig {
        kind: GeneratorKind::Remote,
        endpoint: Some(endpoint),
        timeout_secs: 30.0,
        retries: 2,
        cache_dir: Some(std::env::temp_dir().join("personal-rag-remote-cache")),
        ..GeneratorConfig::default()
    };
    let generator = match Generator::from_config(&config, None) {
        Ok(g) => g,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    };
    for attempt in 1..=2 {
        match generator.generate(&prompt) {
            Ok(text) => println!("[{attempt}] {text}"),
            Err(e) => {
                eprintln!("error: {e}");
                std::process::exit(3);
            }
        }
    }
    println!(
        "backend calls {}, cache hits {}, misses {}",
        generator.backend_calls(),
        generator.cache_hits(),
        generator.cache_misses()
    );
}
