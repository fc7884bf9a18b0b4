//! Generates a small planted benchmark and shows what one instance looks like.

use personal_rag::cli::RunConfig;
use personal_rag::corpus::generate_synthetic;

fn main() -> personal_rag::Result<()> {
    let config = RunConfig {
        synthetic_users: 40,
        seed: 11,
        ..RunConfig::default()
    };
    let bench = generate_synthetic(&config.synthetic_spec()?)?;
    let data = &bench.dataset;

    println!("{} instances, digest {}", data.len(), &data.digest()[..16]);
    for (best, n) in data.planted_counts() {
        println!("  planted {best:<8} {n}");
    }

    let inst = &data.instances[0];
    let planted = inst.planted.as_ref().expect("synthetic instances are planted");
    println!("\ninput:  {}", inst.input_text);
    println!("target: {}", inst.target);
    println!("best:   {} (useful doc {:?})", planted.best, planted.useful_doc);
    for doc in &inst.profile.docs {
        let mark = if Some(&doc.doc_id) == planted.useful_doc.as_ref() { "*" } else { " " };
        println!(" {mark} {} t={} {:?}", doc.doc_id, doc.timestamp, doc.fields);
    }
    Ok(())
}
