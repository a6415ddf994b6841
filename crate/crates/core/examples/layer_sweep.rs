//! Accuracy as a function of how many top encoder layers feed the head.
//!
//! cargo run --release --example layer_sweep

use bertcnn::cli::{run_flat, RunConfig};
use bertcnn::corpus::{generate_synthetic, SyntheticSpec};

fn main() -> bertcnn::Result<()> {
    let mut cfg = RunConfig::load(std::path::Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/toy.cfg")))?;
    for kv in ["encoder.n_layers=4", "epochs=8", "flat.level=section"] {
        cfg.apply_override(kv)?;
    }
    let spec = SyntheticSpec { sections: 3, classes_per_section: 2, docs_per_class: 20, ..Default::default() };
    let records = generate_synthetic(&spec, cfg.seed)?;
    for n in 1..=cfg.n_layers {
        cfg.n_top_layers = n;
        let run = run_flat(&cfg, &records)?;
        println!("n = {n}: accuracy {:.3} on {} test documents", run.summary.accuracy, run.summary.n_test);
    }
    Ok(())
}
