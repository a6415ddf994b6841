//! IPC code parsing, CSV ingestion and the two-level label taxonomy.
//!
//! cargo run --example ipc_ingest

use bertcnn::corpus::{ingest_bytes, parse_ipc, IngestOptions, LabelTaxonomy};

const EXPORT: &str = "申请号,摘要,专利分类
CN201,本实用新型公开了一种固体绝缘开关柜结构。,H02B13/035
CN202,一种联合收割机的割台装置。,A01D42/04
CN203,一种包装盒。,B65D
CN204,,B65D5/42
CN205,一种齿轮箱。,Z99
";

fn main() -> bertcnn::Result<()> {
    let code = parse_ipc("A01D42/04")?;
    println!(
        "A01D42/04 -> section {} class {} subclass {:?} group {:?} (level 2: {})",
        code.section(),
        code.class_num(),
        code.subclass(),
        code.group(),
        code.level2()
    );
    let ingested = ingest_bytes(EXPORT.as_bytes(), &IngestOptions::default())?;
    println!("{:?}", ingested.stats);
    for r in &ingested.records {
        println!("  {} {} {}", r.id, r.ipc, r.abstract_text);
    }
    let taxonomy = LabelTaxonomy::build(&ingested.records)?;
    for &s in taxonomy.sections() {
        println!("section {s}: classes {:?}", taxonomy.classes(s));
    }
    Ok(())
}
