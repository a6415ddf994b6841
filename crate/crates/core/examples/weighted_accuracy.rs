//! Weighted level-2 accuracy and the overall estimate from published tables.
//!
//! cargo run --example weighted_accuracy

use bertcnn::hierarchy::reference::{table2_check, TABLE1, TABLE2};

fn main() {
    println!("section  classes  documents");
    for (s, classes, docs) in TABLE1 {
        println!("{s:>7}  {classes:>7}  {docs:>9}");
    }
    for row in &TABLE2 {
        let c = table2_check(row);
        println!(
            "{:<9} weighted L2 {:.4}% (printed {:.1}), overall {:.4}% (printed {:.1})",
            c.model, c.acc_l2_avg, c.printed_avg, c.acc_estimated, c.printed_overall
        );
    }
}
