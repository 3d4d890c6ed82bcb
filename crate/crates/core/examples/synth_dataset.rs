//! Writes a small synthetic dataset and reads it back.
//!
//! cargo run --example synth_dataset [out.jsonl]

use depthpose::data::{generate_synthetic, read_dataset, write_dataset, SynthConfig};
use depthpose::SkeletonModel;

fn main() -> depthpose::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| std::env::temp_dir().join("synth.jsonl").display().to_string());
    let skeleton = SkeletonModel::itop15();
    let config = SynthConfig {
        num_samples: 200,
        dropout: 0.2,
        seed: 3,
        ..Default::default()
    };
    let records = generate_synthetic(&config, &skeleton)?;
    write_dataset(&path, &records)?;

    let back = read_dataset(&path, &skeleton, true)?;
    assert_eq!(back, records);
    let missing: usize = back
        .iter()
        .map(|r| r.landmarks.iter().filter(|l| !l.detected).count())
        .sum();
    println!("{} samples in {path}, {missing} undetected landmarks", back.len());
    let first = &back[0];
    println!(
        "{}: torso at {:?}",
        first.id,
        first.gt3d[skeleton.landmark_index("torso").unwrap()]
    );
    Ok(())
}
