//! Writes the planted-error fixture bundle to the directory given as the first argument.

use classprobe::synth::{planted_fixture, FixtureConfig};
use classprobe::write_bundle;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args()
        .nth(1)
        .ok_or("usage: make_fixture <output-dir> [seed]")?;
    let seed = match std::env::args().nth(2) {
        Some(s) => s.parse()?,
        None => FixtureConfig::default().seed,
    };
    let fixture = planted_fixture(FixtureConfig {
        seed,
        ..FixtureConfig::default()
    });
    write_bundle(&fixture.bundle, &dir)?;
    let names = fixture.bundle.class_names();
    for p in &fixture.confusion_pairs {
        println!("confusion {} {}", names[p.a], names[p.b]);
    }
    for p in &fixture.bias_pairs {
        println!("bias {} {}", names[p.a], names[p.b]);
    }
    Ok(())
}
