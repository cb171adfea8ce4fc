//! Forward+backward throughput per variant on synthetic digits.

use std::time::Instant;

use scalevec::data::SampleRecord;
use scalevec::model::train::batch_gradients;
use scalevec::model::{ModelConfig, Network, Variant};

fn main() -> scalevec::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(16);
    let records: Vec<SampleRecord> = (0..n)
        .map(|i| SampleRecord {
            image: (0..784).map(|p| (((p * 7 + i * 13) % 97) as f32) / 97.0).collect(),
            label: (i % 10) as u8,
            scale: 0.65,
        })
        .collect();
    let refs: Vec<&SampleRecord> = records.iter().collect();
    for v in Variant::ALL {
        let net = Network::<f32>::new(ModelConfig::new(v), 0)?;
        let t = Instant::now();
        batch_gradients(&net, &refs, 1.0, 1)?;
        let per = t.elapsed().as_secs_f64() / n as f64;
        println!("{v:12} {:8.2} ms/sample  ({} params)", per * 1e3, net.param_count());
    }
    Ok(())
}
