//! Time and memory of one training step: DEC with ten Anderson iterations
//! against ten unrolled, differentiated gradient-descent steps.

use monocanon::alloc::TrackingAllocator;
use monocanon::bench::{run_bench, BenchConfig};

#[global_allocator]
static ALLOC: TrackingAllocator = TrackingAllocator;

fn main() -> monocanon::Result<()> {
    let r = run_bench(&BenchConfig::default())?;
    for (name, c) in [("dec", &r.dec), ("unrolled gd", &r.unrolled_gd)] {
        println!(
            "{name:<12} {:.3}s per batch, peak {:.1} MiB, tape {:.1} MiB",
            c.seconds_per_batch,
            c.peak_bytes.unwrap_or(0) as f64 / 1048576.0,
            c.tape_bytes as f64 / 1048576.0
        );
    }
    println!("time ratio {:.3}, memory ratio {:?}", r.time_ratio, r.memory_ratio);
    Ok(())
}
