//! Prints the packet rate for every published configuration: stack factors
//! {1, 2, 4} crossed with semantic vocabularies {32768, 16384, 8192, 4096},
//! acoustic vocabulary fixed at 8192.
//!
//!     cargo run --example bitrate_table

use smc::bitstream::{bitrate_report, published_configs, PacketHeader, PACKET_VERSION};
use smc::error::Result;

fn main() -> Result<()> {
    println!(
        "{:>2} {:>9} {:>9} {:>8} {:>10} {:>10} {:>8}",
        "K", "sem_vocab", "aco_vocab", "pairs/s", "sem kbps", "aco kbps", "total"
    );
    for (k, sem, aco) in published_configs() {
        let header = PacketHeader {
            version: PACKET_VERSION,
            sample_rate: 16_000,
            stack_factor: k,
            semantic_vocab: sem,
            acoustic_vocab: aco,
            token_pairs: 512 / k as u32,
            original_sample_count: 163_840,
            window_config: 0,
        };
        let r = bitrate_report(&header)?;
        println!(
            "{:>2} {:>9} {:>9} {:>8} {:>10.4} {:>10.4} {:>8.4}",
            k, sem, aco, r.pairs_per_second, r.kbps_semantic, r.kbps_acoustic, r.kbps_total
        );
    }
    Ok(())
}
