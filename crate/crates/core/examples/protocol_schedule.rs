//! Reward, supply, inflation and difficulty over the halving schedule.

use pow_mfg::protocol::{inflation_rate, per_fortnight, HashSegment, ProtocolParams};

fn main() -> pow_mfg::Result<()> {
    let pp = ProtocolParams::default();
    println!("target intensity {:.1} blocks per fortnight", per_fortnight(pp.target_intensity()));
    println!("{:>5} {:>14} {:>16} {:>12}", "epoch", "reward", "supply", "inflation");
    for l in (0..=34).step_by(2) {
        let segments = (l * pp.halving_blocks).div_ceil(pp.retarget_blocks);
        let reward = pp.block_reward(segments);
        let supply = pp.cumulative_supply(segments);
        let rate = inflation_rate(reward, pp.target_intensity(), supply)?;
        println!("{l:>5} {reward:>14.8} {supply:>16.3} {rate:>12.3e}");
    }

    for nodes in [1.0, 1e3, 1e6] {
        let h0 = pp.initial_hash_target(nodes)?;
        let seg = HashSegment { index: 0, total_hashes: h0, elapsed: pp.retarget_window_seconds() };
        let d = pp.difficulty_from_hashes(&seg, nodes)?;
        let fast = pp.block_arrival_intensity(h0, 2.0 * h0, nodes)?;
        println!(
            "M = {nodes:e}: H0 = {h0:.6e}, difficulty {d:.12}, intensity after doubling {:.3}x target",
            fast * 600.0
        );
    }
    Ok(())
}
