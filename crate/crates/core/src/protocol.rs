//! Reward mechanism arithmetic of the Proof-of-Work protocol.
//!
//! Everything here is a pure function of its arguments: block reward per
//! halving epoch, cumulative supply, difficulty retargeting, the initial hash
//! target and the block-arrival intensity between two retarget segments.
//! Time is measured in seconds at this level; [`per_fortnight`] converts a
//! per-second rate to the solver's time unit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 2^32, the ratio between the 256-bit hash space and the difficulty-1 target.
pub const TWO_POW_32: f64 = 4_294_967_296.0;

/// Seconds in one fortnight (the solver's time unit).
pub const FORTNIGHT_SECONDS: f64 = 1_209_600.0;

/// Converts a rate per second into a rate per fortnight.
pub fn per_fortnight(rate_per_second: f64) -> f64 {
    rate_per_second * FORTNIGHT_SECONDS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolParams {
    /// Blocks per difficulty retarget window.
    pub retarget_blocks: u64,
    /// Blocks per halving epoch.
    pub halving_blocks: u64,
    /// Coin-creation reward of the first epoch, in tokens.
    pub base_reward: f64,
    /// Transaction-fee floor paid on top of the coin-creation reward.
    pub fee_floor: f64,
    /// Number of halvings after which only the fee floor remains.
    pub max_halvings: u32,
    /// Target spacing between blocks, in seconds.
    pub target_block_seconds: f64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            retarget_blocks: 2016,
            halving_blocks: 210_000,
            base_reward: 50.0,
            fee_floor: 0.0,
            max_halvings: 32,
            target_block_seconds: 600.0,
        }
    }
}

/// Aggregate hashing work over one retarget segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HashSegment {
    pub index: u64,
    pub total_hashes: f64,
    pub elapsed: f64,
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<()> {
        if self.retarget_blocks == 0 || self.halving_blocks == 0 || self.max_halvings == 0 {
            return Err(Error::Config("protocol block counts must be positive".into()));
        }
        if !(self.base_reward > 0.0) {
            return Err(Error::Config("base_reward must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.fee_floor) {
            return Err(Error::Config("fee_floor must lie in [0, 1]".into()));
        }
        if !(self.target_block_seconds > 0.0) {
            return Err(Error::Config("target_block_seconds must be positive".into()));
        }
        Ok(())
    }

    /// Length of one retarget window when blocks arrive on schedule (1209600 s).
    pub fn retarget_window_seconds(&self) -> f64 {
        self.retarget_blocks as f64 * self.target_block_seconds
    }

    /// Target block intensity, in blocks per second.
    pub fn target_intensity(&self) -> f64 {
        1.0 / self.target_block_seconds
    }

    /// Halving epoch `floor(retarget_blocks * blocks_found / halving_blocks)`,
    /// uncapped.
    pub fn epoch(&self, blocks_found: u64) -> u64 {
        let scaled = self.retarget_blocks as u128 * blocks_found as u128;
        let epoch = scaled / self.halving_blocks as u128;
        u64::try_from(epoch).unwrap_or(u64::MAX)
    }

    fn capped_epoch(&self, blocks_found: u64) -> u32 {
        self.epoch(blocks_found).min(self.max_halvings as u64) as u32
    }

    /// Tokens paid per block after `blocks_found` blocks.
    pub fn block_reward(&self, blocks_found: u64) -> f64 {
        let epoch = self.capped_epoch(blocks_found);
        if epoch >= self.max_halvings {
            return self.fee_floor;
        }
        self.base_reward * 0.5f64.powi(epoch as i32) + self.fee_floor
    }

    /// Smallest block counter at which the last halving has happened.
    pub fn terminal_segments(&self) -> u64 {
        (self.halving_blocks * self.max_halvings as u64).div_ceil(self.retarget_blocks)
    }

    /// Tokens in circulation after `blocks_found` blocks.
    pub fn cumulative_supply(&self, blocks_found: u64) -> f64 {
        self.supply_at_epoch(self.capped_epoch(blocks_found))
    }

    /// Closed-form circulation at halving epoch `epoch`, including the
    /// partially-filled leading retarget segment.
    pub fn supply_at_epoch(&self, epoch: u32) -> f64 {
        let epoch = epoch.min(self.max_halvings);
        let half_pow = 0.5f64.powi(epoch as i32);
        let completed = (self.halving_blocks as f64 * self.base_reward) * (1.0 - half_pow) / 0.5;
        let offset = (self.halving_blocks as u128 * epoch as u128) % self.retarget_blocks as u128;
        let remaining = (self.retarget_blocks as u128 - offset) as f64;
        completed + remaining * self.base_reward * half_pow
    }

    /// Difficulty after a retarget window that took `elapsed` seconds.
    pub fn difficulty_retarget(&self, d_prev: f64, elapsed: f64) -> Result<f64> {
        if !(d_prev > 0.0) {
            return Err(Error::domain(format!("previous difficulty must be positive, got {d_prev}")));
        }
        if !(elapsed > 0.0) {
            return Err(Error::domain(format!("elapsed time must be positive, got {elapsed}")));
        }
        Ok(self.retarget_window_seconds() * d_prev / elapsed)
    }

    /// Difficulty implied by a segment that produced exactly one window of
    /// blocks with `nodes` miners.
    pub fn difficulty_from_hashes(&self, segment: &HashSegment, nodes: f64) -> Result<f64> {
        let per_trial = self.segment_success_root(segment.total_hashes, nodes)?;
        Ok(1.0 / (TWO_POW_32 * per_trial))
    }

    /// Total hashes of the designed initial segment (difficulty 1).
    pub fn initial_hash_target(&self, nodes: f64) -> Result<f64> {
        check_nodes(nodes)?;
        // 1 - (1 - 2^-32)^M, evaluated without cancellation.
        let success = -(nodes * (-1.0 / TWO_POW_32).ln_1p()).exp_m1();
        Ok(self.retarget_blocks as f64 / success)
    }

    /// Block intensity (blocks per second) during a segment, given the total
    /// hashes of the previous and current segments.
    pub fn block_arrival_intensity(&self, h_prev: f64, h_cur: f64, nodes: f64) -> Result<f64> {
        let prev = self.segment_success_root(h_prev, nodes)?;
        let cur = self.segment_success_root(h_cur, nodes)?;
        Ok((prev / cur) / self.target_block_seconds)
    }

    /// `1 - (1 - W/H)^(1/M)` where W is the retarget window in blocks.
    fn segment_success_root(&self, total_hashes: f64, nodes: f64) -> Result<f64> {
        check_nodes(nodes)?;
        let window = self.retarget_blocks as f64;
        if !(total_hashes > window) || !total_hashes.is_finite() {
            return Err(Error::domain(format!("segment hashes must exceed {window}, got {total_hashes}")));
        }
        Ok(-((-window / total_hashes).ln_1p() / nodes).exp_m1())
    }
}

fn check_nodes(nodes: f64) -> Result<()> {
    if !(nodes >= 1.0) || !nodes.is_finite() {
        return Err(Error::domain(format!("node count must be >= 1, got {nodes}")));
    }
    Ok(())
}

/// Tokens created per unit time relative to circulation.
pub fn inflation_rate(reward: f64, intensity: f64, supply: f64) -> Result<f64> {
    if !(supply > 0.0) {
        return Err(Error::domain(format!("supply must be positive, got {supply}")));
    }
    Ok(reward * intensity / supply)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pp() -> ProtocolParams {
        ProtocolParams::default()
    }

    /// Counts halvings by walking block by block.
    fn halvings_by_loop(blocks: u64, p: &ProtocolParams) -> u64 {
        let mut epoch = 0;
        let mut threshold = p.halving_blocks;
        let mut acc = 0u64;
        for _ in 0..blocks {
            acc += p.retarget_blocks;
        }
        while acc >= threshold {
            epoch += 1;
            threshold += p.halving_blocks;
        }
        epoch
    }

    #[test]
    fn terminal_segments_reach_last_epoch() {
        let p = pp();
        let n = p.terminal_segments();
        assert_eq!(p.epoch(n), 32);
        assert_eq!(p.epoch(n - 1), 31);
        assert_eq!(p.block_reward(n), 0.0);
        assert_eq!(p.cumulative_supply(n), p.supply_at_epoch(32));
    }

    #[test]
    fn reward_starts_at_fifty() {
        assert_eq!(pp().block_reward(0), 50.0);
    }

    #[test]
    fn reward_tends_to_fee_floor() {
        let p = ProtocolParams { fee_floor: 0.001, ..pp() };
        assert_eq!(p.block_reward(u64::MAX), 0.001);
        assert_eq!(p.block_reward(1_000_000), 0.001);
    }

    #[test]
    fn reward_after_105_blocks_is_halved() {
        let p = pp();
        assert_eq!(halvings_by_loop(105, &p), 1);
        assert_eq!(p.epoch(105), 1);
        assert_eq!(p.block_reward(105), 25.0);
        for n in [0, 1, 104, 105, 208, 209, 1000, 3333, 3334] {
            assert_eq!(p.epoch(n), halvings_by_loop(n, &p), "n = {n}");
        }
    }

    #[test]
    fn supply_closed_form_values() {
        let p = pp();
        assert_eq!(p.supply_at_epoch(0), 100_800.0);
        // 10_500_000 + (2016 - 336) * 25
        assert_eq!((210_000u64 % 2016), 336);
        assert_eq!(p.supply_at_epoch(1), 10_542_000.0);
        assert_relative_eq!(p.supply_at_epoch(32), 2.1e7, max_relative = 1e-6);
        assert_relative_eq!(p.cumulative_supply(u64::MAX), 2.1e7, max_relative = 1e-6);
    }

    #[test]
    fn supply_monotone_and_bounded() {
        let p = pp();
        let mut prev = 0.0;
        for n in 0..5000u64 {
            let k = p.cumulative_supply(n);
            assert!(k >= prev);
            assert!(k <= 2.1e7 + 2016.0 * 50.0);
            prev = k;
        }
    }

    #[test]
    fn geometric_supply_identity() {
        let mut partial = 0.0;
        for l in 0..200 {
            partial += 210_000.0 * 50.0 / 2f64.powi(l);
        }
        assert_relative_eq!(partial, 2.1e7, max_relative = 1e-15);
    }

    #[test]
    fn retarget_examples() {
        let p = pp();
        assert_eq!(p.difficulty_retarget(1.0, 1_209_600.0).unwrap(), 1.0);
        assert_eq!(p.difficulty_retarget(1.0, 604_800.0).unwrap(), 2.0);
        assert!(p.difficulty_retarget(1.0, 0.0).is_err());
        assert!(p.difficulty_retarget(1.0, -5.0).is_err());
    }

    #[test]
    fn initial_target_single_node() {
        let p = pp();
        assert_relative_eq!(p.initial_hash_target(1.0).unwrap(), 2016.0 * TWO_POW_32, max_relative = 1e-12);
        assert!(p.initial_hash_target(0.0).is_err());
    }

    #[test]
    fn initial_target_limit_and_monotone() {
        let p = pp();
        let big = p.initial_hash_target(1e15).unwrap();
        // (1 - 2^-32)^M underflows at this M, so the bound is attained in f64.
        assert!(big >= 2016.0);
        assert_relative_eq!(big, 2016.0, max_relative = 1e-6);
        assert!(p.initial_hash_target(1e11).unwrap() > 2016.0);
        let h: Vec<f64> = [1.0, 10.0, 100.0].iter().map(|&m| p.initial_hash_target(m).unwrap()).collect();
        assert!(h[0] > h[1] && h[1] > h[2]);
    }

    #[test]
    fn difficulty_of_initial_target_is_one() {
        let p = pp();
        for m in [1.0, 10.0, 1e3, 1e6] {
            let seg = HashSegment { index: 0, total_hashes: p.initial_hash_target(m).unwrap(), elapsed: 1.0 };
            assert_relative_eq!(p.difficulty_from_hashes(&seg, m).unwrap(), 1.0, max_relative = 1e-9);
        }
    }

    #[test]
    fn difficulty_single_node() {
        let p = pp();
        let seg = HashSegment { index: 1, total_hashes: 2.0 * 2016.0, elapsed: 1.0 };
        assert_relative_eq!(p.difficulty_from_hashes(&seg, 1.0).unwrap(), 2.0 / TWO_POW_32, max_relative = 1e-12);
        let bad = HashSegment { total_hashes: 2016.0, ..seg };
        assert!(p.difficulty_from_hashes(&bad, 1.0).is_err());
    }

    #[test]
    fn difficulty_grows_with_hashes() {
        let p = pp();
        for m in [1.0, 50.0, 1e4] {
            let mut last = 0.0;
            for k in 0..20 {
                let h = 5000.0 * 2f64.powi(k);
                let seg = HashSegment { index: 0, total_hashes: h, elapsed: 1.0 };
                let d = p.difficulty_from_hashes(&seg, m).unwrap();
                assert!(d > last);
                last = d;
            }
        }
    }

    #[test]
    fn intensity_examples() {
        let p = pp();
        for (h, m) in [(3000.0, 1.0), (1e9, 1e6), (2.5e20, 8e11)] {
            assert_eq!(p.block_arrival_intensity(h, h, m).unwrap(), 1.0 / 600.0);
        }
        assert_relative_eq!(p.block_arrival_intensity(1e6, 2e6, 1.0).unwrap(), 1.0 / 300.0, max_relative = 1e-12);
        assert!(p.block_arrival_intensity(100.0, 1e6, 1.0).is_err());
    }

    #[test]
    fn inflation_examples() {
        assert_eq!(inflation_rate(50.0, 1.0 / 600.0, 100_800.0).unwrap(), 50.0 * (1.0 / 600.0) / 100_800.0);
        assert_eq!(inflation_rate(0.0, 1.0 / 600.0, 2.1e7).unwrap(), 0.0);
        assert!(inflation_rate(1.0, 1.0, 0.0).is_err());
        let p = pp();
        let rate =
            |l| inflation_rate(p.base_reward * 0.5f64.powi(l as i32), 1.0 / 600.0, p.supply_at_epoch(l)).unwrap();
        assert!(rate(2) < rate(1) && rate(1) < rate(0));
    }

    #[test]
    fn fortnight_conversion() {
        assert_relative_eq!(per_fortnight(1.0 / 600.0), 2016.0, max_relative = 1e-15);
    }
}
