//! Factor-array inventories for TT and TTM layers.

use super::FactorArray;

fn array(name: String, bits: u64, shape: &[usize], co_access: Option<String>) -> FactorArray {
    let elems: usize = shape.iter().product();
    let rank = (*shape.first().expect("core shape")).max(*shape.last().expect("core shape")) as u64;
    FactorArray {
        name,
        bits,
        rank,
        depth: (elems as u64).div_ceil(rank),
        co_access,
    }
}

/// One array per TT core. Cores read in the same BTT stage share a
/// co-access key: stage 0 reads both ends of each chain, stage s the
/// (s+2)-th core from either end.
pub fn tt_arrays(layer: &str, out_modes: &[usize], in_modes: &[usize], ranks: &[usize], bits: u64) -> Vec<FactorArray> {
    let d = out_modes.len();
    let modes: Vec<usize> = out_modes.iter().chain(in_modes).copied().collect();
    (0..2 * d)
        .map(|c| {
            let from_end = if c < d { c } else { 2 * d - 1 - c };
            let stage = from_end.saturating_sub(1);
            array(
                format!("{layer}.core{c}"),
                bits,
                &[ranks[c], modes[c], ranks[c + 1]],
                Some(format!("{layer}/stage{stage}")),
            )
        })
        .collect()
}

/// One array per TTM core; lookups read the cores one after another.
pub fn ttm_arrays(layer: &str, row_modes: &[usize], col_modes: &[usize], ranks: &[usize], bits: u64) -> Vec<FactorArray> {
    (0..row_modes.len())
        .map(|k| {
            array(
                format!("{layer}.core{k}"),
                bits,
                &[ranks[k], row_modes[k], col_modes[k], ranks[k + 1]],
                None,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_two_attention_inventory() {
        let arrs = tt_arrays("q", &[12, 8, 8], &[8, 8, 12], &[1, 12, 12, 12, 12, 12, 1], 32);
        assert_eq!(arrs.len(), 6);
        assert_eq!(arrs.iter().map(|a| a.rank * a.depth).sum::<u64>(), 4896);
        assert_eq!(arrs[2].depth, 96);
        assert_eq!(arrs[0].co_access, arrs[1].co_access);
        assert_eq!(arrs[0].co_access, arrs[5].co_access);
        assert_eq!(arrs[2].co_access, arrs[3].co_access);
        assert_ne!(arrs[1].co_access, arrs[2].co_access);
    }
}
