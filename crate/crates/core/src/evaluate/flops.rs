//! Classical operation counts. A complex multiply-add is 8 real FLOPs, the
//! same two-per-real-multiply-add convention as the neural counter. A
//! Hermitian `n × n` eigendecomposition is charged `8·n³`. ZF precoding is
//! common to every scheme and excluded.

use serde::{Deserialize, Serialize};

/// FLOPs per report on each side of the link.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeFlops {
    pub bs: u64,
    pub ue: u64,
}

impl SchemeFlops {
    pub fn plus(self, other: SchemeFlops) -> SchemeFlops {
        SchemeFlops {
            bs: self.bs + other.bs,
            ue: self.ue + other.ue,
        }
    }
}

/// Dominant direction of `rows × n` stacked observations: Gram formation plus
/// decomposition, through the smaller Gram when `rows < n`.
pub fn eigen_flops(rows: usize, n: usize) -> u64 {
    let (rows, n) = (rows as u64, n as u64);
    if rows < n {
        8 * rows * rows * n + 8 * rows.pow(3) + 8 * rows * n
    } else {
        8 * rows * n * n + 8 * n.pow(3)
    }
}

/// FLOPs per report turned into GFLOPS at one report every `period_s`.
pub fn gflops(flops: u64, period_s: f64) -> f64 {
    flops as f64 / period_s / 1e9
}

/// Oversampled beam projections of both polarizations over `subbands`:
/// every grid beam against every subband vector half.
pub(crate) fn beam_search_flops(grid_beams: usize, ports_per_pol: usize, subbands: usize) -> u64 {
    8 * (grid_beams * 2 * subbands * ports_per_pol) as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dual_gram_is_cheaper_for_short_stacks() {
        assert!(eigen_flops(12, 32) < eigen_flops(32, 32));
        assert_eq!(eigen_flops(1, 4), 8 * 4 + 8 + 8 * 4);
        assert_eq!(gflops(2_000_000, 5e-3), 0.4);
    }
}
