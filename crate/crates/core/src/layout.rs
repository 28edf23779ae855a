//! Block/transit geometry shared by the stacks, the carpet procedure and the bootstrap.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SandpileError};

/// Blocks `[origin + iK, origin + iK + a]` for `i` in `0..n`, working domain
/// `D = (origin - K + a, origin + nK)` with both endpoints absorbing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    pub a: i64,
    pub k: i64,
    pub n: usize,
    pub origin: i64,
    /// Set whenever `k != a^4`; reports echo it.
    pub k_overridden: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SiteKind {
    /// Site of a block with the given (periodic) block index.
    Block(i64),
    /// Transit site between periodic blocks `left` and `left + 1`.
    Transit { left: i64 },
}

impl BlockLayout {
    /// Layout with the default period `K = a^4`.
    pub fn new(a: i64, n: usize) -> Result<Self> {
        let k = a.checked_pow(4).ok_or_else(|| SandpileError::Config(format!("a = {a} overflows a^4")))?;
        Self::with_period(a, k, n)
    }

    pub fn with_period(a: i64, k: i64, n: usize) -> Result<Self> {
        if a <= 0 {
            return Err(SandpileError::Config(format!("block width a must be positive, got {a}")));
        }
        if a + 1 >= k {
            return Err(SandpileError::Config(format!(
                "block width a+1 = {} must be smaller than the period K = {k}",
                a + 1
            )));
        }
        if n == 0 {
            return Err(SandpileError::Config("number of blocks must be at least 1".into()));
        }
        let default_k = a.checked_pow(4);
        Ok(Self { a, k, n, origin: 0, k_overridden: default_k != Some(k) })
    }

    pub fn with_origin(mut self, origin: i64) -> Self {
        self.origin = origin;
        self
    }

    #[inline]
    pub fn block_start(&self, i: usize) -> i64 {
        self.origin + i as i64 * self.k
    }

    #[inline]
    pub fn block_end(&self, i: usize) -> i64 {
        self.block_start(i) + self.a
    }

    /// Absorbing endpoints of the domain.
    pub fn left_end(&self) -> i64 {
        self.origin - self.k + self.a
    }

    pub fn right_end(&self) -> i64 {
        self.origin + self.n as i64 * self.k
    }

    /// Number of interior sites of the domain.
    pub fn domain_len(&self) -> usize {
        (self.right_end() - self.left_end() - 1) as usize
    }

    #[inline]
    pub fn site_kind(&self, x: i64) -> SiteKind {
        let rel = x - self.origin;
        let q = rel.div_euclid(self.k);
        let r = rel.rem_euclid(self.k);
        if r <= self.a {
            SiteKind::Block(q)
        } else {
            SiteKind::Transit { left: q }
        }
    }

    /// Block index within `0..n` containing `x`, if any.
    pub fn block_of(&self, x: i64) -> Option<usize> {
        match self.site_kind(x) {
            SiteKind::Block(q) if q >= 0 && (q as usize) < self.n => Some(q as usize),
            _ => None,
        }
    }

    pub fn in_domain(&self, x: i64) -> bool {
        x > self.left_end() && x < self.right_end()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_period_is_fourth_power() {
        let l = BlockLayout::new(4, 3).unwrap();
        assert_eq!(l.k, 256);
        assert!(!l.k_overridden);
        assert!(BlockLayout::with_period(4, 16, 3).unwrap().k_overridden);
    }

    #[test]
    fn rejects_wide_blocks() {
        assert!(BlockLayout::with_period(4, 5, 1).is_err());
        assert!(BlockLayout::with_period(0, 5, 1).is_err());
        assert!(BlockLayout::with_period(2, 16, 0).is_err());
    }

    #[test]
    fn classifies_sites() {
        let l = BlockLayout::with_period(4, 16, 2).unwrap();
        assert_eq!(l.site_kind(2), SiteKind::Block(0));
        assert_eq!(l.site_kind(10), SiteKind::Transit { left: 0 });
        assert_eq!(l.site_kind(16), SiteKind::Block(1));
        assert_eq!(l.site_kind(-1), SiteKind::Transit { left: -1 });
        assert_eq!(l.left_end(), -12);
        assert_eq!(l.right_end(), 32);
        assert_eq!(l.domain_len(), 43);
        assert_eq!(l.block_of(20), Some(1));
        assert_eq!(l.block_of(-12), None);
    }
}
