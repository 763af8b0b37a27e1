use rand::seq::index;
use rand::Rng;

use super::dataset::Dataset;
use crate::error::{Error, Result};

/// Server-held canary pool, consumed in consecutive windows of `window` samples.
/// The pool is drawn i.i.d., so consecutive windows are a random draw without
/// replacement from what has not been used yet.
#[derive(Debug, Clone, PartialEq)]
pub struct CanarySet {
    pool: Dataset,
    window: usize,
}

/// The round's canary batch plus its pool indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CanaryWindow {
    pub round: usize,
    pub indices: Vec<usize>,
    pub batch: Dataset,
}

impl CanarySet {
    pub fn new(pool: Dataset, window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::invalid("canary window size must be positive"));
        }
        if pool.len() < window {
            return Err(Error::PoolExhausted {
                round: 1,
                needed: window,
                available: pool.len(),
            });
        }
        Ok(CanarySet { pool, window })
    }

    pub fn pool(&self) -> &Dataset {
        &self.pool
    }

    pub fn window_size(&self) -> usize {
        self.window
    }

    /// Window for round `t` (1-based): pool rows `[(t-1)c, tc)`.
    pub fn window(&self, t: usize) -> Result<CanaryWindow> {
        if t == 0 {
            return Err(Error::invalid("rounds are numbered from 1"));
        }
        let end = self.window * t;
        if end > self.pool.len() {
            return Err(Error::PoolExhausted {
                round: t,
                needed: end,
                available: self.pool.len(),
            });
        }
        let indices: Vec<usize> = (end - self.window..end).collect();
        let batch = self.pool.subset(&indices);
        Ok(CanaryWindow {
            round: t,
            indices,
            batch,
        })
    }

    /// `size` pool indices drawn uniformly without replacement from the rows
    /// after round `t`'s window. Those rows were never used as canaries, so no
    /// client has trained on them.
    pub fn complement<R: Rng + ?Sized>(&self, t: usize, size: usize, rng: &mut R) -> Result<Vec<usize>> {
        if t == 0 {
            return Err(Error::invalid("rounds are numbered from 1"));
        }
        let start = self.window * t;
        let unused = self.pool.len().saturating_sub(start);
        if size > unused {
            return Err(Error::PoolExhausted {
                round: t,
                needed: start + size,
                available: self.pool.len(),
            });
        }
        Ok(index::sample(rng, unused, size)
            .into_iter()
            .map(|i| i + start)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_synthetic;
    use crate::rng;

    #[test]
    fn windows_tile_the_pool() {
        let cs = CanarySet::new(make_synthetic(2, 6, 2, 0).unwrap(), 2).unwrap();
        let all: Vec<usize> = (1..=3).flat_map(|t| cs.window(t).unwrap().indices).collect();
        assert_eq!(all, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(cs.window(2).unwrap(), cs.window(2).unwrap());
        assert!(matches!(cs.window(4), Err(Error::PoolExhausted { round: 4, .. })));
    }

    #[test]
    fn complement_avoids_window() {
        let cs = CanarySet::new(make_synthetic(2, 40, 2, 0).unwrap(), 5).unwrap();
        let mut r = rng::stream(3, &[0]);
        for t in 1..=7 {
            let window = cs.window(t).unwrap().indices;
            let comp = cs.complement(t, 5, &mut r).unwrap();
            assert_eq!(comp.len(), 5);
            assert!(comp.iter().all(|i| *i >= 5 * t && *i < 40 && !window.contains(i)));
        }
        assert!(cs.complement(1, 36, &mut r).is_err());
        assert!(cs.complement(7, 6, &mut r).is_err());
        assert!(cs.complement(8, 1, &mut r).is_err());
    }
}
