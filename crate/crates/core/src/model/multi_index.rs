use std::fmt;

use serde::{Deserialize, Serialize};

/// Vector of per-coordinate derivative orders.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn new(kappa: Vec<u32>) -> Self {
        Self(kappa)
    }

    /// The scalar index `(k)`.
    pub fn scalar(k: u32) -> Self {
        Self(vec![k])
    }

    pub fn zero(d: usize) -> Self {
        Self(vec![0; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Total order `|κ|`.
    pub fn order(&self) -> usize {
        self.0.iter().map(|&k| k as usize).sum()
    }

    /// `κ! = Π κ_j!`.
    pub fn factorial(&self) -> f64 {
        self.0.iter().map(|&k| factorial(k as usize)).product()
    }

    /// Componentwise `self ≤ other`.
    pub fn le(&self, other: &Self) -> bool {
        self.0.len() == other.0.len() && self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    /// `self − other`, assuming `other ≤ self`.
    pub fn sub(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    /// `self + other`.
    pub fn add(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// Increments coordinate `j` by one.
    pub fn bump(&self, j: usize) -> Self {
        let mut k = self.0.clone();
        k[j] += 1;
        Self(k)
    }

    /// All `κ̃ ≤ κ` with `|κ̃| = l`, in graded lexicographic order.
    pub fn sub_indices(&self, l: usize) -> Vec<MultiIndex> {
        multi_index_set(self.dim(), l)
            .into_iter()
            .filter(|k| k.le(self))
            .collect()
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, k) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{k}")?;
        }
        write!(f, ")")
    }
}

pub fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// All multi-indices of dimension `d` with total order `k`, in graded
/// lexicographic order (first coordinate descending).
pub fn multi_index_set(d: usize, k: usize) -> Vec<MultiIndex> {
    assert!(d >= 1, "multi-index dimension must be at least 1");
    let mut out = Vec::new();
    let mut current = vec![0u32; d];
    fill(&mut out, &mut current, 0, k);
    out
}

fn fill(out: &mut Vec<MultiIndex>, current: &mut [u32], pos: usize, remaining: usize) {
    let d = current.len();
    if pos == d - 1 {
        current[pos] = remaining as u32;
        out.push(MultiIndex(current.to_vec()));
        return;
    }
    for v in (0..=remaining).rev() {
        current[pos] = v as u32;
        fill(out, current, pos + 1, remaining - v);
    }
}

/// Concatenation of `multi_index_set(d, k)` for `k = lo..=hi`.
pub fn multi_index_range(d: usize, lo: usize, hi: usize) -> Vec<MultiIndex> {
    (lo..=hi).flat_map(|k| multi_index_set(d, k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mi(v: &[u32]) -> MultiIndex {
        MultiIndex(v.to_vec())
    }

    #[test]
    fn bivariate_second_order_set() {
        assert_eq!(multi_index_set(2, 2), vec![mi(&[2, 0]), mi(&[1, 1]), mi(&[0, 2])]);
    }

    #[test]
    fn scalar_set_is_singleton() {
        assert_eq!(multi_index_set(1, 3), vec![mi(&[3])]);
    }

    #[test]
    fn bivariate_fourth_order_set() {
        assert_eq!(
            multi_index_set(2, 4),
            vec![mi(&[4, 0]), mi(&[3, 1]), mi(&[2, 2]), mi(&[1, 3]), mi(&[0, 4])]
        );
    }

    #[test]
    fn cardinality_matches_stars_and_bars() {
        for d in 1..=4 {
            for k in 0..=6 {
                let set = multi_index_set(d, k);
                assert_eq!(set.len() as f64, binomial(k + d - 1, d - 1));
                assert!(set.iter().all(|s| s.order() == k));
            }
        }
    }

    #[test]
    fn factorial_and_sub_indices() {
        let k = mi(&[2, 2]);
        assert_eq!(k.factorial(), 4.0);
        assert_eq!(k.sub_indices(2), vec![mi(&[2, 0]), mi(&[1, 1]), mi(&[0, 2])]);
        assert_eq!(mi(&[3, 1]).sub_indices(2), vec![mi(&[2, 0]), mi(&[1, 1])]);
    }
}
