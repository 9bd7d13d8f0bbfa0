//! Exact 0/1 knapsack where each item's weight is also its value, i.e.
//! subset sum: pick items whose token counts fill the capacity as fully as
//! possible without exceeding it.
//!
//! Reachable sums are kept as bitsets, one row per item prefix, so a round
//! costs `O(n * capacity / 64)` words.

struct BitRow {
    words: Vec<u64>,
}

impl BitRow {
    fn new(bits: usize) -> Self {
        Self {
            words: vec![0; bits.div_ceil(64)],
        }
    }

    fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    fn set(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    /// `self | (self << shift)`, truncated to `bits`.
    fn or_shifted(&self, shift: usize, bits: usize) -> Self {
        let mut out = Self {
            words: self.words.clone(),
        };
        let word_shift = shift / 64;
        let bit_shift = shift % 64;
        let n = self.words.len();
        for dst in (word_shift..n).rev() {
            let src = dst - word_shift;
            let mut v = self.words[src] << bit_shift;
            if bit_shift > 0 && src > 0 {
                v |= self.words[src - 1] >> (64 - bit_shift);
            }
            out.words[dst] |= v;
        }
        let tail = bits % 64;
        if tail > 0 {
            out.words[n - 1] &= (1u64 << tail) - 1;
        }
        out
    }
}

/// Returns indices (ascending) of a subset with the largest total weight not
/// exceeding `capacity`.
///
/// Among equally good subsets the backtrace keeps an item out whenever the
/// same total is reachable from the items before it, so earlier items are
/// preferred.
pub fn subset_sum_select(weights: &[usize], capacity: usize) -> Vec<usize> {
    let total: usize = weights.iter().sum();
    if total <= capacity {
        return (0..weights.len()).filter(|&i| weights[i] > 0).collect();
    }
    let bits = capacity + 1;
    let mut rows = Vec::with_capacity(weights.len() + 1);
    let mut first = BitRow::new(bits);
    first.set(0);
    rows.push(first);
    for &w in weights {
        let prev = rows.last().expect("rows starts non-empty");
        let next = if w == 0 || w > capacity {
            BitRow {
                words: prev.words.clone(),
            }
        } else {
            prev.or_shifted(w, bits)
        };
        rows.push(next);
    }
    let last = rows.last().expect("rows starts non-empty");
    let mut target = (0..=capacity).rev().find(|&t| last.get(t)).unwrap_or(0);

    let mut picked = Vec::new();
    for i in (0..weights.len()).rev() {
        if target == 0 {
            break;
        }
        if rows[i].get(target) {
            continue;
        }
        picked.push(i);
        target -= weights[i];
    }
    picked.reverse();
    picked
}

/// Indices of the items chosen for one sequence of `capacity` tokens.
pub fn knapsack_select(items: &[super::PackItem], capacity: usize) -> Vec<usize> {
    let weights: Vec<usize> = items.iter().map(|i| i.token_count).collect();
    subset_sum_select(&weights, capacity)
}
