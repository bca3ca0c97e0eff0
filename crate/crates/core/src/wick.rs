//! Exact Wishart trace moments by Wick pairing enumeration.
//!
//! For `S = W Wᵀ` with `W` an `m × n` matrix of IID `N(0, σ²)` entries,
//!
//! ```text
//! tr(S^k) = Σ_{i, j} Π_{t=0}^{k-1} W[i_t, j_t] · W[i_{t+1}, j_t],   i_k := i_0
//! ```
//!
//! is a sum of products of `2k` Gaussian factors. Factor `W[i_t, j_t]` sits at
//! position `2t` and `W[i_{t+1}, j_t]` at position `2t + 1`. Wick's theorem
//! turns the expectation into a sum over perfect matchings of the positions;
//! every matched pair forces its row indices and column indices equal, so a
//! matching contributes `σ^{2k} n^a m^b` where `a` counts the connected
//! components among the column variables `j_t` and `b` those among the row
//! variables `i_t`.
//!
//! [`moment_table`] aggregates these monomials into a [`MomentTable`]. The
//! number of matchings is `(2k − 1)!!`, so enumeration is capped at
//! [`DEFAULT_ORDER_CAP`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest order accepted by the enumerators.
pub const DEFAULT_ORDER_CAP: usize = 12;

/// `(2k − 1)!!`, the number of perfect matchings of `2k` positions.
pub fn double_factorial_odd(k: usize) -> u64 {
    (1..=k as u64).map(|t| 2 * t - 1).product()
}

fn check_order(k: usize, cap: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("moment order must be at least 1".into()));
    }
    if k > cap {
        return Err(Error::OrderAboveCap { k, cap });
    }
    Ok(())
}

/// A perfect matching of the positions `0..2k`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Matching {
    pairs: Vec<(usize, usize)>,
}

impl Matching {
    /// Builds a matching, checking that `pairs` partitions `0..2k`.
    pub fn new(k: usize, pairs: Vec<(usize, usize)>) -> Result<Self> {
        if pairs.len() != k {
            return Err(Error::InvalidArgument(format!(
                "a matching of order {k} needs {k} pairs, got {}",
                pairs.len()
            )));
        }
        let mut seen = vec![false; 2 * k];
        for &(p, q) in &pairs {
            for x in [p, q] {
                if x >= 2 * k || seen[x] {
                    return Err(Error::InvalidArgument(format!(
                        "position {x} is out of range or matched twice"
                    )));
                }
                seen[x] = true;
            }
        }
        Ok(Self { pairs })
    }

    /// The matching pairing `2t` with `2t + 1` for every `t`.
    pub fn nested(k: usize) -> Self {
        Self {
            pairs: (0..k).map(|t| (2 * t, 2 * t + 1)).collect(),
        }
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn order(&self) -> usize {
        self.pairs.len()
    }
}

/// Iterator over all perfect matchings of `0..2k` in canonical order.
///
/// The smallest unmatched position is always paired first, trying partners in
/// increasing order, so the sequence is deterministic.
#[derive(Debug, Clone)]
pub struct Matchings {
    size: usize,
    stack: Vec<(usize, usize)>,
    used: u64,
    started: bool,
    done: bool,
}

impl Matchings {
    fn fill(&mut self) {
        while self.stack.len() * 2 < self.size {
            let first = (!self.used).trailing_zeros() as usize;
            self.used |= 1 << first;
            let partner = (!self.used).trailing_zeros() as usize;
            self.used |= 1 << partner;
            self.stack.push((first, partner));
        }
    }

    fn advance(&mut self) -> bool {
        while let Some((first, partner)) = self.stack.pop() {
            self.used &= !((1 << first) | (1 << partner));
            let next = (partner + 1..self.size).find(|&q| self.used & (1 << q) == 0);
            if let Some(q) = next {
                self.used |= (1 << first) | (1 << q);
                self.stack.push((first, q));
                self.fill();
                return true;
            }
        }
        false
    }
}

impl Iterator for Matchings {
    type Item = Matching;

    fn next(&mut self) -> Option<Matching> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            self.fill();
        } else if !self.advance() {
            self.done = true;
            return None;
        }
        Some(Matching {
            pairs: self.stack.clone(),
        })
    }
}

/// Streams every perfect matching of `2k` positions, using the default cap.
pub fn enumerate_matchings(k: usize) -> Result<Matchings> {
    enumerate_matchings_capped(k, DEFAULT_ORDER_CAP)
}

pub fn enumerate_matchings_capped(k: usize, cap: usize) -> Result<Matchings> {
    check_order(k, cap)?;
    Ok(Matchings {
        size: 2 * k,
        stack: Vec::with_capacity(k),
        used: 0,
        started: false,
        done: false,
    })
}

#[inline]
fn row_var(position: usize, k: usize) -> usize {
    let t = position / 2;
    if position.is_multiple_of(2) {
        t
    } else {
        (t + 1) % k
    }
}

#[inline]
fn col_var(position: usize) -> usize {
    position / 2
}

/// Plain union-find used by [`matching_weight`].
struct DisjointSets {
    parent: Vec<usize>,
    components: usize,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            components: n,
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra] = rb;
            self.components -= 1;
        }
    }
}

/// Exponents `(a, b)` of the monomial `n^a m^b` contributed by a matching.
///
/// `a` counts connected components of the column variables, `b` those of the
/// row variables (with `i_k` identified with `i_0`).
pub fn matching_weight(matching: &Matching) -> (usize, usize) {
    let k = matching.order();
    let mut rows = DisjointSets::new(k);
    let mut cols = DisjointSets::new(k);
    for &(p, q) in matching.pairs() {
        rows.union(row_var(p, k), row_var(q, k));
        cols.union(col_var(p), col_var(q));
    }
    (cols.components, rows.components)
}

/// Integer coefficients `C_{a,b}` of `E[tr(S^k)] = σ^{2k} Σ C_{a,b} n^a m^b`.
///
/// Stored densely as a `k × k` matrix: row `r` holds the `n^{k−r}` terms and
/// column `c` the `m^{c+1}` terms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MomentTable {
    k: usize,
    coeffs: Vec<Vec<u64>>,
}

impl MomentTable {
    /// Wraps a dense `k × k` coefficient matrix.
    pub fn from_rows(k: usize, coeffs: Vec<Vec<u64>>) -> Result<Self> {
        if k == 0 || coeffs.len() != k || coeffs.iter().any(|row| row.len() != k) {
            return Err(Error::InvalidArgument(format!(
                "a moment table of order {k} must be a non-empty {k}x{k} matrix"
            )));
        }
        Ok(Self { k, coeffs })
    }

    fn zeros(k: usize) -> Self {
        Self {
            k,
            coeffs: vec![vec![0; k]; k],
        }
    }

    pub fn order(&self) -> usize {
        self.k
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.coeffs
    }

    /// Entry at matrix position `(row, col)`.
    pub fn entry(&self, row: usize, col: usize) -> u64 {
        self.coeffs[row][col]
    }

    /// Coefficient of `n^a m^b`; zero outside the stored range.
    pub fn coeff(&self, a: usize, b: usize) -> u64 {
        if a == 0 || b == 0 || a > self.k || b > self.k {
            return 0;
        }
        self.coeffs[self.k - a][b - 1]
    }

    /// Iterates `(a, b, C_{a,b})` over non-zero coefficients.
    pub fn monomials(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        let k = self.k;
        self.coeffs.iter().enumerate().flat_map(move |(r, row)| {
            row.iter()
                .enumerate()
                .filter(|(_, &c)| c != 0)
                .map(move |(col, &c)| (k - r, col + 1, c))
        })
    }

    pub fn total(&self) -> u64 {
        self.coeffs.iter().flatten().sum()
    }

    pub fn is_persymmetric(&self) -> bool {
        let k = self.k;
        (0..k).all(|r| (0..k).all(|c| self.coeffs[r][c] == self.coeffs[k - 1 - c][k - 1 - r]))
    }

    /// Coefficients with `a + b = k + 1`, ordered by increasing `b`.
    pub fn leading_diagonal(&self) -> Vec<u64> {
        (1..=self.k).map(|b| self.coeff(self.k + 1 - b, b)).collect()
    }

    fn add_assign(&mut self, other: &Self) -> Result<()> {
        for (row, other_row) in self.coeffs.iter_mut().zip(&other.coeffs) {
            for (c, &o) in row.iter_mut().zip(other_row) {
                *c = c.checked_add(o).ok_or(Error::Overflow(self.k))?;
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&MomentTableJson::from(self)).expect("table serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let parsed: MomentTableJson = serde_json::from_str(text).map_err(|e| Error::Fixture(e.to_string()))?;
        Self::from_rows(parsed.k, parsed.coeffs)
    }

    /// CSV with an `m^1..m^k` header and one line per table row.
    pub fn to_csv(&self) -> String {
        let mut out = (1..=self.k).map(|b| format!("m^{b}")).collect::<Vec<_>>().join(",");
        out.push('\n');
        for row in &self.coeffs {
            let line: Vec<String> = row.iter().map(u64::to_string).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct MomentTableJson {
    k: usize,
    coeffs: Vec<Vec<u64>>,
    row_basis: String,
    col_basis: String,
}

impl From<&MomentTable> for MomentTableJson {
    fn from(table: &MomentTable) -> Self {
        Self {
            k: table.k,
            coeffs: table.coeffs.clone(),
            row_basis: format!("n^{}..n^1", table.k),
            col_basis: format!("m^1..m^{}", table.k),
        }
    }
}

impl Serialize for MomentTable {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        MomentTableJson::from(self).serialize(serializer)
    }
}

/// Union-find with undo, for the recursive enumerator. No path compression so
/// that unions can be rolled back in LIFO order.
struct RollbackSets {
    parent: [u8; DEFAULT_ORDER_CAP],
    rank: [u8; DEFAULT_ORDER_CAP],
    components: usize,
}

/// Undo record: `(attached root, rank bump on the new root)`.
type Undo = Option<(u8, bool)>;

impl RollbackSets {
    fn new(k: usize) -> Self {
        let mut parent = [0u8; DEFAULT_ORDER_CAP];
        for (i, p) in parent.iter_mut().enumerate() {
            *p = i as u8;
        }
        Self {
            parent,
            rank: [0; DEFAULT_ORDER_CAP],
            components: k,
        }
    }

    #[inline]
    fn find(&self, mut x: u8) -> u8 {
        while self.parent[x as usize] != x {
            x = self.parent[x as usize];
        }
        x
    }

    #[inline]
    fn union(&mut self, a: usize, b: usize) -> Undo {
        let (mut ra, mut rb) = (self.find(a as u8), self.find(b as u8));
        if ra == rb {
            return None;
        }
        if self.rank[ra as usize] > self.rank[rb as usize] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[ra as usize] = rb;
        let bump = self.rank[ra as usize] == self.rank[rb as usize];
        if bump {
            self.rank[rb as usize] += 1;
        }
        self.components -= 1;
        Some((ra, bump))
    }

    #[inline]
    fn undo(&mut self, record: Undo) {
        if let Some((child, bump)) = record {
            let root = self.parent[child as usize];
            if bump {
                self.rank[root as usize] -= 1;
            }
            self.parent[child as usize] = child;
            self.components += 1;
        }
    }
}

struct Enumerator {
    k: usize,
    rows: RollbackSets,
    cols: RollbackSets,
    counts: Vec<u64>,
}

impl Enumerator {
    fn new(k: usize) -> Self {
        Self {
            k,
            rows: RollbackSets::new(k),
            cols: RollbackSets::new(k),
            counts: vec![0; k * k],
        }
    }

    fn pair(&mut self, p: usize, q: usize) -> (Undo, Undo) {
        let k = self.k;
        (
            self.rows.union(row_var(p, k), row_var(q, k)),
            self.cols.union(col_var(p), col_var(q)),
        )
    }

    fn unpair(&mut self, undo: (Undo, Undo)) {
        self.cols.undo(undo.1);
        self.rows.undo(undo.0);
    }

    fn recurse(&mut self, used: u32) {
        let full = (1u32 << (2 * self.k)) - 1;
        if used == full {
            let (a, b) = (self.cols.components, self.rows.components);
            self.counts[(self.k - a) * self.k + (b - 1)] += 1;
            return;
        }
        let first = (!used).trailing_zeros() as usize;
        let mut free = full & !used & !(1 << first);
        while free != 0 {
            let q = free.trailing_zeros() as usize;
            free &= free - 1;
            let undo = self.pair(first, q);
            self.recurse(used | (1 << first) | (1 << q));
            self.unpair(undo);
        }
    }

    /// Enumerates all matchings whose first pair is `(0, partner)`.
    fn branch(k: usize, partner: usize) -> MomentTable {
        let mut e = Self::new(k);
        let undo = e.pair(0, partner);
        e.recurse(1 | (1 << partner));
        e.unpair(undo);
        let coeffs = e.counts.chunks(k).map(<[u64]>::to_vec).collect();
        MomentTable { k, coeffs }
    }
}

/// Exact moment table for order `k`, aggregated in parallel over the
/// `2k − 1` choices of partner for position 0.
pub fn moment_table(k: usize) -> Result<MomentTable> {
    check_order(k, DEFAULT_ORDER_CAP)?;
    let branches: Vec<MomentTable> = (1..2 * k)
        .into_par_iter()
        .map(|partner| Enumerator::branch(k, partner))
        .collect();
    merge(k, &branches)
}

/// Same as [`moment_table`] on the calling thread only.
pub fn moment_table_serial(k: usize) -> Result<MomentTable> {
    check_order(k, DEFAULT_ORDER_CAP)?;
    let branches: Vec<MomentTable> = (1..2 * k).map(|p| Enumerator::branch(k, p)).collect();
    merge(k, &branches)
}

fn merge(k: usize, branches: &[MomentTable]) -> Result<MomentTable> {
    let mut table = MomentTable::zeros(k);
    for branch in branches {
        table.add_assign(branch)?;
    }
    Ok(table)
}

/// Fills the omitted half of a table printed only on and above its
/// anti-diagonal, using `entry(r, c) = entry(k−1−c, k−1−r)`.
///
/// Row `r` of `partial` may be shorter than `k`; missing trailing cells are
/// taken from their mirror. A cell present on both sides must agree.
pub fn complete_persymmetric(partial: &[Vec<u64>], k: usize) -> Result<MomentTable> {
    if k == 0 || partial.len() != k {
        return Err(Error::InvalidArgument(format!(
            "expected {k} rows, got {}",
            partial.len()
        )));
    }
    if let Some(r) = partial.iter().position(|row| row.len() > k) {
        return Err(Error::InvalidArgument(format!("row {r} has more than {k} entries")));
    }
    let given = |r: usize, c: usize| partial[r].get(c).copied();
    let mut coeffs = vec![vec![0; k]; k];
    for (r, row) in coeffs.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            let (mr, mc) = (k - 1 - c, k - 1 - r);
            *cell = match (given(r, c), given(mr, mc)) {
                (Some(x), Some(y)) if x != y => {
                    return Err(Error::Persymmetry {
                        row: r,
                        col: c,
                        reason: format!("{x} disagrees with mirrored entry {y}"),
                    })
                }
                (Some(x), _) | (None, Some(x)) => x,
                (None, None) => {
                    return Err(Error::Persymmetry {
                        row: r,
                        col: c,
                        reason: "neither the entry nor its mirror is given".into(),
                    })
                }
            };
        }
    }
    MomentTable::from_rows(k, coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn order_one_has_single_matching() {
        let all: Vec<_> = enumerate_matchings(1).unwrap().collect();
        assert_eq!(all, vec![Matching::new(1, vec![(0, 1)]).unwrap()]);
        assert_eq!(matching_weight(&all[0]), (1, 1));
    }

    #[test]
    fn order_two_yields_three_monomials() {
        let all: Vec<_> = enumerate_matchings(2).unwrap().collect();
        assert_eq!(all.len(), 3);
        let mut weights: Vec<_> = all.iter().map(matching_weight).collect();
        weights.sort();
        // n m, n m², n² m
        assert_eq!(weights, vec![(1, 1), (1, 2), (2, 1)]);
    }

    #[test]
    fn enumeration_is_canonical_and_unique() {
        for k in 1..=5 {
            let all: Vec<_> = enumerate_matchings(k).unwrap().collect();
            assert_eq!(all.len() as u64, double_factorial_odd(k));
            let unique: HashSet<_> = all.iter().cloned().collect();
            assert_eq!(unique.len(), all.len());
            assert_eq!(all[0], Matching::nested(k));
            for m in &all {
                // each pair leads with the smallest position still unmatched
                for (i, &(p, q)) in m.pairs().iter().enumerate() {
                    assert!(p < q);
                    let earlier: Vec<usize> = m.pairs()[..i].iter().flat_map(|&(x, y)| [x, y]).collect();
                    let smallest = (0..2 * k).find(|x| !earlier.contains(x)).unwrap();
                    assert_eq!(p, smallest);
                }
            }
        }
    }

    #[test]
    fn nested_matching_gives_leading_monomial() {
        for k in 1..=9 {
            assert_eq!(matching_weight(&Matching::nested(k)), (k, 1));
        }
    }

    #[test]
    fn order_bounds_are_enforced() {
        assert!(matches!(enumerate_matchings(0), Err(Error::InvalidArgument(_))));
        assert!(matches!(
            enumerate_matchings(13),
            Err(Error::OrderAboveCap { k: 13, cap: 12 })
        ));
        assert!(moment_table(0).is_err());
        assert!(matches!(moment_table(13), Err(Error::OrderAboveCap { .. })));
    }

    #[test]
    fn invalid_matching_rejected() {
        assert!(Matching::new(2, vec![(0, 1), (1, 2)]).is_err());
        assert!(Matching::new(2, vec![(0, 1)]).is_err());
        assert!(Matching::new(1, vec![(0, 2)]).is_err());
    }

    #[test]
    fn small_tables() {
        assert_eq!(moment_table(1).unwrap().rows(), &[vec![1]]);
        assert_eq!(moment_table(2).unwrap().rows(), &[vec![1, 0], vec![1, 1]]);
        assert_eq!(
            moment_table(3).unwrap().rows(),
            &[vec![1, 0, 0], vec![3, 3, 0], vec![4, 3, 1]]
        );
    }

    #[test]
    fn fast_enumerator_matches_streamed_weights() {
        for k in 1..=6 {
            let mut naive = MomentTable::zeros(k);
            for m in enumerate_matchings(k).unwrap() {
                let (a, b) = matching_weight(&m);
                naive.coeffs[k - a][b - 1] += 1;
            }
            assert_eq!(moment_table(k).unwrap(), naive, "order {k}");
        }
    }

    #[test]
    fn serial_and_parallel_agree() {
        for k in 1..=7 {
            assert_eq!(moment_table(k).unwrap(), moment_table_serial(k).unwrap());
        }
    }

    #[test]
    fn completion_passes_full_tables_through() {
        let t = moment_table(3).unwrap();
        assert_eq!(complete_persymmetric(t.rows(), 3).unwrap(), t);
    }

    #[test]
    fn completion_reflects_missing_half() {
        let partial = vec![vec![1, 0, 0], vec![3, 3], vec![4]];
        let t = complete_persymmetric(&partial, 3).unwrap();
        assert_eq!(t.rows(), &[vec![1, 0, 0], vec![3, 3, 0], vec![4, 3, 1]]);
    }

    #[test]
    fn completion_detects_inconsistency() {
        let bad = vec![vec![1, 0, 0], vec![3, 3, 0], vec![4, 2, 1]];
        assert!(matches!(complete_persymmetric(&bad, 3), Err(Error::Persymmetry { .. })));
        let holes = vec![vec![1, 0], vec![3], vec![]];
        assert!(complete_persymmetric(&holes, 3).is_err());
    }

    #[test]
    fn json_and_csv_layout() {
        let t = moment_table(2).unwrap();
        assert_eq!(
            t.to_json(),
            r#"{"k":2,"coeffs":[[1,0],[1,1]],"row_basis":"n^2..n^1","col_basis":"m^1..m^2"}"#
        );
        assert_eq!(MomentTable::from_json(&t.to_json()).unwrap(), t);
        assert_eq!(t.to_csv(), "m^1,m^2\n1,0\n1,1\n");
    }

    #[test]
    fn coefficient_accessors() {
        let t = moment_table(3).unwrap();
        assert_eq!(t.coeff(3, 1), 1);
        assert_eq!(t.coeff(1, 3), 1);
        assert_eq!(t.coeff(2, 1), 3);
        assert_eq!(t.coeff(0, 1), 0);
        assert_eq!(t.coeff(4, 1), 0);
        assert_eq!(t.leading_diagonal(), vec![1, 3, 1]);
        assert_eq!(t.monomials().map(|(_, _, c)| c).sum::<u64>(), 15);
    }
}
