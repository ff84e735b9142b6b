//! Permutation groups acting on token coordinates, and the orbit target
//! matrices they generate.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::Matrix;

/// Maximum degree for which `Symmetric(m)` is enumerated.
pub const MAX_SYMMETRIC_DEGREE: usize = 10;
/// Maximum number of group elements ever materialized.
pub const MAX_GROUP_ORDER: usize = 100_000;

/// A bijection of `{0, …, m−1}`; `image[i]` is the position that receives
/// coordinate `i`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation {
    image: Vec<usize>,
}

impl Permutation {
    pub fn new(image: Vec<usize>) -> Result<Self> {
        let m = image.len();
        let mut seen = vec![false; m];
        for &v in &image {
            if v >= m || seen[v] {
                return Err(invalid(format!("{image:?} is not a permutation of 0..{m}")));
            }
            seen[v] = true;
        }
        Ok(Self { image })
    }

    pub fn identity(m: usize) -> Self {
        Self {
            image: (0..m).collect(),
        }
    }

    /// Cyclic shift by `steps`: coordinate `i` moves to `i + steps (mod m)`.
    pub fn shift(m: usize, steps: usize) -> Self {
        Self {
            image: (0..m).map(|i| (i + steps) % m).collect(),
        }
    }

    pub fn degree(&self) -> usize {
        self.image.len()
    }

    pub fn image(&self) -> &[usize] {
        &self.image
    }

    pub fn is_identity(&self) -> bool {
        self.image.iter().enumerate().all(|(i, &v)| i == v)
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Self) -> Self {
        assert_eq!(self.degree(), other.degree());
        Self {
            image: other.image.iter().map(|&j| self.image[j]).collect(),
        }
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.degree()];
        for (i, &v) in self.image.iter().enumerate() {
            inv[v] = i;
        }
        Self { image: inv }
    }

    /// Applies the permutation to a vector: `out[image[i]] = x[i]`.
    pub fn act(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.degree() {
            return Err(invalid(format!(
                "vector of length {} acted on by a permutation of degree {}",
                x.len(),
                self.degree()
            )));
        }
        let mut out = vec![0.0; x.len()];
        for (i, &v) in x.iter().enumerate() {
            out[self.image[i]] = v;
        }
        Ok(out)
    }
}

impl fmt::Debug for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Perm{:?}", self.image)
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = Error;

    fn try_from(image: Vec<usize>) -> Result<Self> {
        Self::new(image)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.image
    }
}

/// `act` as a free function.
pub fn act(p: &Permutation, x: &[f64]) -> Result<Vec<f64>> {
    p.act(x)
}

/// Description of a finite permutation group on `m` coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GroupSpec {
    /// Cyclic shifts of `m` coordinates.
    Cyclic { m: usize },
    /// All permutations of `m` coordinates.
    Symmetric { m: usize },
    /// A user-supplied list of permutations, validated to be a group.
    Explicit { perms: Vec<Permutation> },
    /// `S_{m_1} × ⋯ × S_{m_r}` permuting within consecutive coordinate blocks.
    DirectSum { blocks: Vec<usize> },
    /// `S_a × S_l` relabeling rows and columns of a row-major `a × l` grid.
    DirectProduct { a: usize, l: usize },
    /// `S_s ≀ S_b`: permute within each of `b` blocks of size `s`, then
    /// permute the blocks.
    Wreath { s: usize, b: usize },
}

impl GroupSpec {
    pub fn trivial(m: usize) -> Self {
        GroupSpec::Explicit {
            perms: vec![Permutation::identity(m)],
        }
    }

    pub fn degree(&self) -> usize {
        match self {
            GroupSpec::Cyclic { m } | GroupSpec::Symmetric { m } => *m,
            GroupSpec::Explicit { perms } => perms.first().map_or(0, Permutation::degree),
            GroupSpec::DirectSum { blocks } => blocks.iter().sum(),
            GroupSpec::DirectProduct { a, l } => a * l,
            GroupSpec::Wreath { s, b } => s * b,
        }
    }

    /// Group order predicted from the structure (saturating).
    pub fn order(&self) -> usize {
        match self {
            GroupSpec::Cyclic { m } => *m,
            GroupSpec::Symmetric { m } => factorial(*m),
            GroupSpec::Explicit { perms } => perms.iter().collect::<BTreeSet<_>>().len(),
            GroupSpec::DirectSum { blocks } => {
                blocks.iter().fold(1usize, |acc, &k| acc.saturating_mul(factorial(k)))
            }
            GroupSpec::DirectProduct { a, l } => factorial(*a).saturating_mul(factorial(*l)),
            GroupSpec::Wreath { s, b } => {
                let inner = (0..*b).fold(1usize, |acc, _| acc.saturating_mul(factorial(*s)));
                inner.saturating_mul(factorial(*b))
            }
        }
    }

    pub fn is_cyclic(&self) -> bool {
        matches!(self, GroupSpec::Cyclic { .. })
    }
}

fn factorial(k: usize) -> usize {
    (1..=k).fold(1usize, |acc, v| acc.saturating_mul(v))
}

/// All permutations of `0..m` in lexicographic order.
fn all_permutations(m: usize) -> Vec<Vec<usize>> {
    let mut current: Vec<usize> = (0..m).collect();
    let mut out = vec![current.clone()];
    loop {
        // next lexicographic permutation
        let Some(i) = (1..m).rev().find(|&i| current[i - 1] < current[i]) else {
            break;
        };
        let j = (i..m).rev().find(|&j| current[j] > current[i - 1]).unwrap();
        current.swap(i - 1, j);
        current[i..].reverse();
        out.push(current.clone());
    }
    out
}

/// Enumerates the elements of `g` in lexicographic order of their images.
pub fn enumerate(g: &GroupSpec) -> Result<Vec<Permutation>> {
    let m = g.degree();
    if m == 0 {
        return Err(invalid("group of degree 0"));
    }
    if let GroupSpec::Symmetric { m } = g {
        if *m > MAX_SYMMETRIC_DEGREE {
            return Err(Error::TooLarge {
                what: "symmetric group degree",
                size: *m,
                limit: MAX_SYMMETRIC_DEGREE,
            });
        }
    }
    let order = g.order();
    if order > MAX_GROUP_ORDER {
        return Err(Error::TooLarge {
            what: "group order",
            size: order,
            limit: MAX_GROUP_ORDER,
        });
    }

    let mut elements: Vec<Permutation> = match g {
        GroupSpec::Cyclic { m } => (0..*m).map(|s| Permutation::shift(*m, s)).collect(),
        GroupSpec::Symmetric { m } => all_permutations(*m)
            .into_iter()
            .map(|image| Permutation { image })
            .collect(),
        GroupSpec::Explicit { perms } => {
            validate_explicit(perms)?;
            perms.clone()
        }
        GroupSpec::DirectSum { blocks } => {
            if blocks.is_empty() || blocks.contains(&0) {
                return Err(invalid("direct sum needs nonempty blocks of positive size"));
            }
            let mut acc = vec![Vec::<usize>::new()];
            let mut offset = 0;
            for &size in blocks {
                let local = all_permutations(size);
                acc = acc
                    .iter()
                    .flat_map(|prefix| {
                        local.iter().map(move |p| {
                            let mut img = prefix.clone();
                            img.extend(p.iter().map(|&v| v + offset));
                            img
                        })
                    })
                    .collect();
                offset += size;
            }
            acc.into_iter().map(|image| Permutation { image }).collect()
        }
        GroupSpec::DirectProduct { a, l } => {
            if *a == 0 || *l == 0 {
                return Err(invalid("direct product needs positive grid dimensions"));
            }
            let rows = all_permutations(*a);
            let cols = all_permutations(*l);
            let mut out = Vec::with_capacity(rows.len() * cols.len());
            for r in &rows {
                for c in &cols {
                    let image = (0..a * l).map(|idx| r[idx / l] * l + c[idx % l]).collect();
                    out.push(Permutation { image });
                }
            }
            out
        }
        GroupSpec::Wreath { s, b } => {
            if *s == 0 || *b == 0 {
                return Err(invalid("wreath product needs positive block size and count"));
            }
            let inner = all_permutations(*s);
            let outer = all_permutations(*b);
            // all b-tuples of inner permutations
            let mut tuples: Vec<Vec<&Vec<usize>>> = vec![Vec::new()];
            for _ in 0..*b {
                tuples = tuples
                    .iter()
                    .flat_map(|t| {
                        inner.iter().map(move |p| {
                            let mut t = t.clone();
                            t.push(p);
                            t
                        })
                    })
                    .collect();
            }
            let mut out = Vec::with_capacity(tuples.len() * outer.len());
            for t in &tuples {
                for sigma in &outer {
                    let image = (0..s * b)
                        .map(|idx| {
                            let (blk, k) = (idx / s, idx % s);
                            sigma[blk] * s + t[blk][k]
                        })
                        .collect();
                    out.push(Permutation { image });
                }
            }
            out
        }
    };
    elements.sort();
    elements.dedup();
    Ok(elements)
}

fn validate_explicit(perms: &[Permutation]) -> Result<()> {
    let Some(first) = perms.first() else {
        return Err(invalid("explicit group must list at least one permutation"));
    };
    let m = first.degree();
    if perms.iter().any(|p| p.degree() != m) {
        return Err(invalid("explicit permutations have mixed degrees"));
    }
    let set: HashSet<&Permutation> = perms.iter().collect();
    if set.len() > MAX_GROUP_ORDER {
        return Err(Error::TooLarge {
            what: "group order",
            size: set.len(),
            limit: MAX_GROUP_ORDER,
        });
    }
    if !set.contains(&Permutation::identity(m)) {
        return Err(invalid("explicit group does not contain the identity"));
    }
    for p in &set {
        if !set.contains(&p.inverse()) {
            return Err(invalid(format!("explicit group is missing the inverse of {p:?}")));
        }
        for q in &set {
            if !set.contains(&p.compose(q)) {
                return Err(invalid(format!("explicit group is not closed: {p:?} ∘ {q:?}")));
            }
        }
    }
    Ok(())
}

/// Brute-force 2-transitivity: every ordered pair of distinct points can be
/// mapped to every other.
pub fn is_two_transitive(g: &GroupSpec) -> Result<bool> {
    let m = g.degree();
    if m < 2 {
        return Err(invalid("2-transitivity needs degree at least 2"));
    }
    let elements = enumerate(g)?;
    let needed = m * (m - 1);
    for x1 in 0..m {
        for x2 in 0..m {
            if x1 == x2 {
                continue;
            }
            let reached: HashSet<(usize, usize)> =
                elements.iter().map(|p| (p.image[x1], p.image[x2])).collect();
            if reached.len() < needed {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// How a block's columns are indexed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnMode {
    /// One column per group element (`|G|` columns). Used by every closed form.
    #[default]
    Elements,
    /// One column per distinct orbit vector. Exploratory: changes the scale of
    /// `γ` relative to the element-indexed convention.
    Distinct,
}

/// One orbit block of a target: a group, a base distribution and the column
/// convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetBlock {
    pub group: GroupSpec,
    pub base: Vec<f64>,
    #[serde(default)]
    pub columns: ColumnMode,
}

impl TargetBlock {
    pub fn new(group: GroupSpec, base: Vec<f64>) -> Self {
        Self {
            group,
            base,
            columns: ColumnMode::Elements,
        }
    }

    pub fn distinct(mut self) -> Self {
        self.columns = ColumnMode::Distinct;
        self
    }

    pub fn is_uniform(&self) -> bool {
        is_uniform(&self.base)
    }
}

pub(crate) fn is_uniform(y: &[f64]) -> bool {
    let u = 1.0 / y.len() as f64;
    y.iter().all(|v| (v - u).abs() <= 1e-12)
}

/// Multi-block target specification `Y = [Y_1 | ⋯ | Y_r]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub blocks: Vec<TargetBlock>,
}

/// Encoding of the fixed-point (uniform) column in the three-animal example.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedPointEncoding {
    /// The uniform column is the orbit of the trivial group.
    TrivialGroup,
    /// The uniform column is the (distinct-column) `S_3` orbit of a fixed point.
    SymmetricDistinct,
}

impl TargetSpec {
    pub fn single(group: GroupSpec, base: Vec<f64>) -> Self {
        Self {
            blocks: vec![TargetBlock::new(group, base)],
        }
    }

    /// The 3 x 4 dog/cat/rabbit target: three one-hot columns (distinct `S_3`
    /// orbit of `e_dog`) followed by the uniform column.
    pub fn animals(encoding: FixedPointEncoding) -> Self {
        let third = 1.0 / 3.0;
        let fixed = match encoding {
            FixedPointEncoding::TrivialGroup => TargetBlock::new(GroupSpec::trivial(3), vec![third; 3]),
            FixedPointEncoding::SymmetricDistinct => {
                TargetBlock::new(GroupSpec::Symmetric { m: 3 }, vec![third; 3]).distinct()
            }
        };
        Self {
            blocks: vec![
                TargetBlock::new(GroupSpec::Symmetric { m: 3 }, vec![1.0, 0.0, 0.0]).distinct(),
                fixed,
            ],
        }
    }

    pub fn degree(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.base.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(invalid("target has no blocks"));
        }
        let m = self.degree();
        if m == 0 {
            return Err(invalid("empty base distribution"));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.base.len() != m || b.group.degree() != m {
                return Err(invalid(format!("block {i} does not have degree {m}")));
            }
            if b.base.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(invalid(format!("block {i} base has negative or non-finite entries")));
            }
            let sum: f64 = b.base.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(invalid(format!("block {i} base sums to {sum}, not 1")));
            }
        }
        Ok(())
    }
}

/// Column label of an orbit matrix: the block and group element that produced
/// it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnLabel {
    pub block: usize,
    pub element: Permutation,
}

/// Orbit target matrix together with its column provenance.
#[derive(Debug, Clone)]
pub struct OrbitMatrix {
    pub y: Matrix,
    pub labels: Vec<ColumnLabel>,
    pub block_ranges: Vec<Range<usize>>,
}

impl OrbitMatrix {
    pub fn n(&self) -> usize {
        self.y.cols()
    }

    /// Columns contributed by each block.
    pub fn multiplicities(&self) -> Vec<usize> {
        self.block_ranges.iter().map(|r| r.len()).collect()
    }
}

/// Builds `Y`; column `j` of block `i` is `g_j ∘ y_i` under the fixed
/// enumeration (or the first element producing each distinct vector).
pub fn orbit_matrix(t: &TargetSpec) -> Result<OrbitMatrix> {
    t.validate()?;
    let m = t.degree();
    let mut columns = Vec::new();
    let mut labels = Vec::new();
    let mut block_ranges = Vec::new();
    for (bi, block) in t.blocks.iter().enumerate() {
        let start = columns.len();
        let elements = enumerate(&block.group)?;
        let mut seen: HashSet<Vec<u64>> = HashSet::new();
        for g in elements {
            let col = g.act(&block.base)?;
            if block.columns == ColumnMode::Distinct {
                let key: Vec<u64> = col.iter().map(|v| v.to_bits()).collect();
                if !seen.insert(key) {
                    continue;
                }
            }
            columns.push(col);
            labels.push(ColumnLabel { block: bi, element: g });
        }
        block_ranges.push(start..columns.len());
    }
    if columns.len() > MAX_GROUP_ORDER {
        return Err(Error::TooLarge {
            what: "orbit column count",
            size: columns.len(),
            limit: MAX_GROUP_ORDER,
        });
    }
    let y = Matrix::from_columns(&columns)?;
    debug_assert_eq!(y.rows(), m);
    Ok(OrbitMatrix {
        y,
        labels,
        block_ranges,
    })
}

fn column_counts(y: &Matrix, range: Range<usize>) -> BTreeMap<Vec<u64>, usize> {
    let mut counts = BTreeMap::new();
    for j in range {
        let key: Vec<u64> = y.column(j).iter().map(|v| v.to_bits()).collect();
        *counts.entry(key).or_insert(0) += 1;
    }
    counts
}

/// Balance: within each block every distinct column occurs equally often.
pub fn check_balance(orbit: &OrbitMatrix) -> bool {
    orbit.block_ranges.iter().all(|r| {
        let counts = column_counts(&orbit.y, r.clone());
        let mut values = counts.values();
        let first = values.next().copied();
        values.all(|&c| Some(c) == first)
    })
}

/// Closure: acting with any group element on a block's columns permutes the
/// block's column multiset.
pub fn check_closure(t: &TargetSpec, orbit: &OrbitMatrix) -> Result<bool> {
    for (bi, block) in t.blocks.iter().enumerate() {
        let range = orbit.block_ranges[bi].clone();
        let original = column_counts(&orbit.y, range.clone());
        for g in enumerate(&block.group)? {
            let mut moved = BTreeMap::new();
            for j in range.clone() {
                let col = g.act(&orbit.y.column(j))?;
                let key: Vec<u64> = col.iter().map(|v| v.to_bits()).collect();
                *moved.entry(key).or_insert(0) += 1;
            }
            if moved != original {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn degree_order(g: GroupSpec) -> usize {
        enumerate(&g).unwrap().len()
    }

    #[test]
    fn enumeration_sizes() {
        let c3 = enumerate(&GroupSpec::Cyclic { m: 3 }).unwrap();
        assert_eq!(c3, vec![Permutation::shift(3, 0), Permutation::shift(3, 1), Permutation::shift(3, 2)]);
        assert_eq!(degree_order(GroupSpec::Symmetric { m: 3 }), 6);
        assert_eq!(degree_order(GroupSpec::Symmetric { m: 5 }), 120);
        assert_eq!(degree_order(GroupSpec::Wreath { s: 2, b: 3 }), 48);
        assert_eq!(degree_order(GroupSpec::Wreath { s: 3, b: 2 }), 72);
        assert_eq!(degree_order(GroupSpec::DirectSum { blocks: vec![2, 3] }), 12);
        assert_eq!(degree_order(GroupSpec::DirectSum { blocks: vec![2, 3, 2] }), 24);
        assert_eq!(degree_order(GroupSpec::DirectProduct { a: 3, l: 3 }), 36);
    }

    #[test]
    fn guard_rails() {
        assert!(matches!(enumerate(&GroupSpec::Symmetric { m: 11 }), Err(Error::TooLarge { .. })));
        assert!(matches!(
            enumerate(&GroupSpec::Wreath { s: 4, b: 4 }),
            Err(Error::TooLarge { .. })
        ));
    }

    #[test]
    fn action_examples() {
        let x = [0.1, 0.2, 0.3];
        assert_eq!(Permutation::identity(3).act(&x).unwrap(), x.to_vec());
        let y = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(Permutation::shift(4, 1).act(&y).unwrap(), vec![4.0, 1.0, 2.0, 3.0]);
        let week = [0.0, 0.5, 0.3, 0.2, 0.0, 0.0, 0.0];
        assert_eq!(
            Permutation::shift(7, 1).act(&week).unwrap(),
            vec![0.0, 0.0, 0.5, 0.3, 0.2, 0.0, 0.0]
        );
        assert!(Permutation::shift(3, 1).act(&y).is_err());
    }

    #[test]
    fn explicit_group_validation() {
        let ok = GroupSpec::Explicit {
            perms: vec![Permutation::identity(2), Permutation::new(vec![1, 0]).unwrap()],
        };
        assert_eq!(enumerate(&ok).unwrap().len(), 2);
        let not_closed = GroupSpec::Explicit {
            perms: vec![Permutation::identity(3), Permutation::shift(3, 1)],
        };
        assert!(enumerate(&not_closed).is_err());
        assert!(Permutation::new(vec![0, 0]).is_err());
    }

    #[test]
    fn two_transitivity_examples() {
        assert!(is_two_transitive(&GroupSpec::Symmetric { m: 4 }).unwrap());
        assert!(!is_two_transitive(&GroupSpec::Cyclic { m: 3 }).unwrap());
        assert!(is_two_transitive(&GroupSpec::Symmetric { m: 2 }).unwrap());
        for m in 2..=6 {
            assert!(is_two_transitive(&GroupSpec::Symmetric { m }).unwrap());
        }
        for m in 3..=8 {
            assert!(!is_two_transitive(&GroupSpec::Cyclic { m }).unwrap());
        }
        assert!(!is_two_transitive(&GroupSpec::DirectSum { blocks: vec![2, 3] }).unwrap());
    }

    #[test]
    fn affine_group_of_order_20_is_two_transitive() {
        // AGL(1, 5): x -> a x + b, a ≠ 0.
        let mut perms = Vec::new();
        for a in 1..5 {
            for b in 0..5 {
                perms.push(Permutation::new((0..5).map(|x| (a * x + b) % 5).collect()).unwrap());
            }
        }
        let g = GroupSpec::Explicit { perms };
        assert_eq!(enumerate(&g).unwrap().len(), 20);
        assert!(is_two_transitive(&g).unwrap());
    }

    #[test]
    fn cyclic_orbit_is_circulant() {
        let y = vec![0.0, 0.5, 0.3, 0.2, 0.0, 0.0, 0.0];
        let orbit = orbit_matrix(&TargetSpec::single(GroupSpec::Cyclic { m: 7 }, y.clone())).unwrap();
        assert_eq!(orbit.y.shape(), (7, 7));
        for j in 0..7 {
            for i in 0..7 {
                assert_eq!(orbit.y[(i, j)], y[(i + 7 - j) % 7]);
            }
        }
    }

    #[test]
    fn one_hot_symmetric_orbit_repeats() {
        let orbit = orbit_matrix(&TargetSpec::single(GroupSpec::Symmetric { m: 3 }, vec![1.0, 0.0, 0.0])).unwrap();
        assert_eq!(orbit.n(), 6);
        let counts = column_counts(&orbit.y, 0..6);
        assert_eq!(counts.len(), 3);
        assert!(counts.values().all(|&c| c == 2));
        assert!(check_balance(&orbit));
    }

    #[test]
    fn animals_matrix_both_encodings() {
        let third = 1.0 / 3.0;
        let expected = Matrix::from_rows(&[
            vec![1.0, 0.0, 0.0, third],
            vec![0.0, 1.0, 0.0, third],
            vec![0.0, 0.0, 1.0, third],
        ])
        .unwrap();
        for enc in [FixedPointEncoding::TrivialGroup, FixedPointEncoding::SymmetricDistinct] {
            let t = TargetSpec::animals(enc);
            let orbit = orbit_matrix(&t).unwrap();
            // Column order within the one-hot block follows the enumeration.
            let mut cols: Vec<Vec<f64>> = (0..3).map(|j| orbit.y.column(j)).collect();
            cols.sort_by(|a, b| b.partial_cmp(a).unwrap());
            cols.push(orbit.y.column(3));
            assert_eq!(Matrix::from_columns(&cols).unwrap(), expected);
            assert_eq!(orbit.multiplicities(), vec![3, 1]);
            assert!(check_balance(&orbit));
            assert!(check_closure(&t, &orbit).unwrap());
        }
    }

    #[test]
    fn target_validation() {
        let bad_sum = TargetSpec::single(GroupSpec::Cyclic { m: 2 }, vec![0.6, 0.6]);
        assert!(orbit_matrix(&bad_sum).is_err());
        let bad_degree = TargetSpec::single(GroupSpec::Cyclic { m: 3 }, vec![0.5, 0.5]);
        assert!(orbit_matrix(&bad_degree).is_err());
    }

    fn group_strategy() -> impl Strategy<Value = GroupSpec> {
        prop_oneof![
            (1usize..8).prop_map(|m| GroupSpec::Cyclic { m }),
            (1usize..5).prop_map(|m| GroupSpec::Symmetric { m }),
            prop::collection::vec(1usize..4, 1..3).prop_map(|blocks| GroupSpec::DirectSum { blocks }),
            (1usize..3, 1usize..4).prop_map(|(a, l)| GroupSpec::DirectProduct { a, l }),
            (1usize..3, 1usize..4).prop_map(|(s, b)| GroupSpec::Wreath { s, b }),
        ]
    }

    proptest! {
        #[test]
        fn enumerated_groups_are_closed(g in group_strategy()) {
            let elements = enumerate(&g).unwrap();
            prop_assert_eq!(elements.len(), g.order());
            let set: HashSet<&Permutation> = elements.iter().collect();
            prop_assert!(set.contains(&Permutation::identity(g.degree())));
            for p in &elements {
                prop_assert!(set.contains(&p.inverse()));
                for q in &elements {
                    prop_assert!(set.contains(&p.compose(q)));
                }
            }
        }

        #[test]
        fn orbit_blocks_are_balanced_and_closed(g in group_strategy(), seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = g.degree();
            let raw: Vec<f64> = (0..m).map(|_| rng.gen_range(0..4) as f64).collect();
            let total: f64 = raw.iter().sum();
            let base: Vec<f64> = if total == 0.0 { vec![1.0 / m as f64; m] } else { raw.iter().map(|v| v / total).collect() };
            prop_assume!((base.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for t in [TargetSpec::single(g.clone(), base.clone()), TargetSpec { blocks: vec![TargetBlock::new(g.clone(), base.clone()).distinct()] }] {
                let orbit = orbit_matrix(&t).unwrap();
                prop_assert!(check_balance(&orbit));
                prop_assert!(check_closure(&t, &orbit).unwrap());
                for j in 0..orbit.n() {
                    let s: f64 = orbit.y.column(j).iter().sum();
                    prop_assert!((s - 1.0).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn action_preserves_multiset(seed in 0u64..10_000, x in prop::collection::vec(-5.0f64..5.0, 6)) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut perm: Vec<usize> = (0..6).collect();
            perm.shuffle(&mut rng);
            let p = Permutation::new(perm).unwrap();
            let mut out = p.act(&x).unwrap();
            let mut sorted = x.clone();
            out.sort_by(f64::total_cmp);
            sorted.sort_by(f64::total_cmp);
            prop_assert_eq!(out, sorted);
            let back = p.inverse().act(&p.act(&x).unwrap()).unwrap();
            prop_assert_eq!(back, x);
        }
    }
}
