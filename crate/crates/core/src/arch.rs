//! Architectural parameter space of the BERT family.
//!
//! A family member is selected by the tuple `<D, A, H, I>` (depth, attention
//! heads, hidden size, intermediate size). A [`SearchSpace`] is the Cartesian
//! product of four ordered axes; [`enumerate`] walks it in lexicographic order
//! and keeps only the tuples that pass [`validate`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One member of the architecture family.
///
/// Field order is `D, A, H, I`, so the derived `Ord` is the lexicographic
/// order used for enumeration and for tie-breaking in rankings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct ArchParams {
    pub depth: u32,
    pub heads: u32,
    pub hidden: u32,
    pub intermediate: u32,
}

impl ArchParams {
    pub const fn new(depth: u32, heads: u32, hidden: u32, intermediate: u32) -> Self {
        Self {
            depth,
            heads,
            hidden,
            intermediate,
        }
    }

    /// RoBERTa-large, the maximum point used for the reference extraction run.
    pub const ROBERTA_LARGE: ArchParams = ArchParams::new(24, 16, 1024, 4096);
    pub const BERT_BASE: ArchParams = ArchParams::new(12, 12, 768, 3072);
    /// Top-ranked architecture reported for the reference extraction run.
    pub const BORT: ArchParams = ArchParams::new(4, 8, 1024, 768);

    pub fn with_heads(self, heads: u32) -> Self {
        Self { heads, ..self }
    }

    /// Head width `H / A`. Only meaningful for valid architectures.
    pub fn head_dim(&self) -> u32 {
        self.hidden / self.heads
    }

    /// Returns `self` if it passes [`validate`], otherwise an
    /// [`Error::InvalidArch`] carrying every violation.
    pub fn checked(self) -> Result<Self> {
        match validate(&self) {
            Verdict::Ok => Ok(self),
            Verdict::Invalid(violations) => Err(Error::InvalidArch {
                arch: self,
                violations,
            }),
        }
    }
}

impl From<[u32; 4]> for ArchParams {
    fn from([d, a, h, i]: [u32; 4]) -> Self {
        Self::new(d, a, h, i)
    }
}

impl From<ArchParams> for [u32; 4] {
    fn from(arch: ArchParams) -> Self {
        [arch.depth, arch.heads, arch.hidden, arch.intermediate]
    }
}

impl fmt::Display for ArchParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "<{},{},{},{}>",
            self.depth, self.heads, self.hidden, self.intermediate
        )
    }
}

impl FromStr for ArchParams {
    type Err = Error;

    /// Parses `D,A,H,I` (optionally wrapped in `<>` or `[]`).
    fn from_str(s: &str) -> Result<Self> {
        let trimmed = s
            .trim()
            .trim_start_matches(['<', '['])
            .trim_end_matches(['>', ']']);
        let fields = trimmed
            .split(',')
            .map(|f| f.trim().parse::<u32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::InvalidArgument(format!("architecture `{s}`: {e}")))?;
        match fields.as_slice() {
            &[d, a, h, i] => Ok(Self::new(d, a, h, i)),
            _ => Err(Error::InvalidArgument(format!(
                "architecture `{s}` must have exactly four fields D,A,H,I"
            ))),
        }
    }
}

/// A single broken constraint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "constraint", rename_all = "snake_case")]
pub enum Violation {
    NonPositive { field: &'static str },
    OddDepth { depth: u32 },
    HeadsDoNotDivideHidden { hidden: u32, heads: u32 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonPositive { field } => write!(f, "{field} must be positive"),
            Violation::OddDepth { depth } => write!(f, "depth must be even (got {depth})"),
            Violation::HeadsDoNotDivideHidden { hidden, heads } => write!(
                f,
                "hidden size must be divisible by heads ({hidden} mod {heads} = {})",
                hidden % heads
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Ok,
    Invalid(Vec<Violation>),
}

impl Verdict {
    pub fn is_ok(&self) -> bool {
        matches!(self, Verdict::Ok)
    }

    pub fn violations(&self) -> &[Violation] {
        match self {
            Verdict::Ok => &[],
            Verdict::Invalid(v) => v,
        }
    }
}

/// Checks every architectural constraint and reports all that fail.
pub fn validate(arch: &ArchParams) -> Verdict {
    let mut violations = Vec::new();
    for (field, value) in [
        ("depth", arch.depth),
        ("heads", arch.heads),
        ("hidden", arch.hidden),
        ("intermediate", arch.intermediate),
    ] {
        if value == 0 {
            violations.push(Violation::NonPositive { field });
        }
    }
    if arch.depth % 2 != 0 {
        violations.push(Violation::OddDepth { depth: arch.depth });
    }
    if arch.heads > 0 && arch.hidden % arch.heads != 0 {
        violations.push(Violation::HeadsDoNotDivideHidden {
            hidden: arch.hidden,
            heads: arch.heads,
        });
    }
    if violations.is_empty() {
        Verdict::Ok
    } else {
        Verdict::Invalid(violations)
    }
}

/// Product of four ordered axes. Each axis is non-empty and strictly ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSearchSpace")]
pub struct SearchSpace {
    depths: Vec<u32>,
    heads: Vec<u32>,
    hiddens: Vec<u32>,
    intermediates: Vec<u32>,
}

#[derive(Deserialize)]
struct RawSearchSpace {
    depths: Vec<u32>,
    heads: Vec<u32>,
    hiddens: Vec<u32>,
    intermediates: Vec<u32>,
}

impl TryFrom<RawSearchSpace> for SearchSpace {
    type Error = Error;

    fn try_from(raw: RawSearchSpace) -> Result<Self> {
        SearchSpace::new(raw.depths, raw.heads, raw.hiddens, raw.intermediates)
    }
}

fn check_axis(name: &'static str, axis: &[u32]) -> Result<()> {
    if axis.is_empty() {
        return Err(Error::EmptyAxis(name));
    }
    if axis.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::UnorderedAxis { axis: name });
    }
    Ok(())
}

impl SearchSpace {
    pub fn new(
        depths: Vec<u32>,
        heads: Vec<u32>,
        hiddens: Vec<u32>,
        intermediates: Vec<u32>,
    ) -> Result<Self> {
        check_axis("depths", &depths)?;
        check_axis("heads", &heads)?;
        check_axis("hiddens", &hiddens)?;
        check_axis("intermediates", &intermediates)?;
        Ok(Self {
            depths,
            heads,
            hiddens,
            intermediates,
        })
    }

    /// The 6 x 4 x 3 x 5 grid of the reference extraction run.
    pub fn paper_grid() -> Self {
        Self {
            depths: vec![2, 4, 6, 8, 10, 12],
            heads: vec![4, 8, 12, 16],
            hiddens: vec![512, 768, 1024],
            intermediates: vec![256, 512, 768, 1024, 3072],
        }
    }

    pub fn singleton(arch: ArchParams) -> Self {
        Self {
            depths: vec![arch.depth],
            heads: vec![arch.heads],
            hiddens: vec![arch.hidden],
            intermediates: vec![arch.intermediate],
        }
    }

    pub fn depths(&self) -> &[u32] {
        &self.depths
    }

    pub fn heads(&self) -> &[u32] {
        &self.heads
    }

    pub fn hiddens(&self) -> &[u32] {
        &self.hiddens
    }

    pub fn intermediates(&self) -> &[u32] {
        &self.intermediates
    }

    /// Size of the unfiltered Cartesian product.
    pub fn product_len(&self) -> usize {
        self.depths.len() * self.heads.len() * self.hiddens.len() * self.intermediates.len()
    }

    /// Every tuple of the product in lexicographic order, valid or not.
    pub fn product(&self) -> impl Iterator<Item = ArchParams> + '_ {
        self.depths.iter().flat_map(move |&d| {
            self.heads.iter().flat_map(move |&a| {
                self.hiddens.iter().flat_map(move |&h| {
                    self.intermediates
                        .iter()
                        .map(move |&i| ArchParams::new(d, a, h, i))
                })
            })
        })
    }
}

/// Valid members of the product, lexicographically ascending on `<D,A,H,I>`.
///
/// Axes are strictly ascending, so the nested walk is already sorted and
/// duplicate-free.
pub fn enumerate(space: &SearchSpace) -> Vec<ArchParams> {
    space.product().filter(|a| validate(a).is_ok()).collect()
}

/// Keeps every `epsilon`-th element of each axis, starting from the first.
///
/// `epsilon == 1` returns the space unchanged; an epsilon at least as long as
/// an axis collapses that axis to its first element.
pub fn stride_subsample(space: &SearchSpace, epsilon: usize) -> Result<SearchSpace> {
    if epsilon < 1 {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be at least 1, got {epsilon}"
        )));
    }
    let stride = |axis: &[u32]| axis.iter().copied().step_by(epsilon).collect::<Vec<_>>();
    Ok(SearchSpace {
        depths: stride(&space.depths),
        heads: stride(&space.heads),
        hiddens: stride(&space.hiddens),
        intermediates: stride(&space.intermediates),
    })
}

/// Vocabulary and input-shape settings shared by every candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingConfig {
    /// Token vocabulary cardinality `V`.
    pub vocab: u32,
    /// Position embedding table size `S`.
    pub typepos: u32,
    /// Input sequence length `s`.
    pub seq: u32,
    /// Batch size `z`.
    pub batch: u32,
}

impl Default for EmbeddingConfig {
    /// RoBERTa vocabulary and input shape.
    fn default() -> Self {
        Self {
            vocab: 50_265,
            typepos: 514,
            seq: 512,
            batch: 1_024,
        }
    }
}

impl EmbeddingConfig {
    pub fn roberta() -> Self {
        Self::default()
    }

    /// Cased BERT vocabulary with a 512-row position table.
    pub fn bert_cased() -> Self {
        Self {
            vocab: 28_996,
            typepos: 512,
            ..Self::default()
        }
    }

    pub fn with_tables(vocab: u32, typepos: u32) -> Self {
        Self {
            vocab,
            typepos,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab < 2 {
            return Err(Error::Config(format!(
                "vocabulary size must be at least 2, got {}",
                self.vocab
            )));
        }
        if self.typepos < 1 || self.seq < 1 || self.batch < 1 {
            return Err(Error::Config(
                "typepos, seq and batch must all be positive".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bort_is_valid() {
        assert_eq!(validate(&ArchParams::BORT), Verdict::Ok);
    }

    #[test]
    fn indivisible_heads_rejected() {
        let v = validate(&ArchParams::new(4, 12, 1024, 768));
        assert_eq!(
            v.violations(),
            &[Violation::HeadsDoNotDivideHidden {
                hidden: 1024,
                heads: 12
            }]
        );
    }

    #[test]
    fn odd_depth_rejected() {
        let v = validate(&ArchParams::new(3, 8, 512, 256));
        assert_eq!(v.violations(), &[Violation::OddDepth { depth: 3 }]);
        assert_eq!(v.violations()[0].to_string(), "depth must be even (got 3)");
    }

    #[test]
    fn every_violation_is_listed() {
        let v = validate(&ArchParams::new(3, 0, 10, 0));
        assert_eq!(v.violations().len(), 3);
        let v = validate(&ArchParams::new(5, 3, 10, 1));
        assert_eq!(v.violations().len(), 2);
    }

    #[test]
    fn paper_grid_has_300_valid_configs() {
        // Independent count: valid (A, H) pairs times depths times intermediates.
        let space = SearchSpace::paper_grid();
        let pairs = space
            .heads()
            .iter()
            .flat_map(|&a| space.hiddens().iter().map(move |&h| (a, h)))
            .filter(|(a, h)| h % a == 0)
            .count();
        assert_eq!(pairs, 10);
        assert_eq!(space.product_len(), 360);
        assert_eq!(enumerate(&space).len(), 300);
        assert_eq!(pairs * 6 * 5, 300);
    }

    #[test]
    fn singleton_and_all_filtered() {
        let one = SearchSpace::singleton(ArchParams::BORT);
        assert_eq!(enumerate(&one), vec![ArchParams::BORT]);
        let none = SearchSpace::new(vec![2], vec![12], vec![512], vec![256]).unwrap();
        assert!(enumerate(&none).is_empty());
    }

    #[test]
    fn axes_are_checked() {
        assert!(matches!(
            SearchSpace::new(vec![], vec![1], vec![1], vec![1]),
            Err(Error::EmptyAxis("depths"))
        ));
        assert!(matches!(
            SearchSpace::new(vec![2], vec![4, 4], vec![8], vec![1]),
            Err(Error::UnorderedAxis { axis: "heads" })
        ));
        assert!(SearchSpace::new(vec![4, 2], vec![1], vec![1], vec![1]).is_err());
    }

    #[test]
    fn stride_examples() {
        let grid = SearchSpace::paper_grid();
        assert_eq!(stride_subsample(&grid, 1).unwrap(), grid);
        let half = stride_subsample(&grid, 2).unwrap();
        assert_eq!(half.depths(), &[2, 6, 10]);
        let collapsed = stride_subsample(&grid, 6).unwrap();
        assert_eq!(collapsed.depths(), &[2]);
        assert_eq!(collapsed.product_len(), 1);
        assert!(stride_subsample(&grid, 0).is_err());
    }

    #[test]
    fn arch_parses_and_serializes_as_tuple() {
        let a: ArchParams = "4,8,1024,768".parse().unwrap();
        assert_eq!(a, ArchParams::BORT);
        let a: ArchParams = "<24, 16, 1024, 4096>".parse().unwrap();
        assert_eq!(a, ArchParams::ROBERTA_LARGE);
        assert!("1,2,3".parse::<ArchParams>().is_err());
        assert_eq!(
            serde_json::to_string(&ArchParams::BORT).unwrap(),
            "[4,8,1024,768]"
        );
    }

    #[test]
    fn search_space_json_rejects_bad_axes() {
        let ok: SearchSpace = serde_json::from_str(
            r#"{"depths":[2],"heads":[8],"hiddens":[1024],"intermediates":[768]}"#,
        )
        .unwrap();
        assert_eq!(enumerate(&ok), vec![ArchParams::new(2, 8, 1024, 768)]);
        assert!(serde_json::from_str::<SearchSpace>(
            r#"{"depths":[],"heads":[8],"hiddens":[1024],"intermediates":[768]}"#
        )
        .is_err());
    }

    fn axis() -> impl Strategy<Value = Vec<u32>> {
        prop::collection::btree_set(1u32..64, 1..5).prop_map(|s| s.into_iter().collect())
    }

    fn space() -> impl Strategy<Value = SearchSpace> {
        (axis(), axis(), axis(), axis())
            .prop_map(|(d, a, h, i)| SearchSpace::new(d, a, h, i).unwrap())
    }

    proptest! {
        #[test]
        fn enumeration_is_valid_sorted_and_bounded(space in space()) {
            let out = enumerate(&space);
            prop_assert!(out.iter().all(|a| validate(a).is_ok()));
            prop_assert!(out.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(out.len() <= space.product_len());
            let filtered = space.product().any(|a| !validate(&a).is_ok());
            prop_assert_eq!(out.len() == space.product_len(), !filtered);
            prop_assert_eq!(&out, &enumerate(&space));
        }

        #[test]
        fn strided_enumeration_is_a_subset(space in space(), eps in 1usize..6) {
            let full = enumerate(&space);
            let sub = enumerate(&stride_subsample(&space, eps).unwrap());
            prop_assert!(sub.iter().all(|a| full.binary_search(a).is_ok()));
            prop_assert_eq!(stride_subsample(&space, 1).unwrap(), space);
        }
    }
}
