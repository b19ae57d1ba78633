//! Dependency trees, validation, and the tree-to-tag-sequence codecs.
//!
//! Three schemes turn a tree into one tag per word: the number of children
//! of each word (NC), its distance from the root (DR), and a relative
//! POS-based encoding of its head (RPE). RPE is lossless: `decode_rpe`
//! inverts `encode_rpe` exactly on valid trees.

use std::collections::BTreeMap;
use std::fmt;

use crate::conllu::Sentence;
use crate::error::DcstError;

/// A validated head/label assignment over a sentence of length `m`.
///
/// `heads[i]` is the head of token `i + 1`, with 0 denoting ROOT.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepTree {
    pub heads: Vec<usize>,
    pub labels: Option<Vec<String>>,
}

impl DepTree {
    pub fn new(heads: Vec<usize>, labels: Option<Vec<String>>) -> Result<Self, DcstError> {
        validate_tree(&heads).map_err(DcstError::InvalidTree)?;
        if let Some(ref ls) = labels {
            if ls.len() != heads.len() {
                return Err(DcstError::Shape(format!(
                    "labels length {} != heads length {}",
                    ls.len(),
                    heads.len()
                )));
            }
        }
        Ok(DepTree { heads, labels })
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn from_sentence(s: &Sentence) -> Result<Self, DcstError> {
        let heads = s.heads().ok_or_else(|| {
            DcstError::Structure("sentence is missing head annotations".into())
        })?;
        DepTree::new(heads, s.deprels())
    }
}

/// Which tree invariant a head array violates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TreeViolation {
    /// `heads[index]` is outside `[0, m]` or points at its own token.
    HeadOutOfRange { index: usize, head: usize },
    /// No token is attached to ROOT.
    NoRoot,
    /// More than one token is attached to ROOT.
    MultipleRoots { indices: Vec<usize> },
    /// Tokens (0-based) that never reach ROOT by following heads.
    Cycle { indices: Vec<usize> },
}

impl fmt::Display for TreeViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TreeViolation::HeadOutOfRange { index, head } => {
                write!(f, "token {} has out-of-range head {}", index + 1, head)
            }
            TreeViolation::NoRoot => write!(f, "no token attached to ROOT"),
            TreeViolation::MultipleRoots { indices } => {
                write!(f, "multiple root-attached tokens: {:?}", indices)
            }
            TreeViolation::Cycle { indices } => {
                write!(f, "tokens not reaching ROOT (cycle): {:?}", indices)
            }
        }
    }
}

/// Check that a head array forms a single-rooted arborescence.
pub fn validate_tree(heads: &[usize]) -> Result<(), TreeViolation> {
    let m = heads.len();
    for (i, &h) in heads.iter().enumerate() {
        if h > m || h == i + 1 {
            return Err(TreeViolation::HeadOutOfRange { index: i, head: h });
        }
    }
    let roots: Vec<usize> = (0..m).filter(|&i| heads[i] == 0).collect();
    if roots.is_empty() {
        return Err(TreeViolation::NoRoot);
    }
    if roots.len() > 1 {
        return Err(TreeViolation::MultipleRoots { indices: roots });
    }
    // Walk each token towards ROOT; a walk longer than m tokens is a cycle.
    let mut stranded = Vec::new();
    for start in 0..m {
        let mut cur = start + 1;
        let mut steps = 0;
        while cur != 0 && steps <= m {
            cur = heads[cur - 1];
            steps += 1;
        }
        if cur != 0 {
            stranded.push(start);
        }
    }
    if stranded.is_empty() {
        Ok(())
    } else {
        Err(TreeViolation::Cycle { indices: stranded })
    }
}

/// Number of direct dependents of token `i` (1-based).
pub fn children_count(tree: &DepTree, i: usize) -> usize {
    assert!(i >= 1 && i <= tree.len(), "position {} out of range", i);
    tree.heads.iter().filter(|&&h| h == i).count()
}

/// Path length from token `i` (1-based) to ROOT; root-attached tokens have depth 1.
pub fn depth_of(tree: &DepTree, i: usize) -> usize {
    assert!(i >= 1 && i <= tree.len(), "position {} out of range", i);
    let mut depth = 0;
    let mut cur = i;
    while cur != 0 {
        cur = tree.heads[cur - 1];
        depth += 1;
    }
    depth
}

/// Tagging scheme identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub enum Scheme {
    Nc,
    Dr,
    Rpe,
    Lm,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Nc => "nc",
            Scheme::Dr => "dr",
            Scheme::Rpe => "rpe",
            Scheme::Lm => "lm",
        }
    }

    pub fn from_name(s: &str) -> Option<Scheme> {
        match s.to_ascii_lowercase().as_str() {
            "nc" => Some(Scheme::Nc),
            "dr" => Some(Scheme::Dr),
            "rpe" => Some(Scheme::Rpe),
            "lm" => Some(Scheme::Lm),
            _ => None,
        }
    }
}

/// Per-token tags for one sentence under one scheme.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSequence {
    pub scheme: Scheme,
    pub tags: Vec<String>,
}

/// Number-of-children tags.
pub fn encode_nc(tree: &DepTree) -> TagSequence {
    let tags = (1..=tree.len())
        .map(|i| children_count(tree, i).to_string())
        .collect();
    TagSequence { scheme: Scheme::Nc, tags }
}

/// Distance-from-root tags.
pub fn encode_dr(tree: &DepTree) -> TagSequence {
    let tags = (1..=tree.len())
        .map(|i| depth_of(tree, i).to_string())
        .collect();
    TagSequence { scheme: Scheme::Dr, tags }
}

/// Table mapping fine POS tags to coarse categories for the RPE scheme.
///
/// Tags not present in the table map to themselves.
#[derive(Debug, Clone)]
pub struct CoarsePosTable {
    map: BTreeMap<String, String>,
}

impl Default for CoarsePosTable {
    fn default() -> Self {
        let mut map = BTreeMap::new();
        for (from, to) in [
            ("NOUN", "N"),
            ("PROPN", "PN"),
            ("VERB", "V"),
            ("AUX", "V"),
            ("ADJ", "J"),
            ("PUNCT", "PU"),
            ("SYM", "PU"),
        ] {
            map.insert(from.to_string(), to.to_string());
        }
        CoarsePosTable { map }
    }
}

impl CoarsePosTable {
    pub fn new(entries: impl IntoIterator<Item = (String, String)>) -> Self {
        CoarsePosTable { map: entries.into_iter().collect() }
    }

    pub fn coarsen(&self, upos: &str) -> String {
        self.map.get(upos).cloned().unwrap_or_else(|| upos.to_string())
    }
}

/// Coarsen a POS tag with the default table.
pub fn coarsen_pos(upos: &str) -> String {
    CoarsePosTable::default().coarsen(upos)
}

/// The root token's distinguished RPE tag.
pub const RPE_ROOT_TAG: &str = "ROOT@0";

/// Relative POS-based head encoding.
///
/// A non-root token's head is written as `p@e`: the head is the `|e|`-th
/// word to its right (`e > 0`) or left (`e < 0`) whose coarse POS is `p`.
/// The root token gets the closed-vocabulary tag `ROOT@0`.
pub fn encode_rpe(tree: &DepTree, pos: &[&str], table: &CoarsePosTable) -> TagSequence {
    assert_eq!(tree.len(), pos.len(), "pos length must match tree length");
    let coarse: Vec<String> = pos.iter().map(|p| table.coarsen(p)).collect();
    let tags = (1..=tree.len())
        .map(|i| {
            let h = tree.heads[i - 1];
            if h == 0 {
                return RPE_ROOT_TAG.to_string();
            }
            let p = &coarse[h - 1];
            let e: i64 = if h > i {
                // k-th matching coarse POS to the right
                (i + 1..=h).filter(|&j| &coarse[j - 1] == p).count() as i64
            } else {
                -((h..i).filter(|&j| &coarse[j - 1] == p).count() as i64)
            };
            format!("{}@{}", p, e)
        })
        .collect();
    TagSequence { scheme: Scheme::Rpe, tags }
}

/// Raw head arrays recovered from RPE tags, plus which tokens failed to decode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RpeDecode {
    pub heads: Vec<usize>,
    /// 0-based indices whose tag referenced a non-existent occurrence; those
    /// fall back to head 0.
    pub failed: Vec<usize>,
}

/// Invert `encode_rpe`. The output is *not* validated: predicted tag
/// sequences routinely produce multi-root or cyclic head arrays, and the
/// caller decides what to do with them.
pub fn decode_rpe(tags: &TagSequence, pos: &[&str], table: &CoarsePosTable) -> RpeDecode {
    assert_eq!(tags.tags.len(), pos.len(), "tag/pos length mismatch");
    let coarse: Vec<String> = pos.iter().map(|p| table.coarsen(p)).collect();
    let m = pos.len();
    let mut heads = vec![0usize; m];
    let mut failed = Vec::new();
    for (idx, tag) in tags.tags.iter().enumerate() {
        let i = idx + 1;
        if tag == RPE_ROOT_TAG {
            continue;
        }
        let decoded = tag.rsplit_once('@').and_then(|(p, e)| {
            let e: i64 = e.parse().ok()?;
            if e == 0 {
                return None;
            }
            let k = e.unsigned_abs() as usize;
            let found: Vec<usize> = if e > 0 {
                (i + 1..=m).filter(|&j| coarse[j - 1] == p).collect()
            } else {
                (1..i).rev().filter(|&j| coarse[j - 1] == p).collect()
            };
            found.get(k - 1).copied()
        });
        match decoded {
            Some(h) => heads[idx] = h,
            None => failed.push(idx),
        }
    }
    RpeDecode { heads, failed }
}

/// Serialize (form, tag) pairs to the two-column dump format: one
/// `form TAB tag` line per token, blank line between sentences.
pub fn write_tagged(pairs: &[(&Sentence, &TagSequence)]) -> String {
    let mut out = String::new();
    for (sent, tags) in pairs {
        assert_eq!(sent.len(), tags.tags.len());
        for (tok, tag) in sent.tokens.iter().zip(&tags.tags) {
            out.push_str(&format!("{}\t{}\n", tok.form, tag));
        }
        out.push('\n');
    }
    out
}

/// Parse the two-column tagged format back into (forms, tags) blocks.
pub fn parse_tagged(text: &str, scheme: Scheme) -> Result<Vec<(Vec<String>, TagSequence)>, DcstError> {
    let mut blocks = Vec::new();
    let mut forms = Vec::new();
    let mut tags = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            if !forms.is_empty() {
                blocks.push((
                    std::mem::take(&mut forms),
                    TagSequence { scheme, tags: std::mem::take(&mut tags) },
                ));
            }
            continue;
        }
        let (form, tag) = line.split_once('\t').ok_or_else(|| DcstError::Parse {
            line: lineno + 1,
            message: "expected `form TAB tag`".into(),
        })?;
        forms.push(form.to_string());
        tags.push(tag.to_string());
    }
    if !forms.is_empty() {
        blocks.push((forms, TagSequence { scheme, tags }));
    }
    Ok(blocks)
}

/// Random valid single-rooted tree over `m` tokens, by rejection sampling
/// over head arrays.
pub fn random_tree<R: rand::Rng>(rng: &mut R, m: usize) -> Vec<usize> {
    assert!(m >= 1);
    loop {
        let root = rng.gen_range(0..m);
        let heads: Vec<usize> = (0..m)
            .map(|i| {
                if i == root {
                    0
                } else {
                    loop {
                        let h = rng.gen_range(1..=m);
                        if h != i + 1 {
                            break h;
                        }
                    }
                }
            })
            .collect();
        if validate_tree(&heads).is_ok() {
            return heads;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tree(heads: &[usize]) -> DepTree {
        DepTree::new(heads.to_vec(), None).unwrap()
    }

    #[test]
    fn validate_basic_cases() {
        assert!(validate_tree(&[0]).is_ok());
        assert!(validate_tree(&[2, 0, 2]).is_ok());
        match validate_tree(&[2, 1]) {
            Err(TreeViolation::NoRoot) => {}
            other => panic!("expected NoRoot, got {:?}", other),
        }
        assert!(matches!(
            validate_tree(&[0, 0]),
            Err(TreeViolation::MultipleRoots { .. })
        ));
        assert!(matches!(
            validate_tree(&[0, 3]),
            Err(TreeViolation::HeadOutOfRange { index: 1, head: 3 })
        ));
        // cycle hanging off a rooted tree
        assert!(matches!(
            validate_tree(&[0, 3, 2]),
            Err(TreeViolation::Cycle { .. })
        ));
    }

    /// Independent reachability check used to cross-validate `validate_tree`.
    fn brute_force_valid(heads: &[usize]) -> bool {
        let m = heads.len();
        if heads.iter().enumerate().any(|(i, &h)| h > m || h == i + 1) {
            return false;
        }
        if heads.iter().filter(|&&h| h == 0).count() != 1 {
            return false;
        }
        // BFS from ROOT over the child relation.
        let mut reached = vec![false; m + 1];
        reached[0] = true;
        let mut frontier = vec![0usize];
        while let Some(h) = frontier.pop() {
            for (i, &hh) in heads.iter().enumerate() {
                if hh == h && !reached[i + 1] {
                    reached[i + 1] = true;
                    frontier.push(i + 1);
                }
            }
        }
        reached.iter().all(|&r| r)
    }

    #[test]
    fn validate_matches_exhaustive_reachability() {
        for m in 1..=4usize {
            let total = (m + 1).pow(m as u32);
            for code in 0..total {
                let mut heads = Vec::with_capacity(m);
                let mut c = code;
                for _ in 0..m {
                    heads.push(c % (m + 1));
                    c /= m + 1;
                }
                assert_eq!(
                    validate_tree(&heads).is_ok(),
                    brute_force_valid(&heads),
                    "disagreement on {:?}",
                    heads
                );
            }
        }
    }

    #[test]
    fn children_and_depth() {
        let t = tree(&[2, 0, 2]);
        assert_eq!(children_count(&t, 2), 2);
        assert_eq!(children_count(&t, 1), 0);
        assert_eq!(depth_of(&t, 1), 2);
        assert_eq!(depth_of(&t, 2), 1);
        let chain = tree(&[0, 1, 2]);
        assert_eq!(
            (1..=3).map(|i| depth_of(&chain, i)).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
    }

    #[test]
    fn nc_tags() {
        assert_eq!(encode_nc(&tree(&[2, 0, 2])).tags, vec!["0", "2", "0"]);
        assert_eq!(encode_nc(&tree(&[0])).tags, vec!["0"]);
        assert_eq!(encode_nc(&tree(&[0, 1, 1, 1])).tags, vec!["3", "0", "0", "0"]);
    }

    #[test]
    fn dr_tags() {
        assert_eq!(encode_dr(&tree(&[2, 0, 2])).tags, vec!["2", "1", "2"]);
        assert_eq!(encode_dr(&tree(&[0, 1, 2])).tags, vec!["1", "2", "3"]);
        assert_eq!(encode_dr(&tree(&[0, 1, 1, 1])).tags, vec!["1", "2", "2", "2"]);
    }

    #[test]
    fn coarsening() {
        assert_eq!(coarsen_pos("NOUN"), "N");
        assert_eq!(coarsen_pos("PROPN"), "PN");
        assert_eq!(coarsen_pos("AUX"), "V");
        assert_eq!(coarsen_pos("PUNCT"), "PU");
        assert_eq!(coarsen_pos("SYM"), "PU");
        assert_eq!(coarsen_pos("DET"), "DET");
    }

    #[test]
    fn rpe_encode_examples() {
        let table = CoarsePosTable::default();
        let t = tree(&[2, 3, 0]);
        let tags = encode_rpe(&t, &["DET", "NOUN", "VERB"], &table);
        assert_eq!(tags.tags, vec!["N@1", "V@1", "ROOT@0"]);

        let t = tree(&[2, 0, 2]);
        let tags = encode_rpe(&t, &["PROPN", "VERB", "PROPN"], &table);
        assert_eq!(tags.tags, vec!["V@1", "ROOT@0", "V@-1"]);
    }

    #[test]
    fn rpe_decode_failure_falls_back_to_root() {
        let table = CoarsePosTable::default();
        let tags = TagSequence {
            scheme: Scheme::Rpe,
            tags: vec!["V@2".into(), "ROOT@0".into()],
        };
        let dec = decode_rpe(&tags, &["NOUN", "VERB"], &table);
        assert_eq!(dec.heads, vec![0, 0]);
        assert_eq!(dec.failed, vec![0]);
    }

    #[test]
    fn rpe_decode_does_not_validate() {
        let table = CoarsePosTable::default();
        let tags = TagSequence {
            scheme: Scheme::Rpe,
            tags: vec!["ROOT@0".into(); 3],
        };
        let dec = decode_rpe(&tags, &["NOUN", "VERB", "NOUN"], &table);
        assert_eq!(dec.heads, vec![0, 0, 0]);
        assert!(validate_tree(&dec.heads).is_err());
    }

    #[test]
    fn rpe_round_trip_random_trees() {
        let table = CoarsePosTable::default();
        let inventory = ["NOUN", "VERB", "DET", "ADJ", "ADP", "PROPN"];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            use rand::Rng;
            let m = rng.gen_range(1..=15);
            let heads = random_tree(&mut rng, m);
            let pos: Vec<&str> =
                (0..m).map(|_| inventory[rng.gen_range(0..inventory.len())]).collect();
            let t = DepTree::new(heads.clone(), None).unwrap();
            let tags = encode_rpe(&t, &pos, &table);
            for tag in &tags.tags {
                let (_, e) = tag.rsplit_once('@').unwrap();
                let e: i64 = e.parse().unwrap();
                assert!(e.unsigned_abs() <= (m as u64).saturating_sub(1));
            }
            let dec = decode_rpe(&tags, &pos, &table);
            assert!(dec.failed.is_empty());
            assert_eq!(dec.heads, heads);
        }
    }

    #[test]
    fn nc_sum_and_dr_parent_relation() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..1000 {
            use rand::Rng;
            let m = rng.gen_range(1..=12);
            let heads = random_tree(&mut rng, m);
            let t = DepTree::new(heads.clone(), None).unwrap();
            let nc: usize = encode_nc(&t).tags.iter().map(|s| s.parse::<usize>().unwrap()).sum();
            assert_eq!(nc, m - 1);
            let dr: Vec<usize> =
                encode_dr(&t).tags.iter().map(|s| s.parse().unwrap()).collect();
            assert_eq!(dr.iter().filter(|&&d| d == 1).count(), 1);
            for (i, &h) in heads.iter().enumerate() {
                if h != 0 {
                    assert_eq!(dr[i], dr[h - 1] + 1);
                }
            }
        }
    }

    #[test]
    fn tagged_round_trip() {
        use crate::conllu::parse_conllu;
        let text = "1\ta\t_\tNOUN\t_\t_\t2\tdep\t_\t_\n\
            2\tb\t_\tVERB\t_\t_\t0\troot\t_\t_\n\n";
        let sents = parse_conllu(text).unwrap();
        let t = DepTree::from_sentence(&sents[0]).unwrap();
        let tags = encode_nc(&t);
        let dumped = write_tagged(&[(&sents[0], &tags)]);
        assert_eq!(dumped, "a\t0\nb\t1\n\n");
        let parsed = parse_tagged(&dumped, Scheme::Nc).unwrap();
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0].0, vec!["a", "b"]);
        assert_eq!(parsed[0].1.tags, vec!["0", "1"]);
    }
}
