//! Reproducible class-disjoint train/val/test splits and their file format.
//!
//! Partition sizes come from largest-remainder apportionment of the ratios
//! (ties go to the earlier partition, i.e. toward train), then any empty
//! partition borrows one class from the largest. Classes are assigned by a
//! seeded Fisher-Yates shuffle of the lexicographically sorted labels.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::{seeded, shuffle};
use crate::types::ClassSplit;

pub const DEFAULT_RATIOS: [u32; 3] = [7, 1, 2];
const FILE_MAGIC: &str = "# fsaudio class split v1";

/// Partition sizes for `n` classes under `ratios`, every partition >= 1.
pub fn apportion(n: usize, ratios: [u32; 3]) -> Result<[usize; 3]> {
    if n < 3 {
        return Err(Error::TooFewClasses { needed: 3, found: n });
    }
    let total: u64 = ratios.iter().map(|&r| r as u64).sum();
    if ratios.contains(&0) {
        return Err(Error::invalid("split ratios must all be positive"));
    }
    // exact quotas as integer fractions: n * r / total
    let mut sizes = [0usize; 3];
    let mut rems = [0u64; 3];
    for i in 0..3 {
        let num = n as u64 * ratios[i] as u64;
        sizes[i] = (num / total) as usize;
        rems[i] = num % total;
    }
    let mut left = n - sizes.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| rems[b].cmp(&rems[a]).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    for i in 0..3 {
        if sizes[i] == 0 {
            let donor = (0..3).max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a))).unwrap();
            sizes[donor] -= 1;
            sizes[i] = 1;
        }
    }
    Ok(sizes)
}

pub fn generate_split(
    dataset_id: &str,
    class_labels: &BTreeSet<String>,
    ratios: [u32; 3],
    seed: u64,
) -> Result<ClassSplit> {
    let [n_train, n_val, _] = apportion(class_labels.len(), ratios)?;
    let mut labels: Vec<String> = class_labels.iter().cloned().collect();
    shuffle(&mut labels, &mut seeded(seed));
    let test = labels.split_off(n_train + n_val);
    let val = labels.split_off(n_train);
    ClassSplit::new(
        dataset_id,
        seed,
        labels.into_iter().collect(),
        val.into_iter().collect(),
        test.into_iter().collect(),
    )
}

pub fn render_split(split: &ClassSplit) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{FILE_MAGIC}");
    let _ = writeln!(out, "dataset_id={}", split.dataset_id);
    let _ = writeln!(out, "seed={}", split.seed);
    let _ = writeln!(out, "tool_version={}", env!("CARGO_PKG_VERSION"));
    for (name, set) in [("TRAIN", &split.train), ("VAL", &split.val), ("TEST", &split.test)] {
        let _ = writeln!(out, "[{name}]");
        for c in set {
            let _ = writeln!(out, "{c}");
        }
    }
    out
}

/// Parses a split file. When `expected` is given, the file must cover exactly
/// those classes.
pub fn parse_split(text: &str, expected: Option<&BTreeSet<String>>) -> Result<ClassSplit> {
    let mut dataset_id = None;
    let mut seed = None;
    let mut sections: [Vec<String>; 3] = Default::default();
    let mut current: Option<usize> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line {
            "[TRAIN]" => current = Some(0),
            "[VAL]" => current = Some(1),
            "[TEST]" => current = Some(2),
            _ => match current {
                Some(i) => sections[i].push(line.to_string()),
                None => {
                    let (k, v) = line
                        .split_once('=')
                        .ok_or_else(|| Error::BadSplit(format!("line {}: expected key=value", lineno + 1)))?;
                    match k {
                        "dataset_id" => dataset_id = Some(v.to_string()),
                        "seed" => seed = Some(v.parse().map_err(|_| Error::BadSplit(format!("bad seed `{v}`")))?),
                        _ => {}
                    }
                }
            },
        }
    }
    let to_set = |name: &str, v: &[String]| -> Result<BTreeSet<String>> {
        let set: BTreeSet<String> = v.iter().cloned().collect();
        if set.len() != v.len() {
            return Err(Error::BadSplit(format!("duplicate class in {name}")));
        }
        Ok(set)
    };
    let split = ClassSplit::new(
        dataset_id.ok_or_else(|| Error::BadSplit("missing dataset_id".into()))?,
        seed.ok_or_else(|| Error::BadSplit("missing seed".into()))?,
        to_set("TRAIN", &sections[0])?,
        to_set("VAL", &sections[1])?,
        to_set("TEST", &sections[2])?,
    )?;
    if let Some(expected) = expected {
        let all = split.all_classes();
        if let Some(missing) = expected.difference(&all).next() {
            return Err(Error::BadSplit(format!("class `{missing}` missing from split")));
        }
        if let Some(extra) = all.difference(expected).next() {
            return Err(Error::BadSplit(format!("unknown class `{extra}` in split")));
        }
    }
    Ok(split)
}

pub fn save_split(split: &ClassSplit, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, render_split(split)).map_err(|e| Error::io(path, e))
}

pub fn load_split(path: &Path, expected: Option<&BTreeSet<String>>) -> Result<ClassSplit> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_split(&text, expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize) -> BTreeSet<String> {
        (0..n).map(|i| format!("class{i:04}")).collect()
    }

    #[test]
    fn reference_sizes() {
        assert_eq!(apportion(50, DEFAULT_RATIOS).unwrap(), [35, 5, 10]);
        assert_eq!(apportion(10, DEFAULT_RATIOS).unwrap(), [7, 1, 2]);
        assert_eq!(apportion(41, DEFAULT_RATIOS).unwrap(), [29, 4, 8]);
        assert_eq!(apportion(3, DEFAULT_RATIOS).unwrap(), [1, 1, 1]);
        assert!(matches!(apportion(2, DEFAULT_RATIOS), Err(Error::TooFewClasses { .. })));
    }

    #[test]
    fn same_seed_same_split() {
        let a = generate_split("d", &labels(50), DEFAULT_RATIOS, 11).unwrap();
        let b = generate_split("d", &labels(50), DEFAULT_RATIOS, 11).unwrap();
        let c = generate_split("d", &labels(50), DEFAULT_RATIOS, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.sizes(), (35, 5, 10));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let split = generate_split("d", &labels(23), DEFAULT_RATIOS, 5).unwrap();
        let path = dir.path().join("s.txt");
        save_split(&split, &path).unwrap();
        assert_eq!(load_split(&path, Some(&labels(23))).unwrap(), split);
    }

    #[test]
    fn hand_edited_overlap_is_rejected() {
        let text = "dataset_id=d\nseed=1\n[TRAIN]\na\nb\n[VAL]\nc\n[TEST]\nb\n";
        let err = parse_split(text, None).unwrap_err();
        assert!(err.to_string().contains("`b`"), "{err}");
    }

    #[test]
    fn coverage_is_checked_on_load() {
        let text = "dataset_id=d\nseed=1\n[TRAIN]\na\n[VAL]\nb\n[TEST]\nc\n";
        let mut expected: BTreeSet<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        assert!(parse_split(text, Some(&expected)).is_ok());
        expected.insert("d".into());
        assert!(parse_split(text, Some(&expected)).is_err());
        assert!(parse_split("seed=1\n[TRAIN]\na\n", None).is_err());
    }

    #[test]
    fn shipped_esc50_split() {
        let text = include_str!("../data/esc50_split_seed0.txt");
        let classes = crate::datasets::esc50_class_labels();
        let split = parse_split(text, Some(&classes)).unwrap();
        assert_eq!(split.sizes(), (35, 5, 10));
        assert_eq!(split, generate_split("esc50", &classes, DEFAULT_RATIOS, 0).unwrap());
    }

    proptest::proptest! {
        #[test]
        fn split_partitions_cover_and_are_disjoint(n in 3usize..300, seed in 0u64..1000) {
            let all = labels(n);
            let s = generate_split("p", &all, DEFAULT_RATIOS, seed).unwrap();
            proptest::prop_assert_eq!(s.all_classes(), all);
            proptest::prop_assert!(s.check_disjoint().is_ok());
            proptest::prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), n);
        }
    }
}
