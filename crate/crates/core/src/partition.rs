//! Stratified train/test splitting and client partitions (IID and Dirichlet).
//!
//! Functions take sample indices plus a label lookup `labels[sample_index]`
//! covering the whole dataset.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::{derive_seed, seeded_stream};

const SPLIT_DOMAIN: u64 = 0x7370_6c69_74;
const IID_DOMAIN: u64 = 0x6969_64;
const DIRICHLET_DOMAIN: u64 = 0x6469_7269;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheme {
    Iid,
    Dirichlet { alpha: f64 },
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Iid => f.write_str("iid"),
            Scheme::Dirichlet { alpha } => write!(f, "dirichlet({alpha})"),
        }
    }
}

/// Scheme name without parameters, as used in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    Iid,
    Dirichlet,
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "iid" => Ok(SchemeKind::Iid),
            "dirichlet" => Ok(SchemeKind::Dirichlet),
            _ => Err(Error::Config(format!("unknown partition scheme {s:?} (iid|dirichlet)"))),
        }
    }
}

fn by_class(indices: &[usize], labels: &[usize]) -> Result<BTreeMap<usize, Vec<usize>>> {
    let mut classes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in indices {
        let label = *labels
            .get(i)
            .ok_or_else(|| Error::Input(format!("sample index {i} has no label")))?;
        classes.entry(label).or_default().push(i);
    }
    Ok(classes)
}

/// Stratified split: each class is shuffled and `round(train_fraction · n)`
/// of its samples (kept within `1..n`) go to training. Both lists are sorted.
pub fn split_train_test(labels: &[usize], train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction {train_fraction} must lie strictly between 0 and 1"
        )));
    }
    let all: Vec<usize> = (0..labels.len()).collect();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (label, mut members) in by_class(&all, labels)? {
        let n = members.len();
        if n < 2 {
            return Err(Error::Input(format!(
                "class {label} has {n} sample(s); at least 2 are needed to split"
            )));
        }
        let mut rng = seeded_stream(derive_seed(seed, SPLIT_DOMAIN), label as u64);
        members.shuffle(&mut rng);
        let keep = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
        train.extend_from_slice(&members[..keep]);
        test.extend_from_slice(&members[keep..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Sample indices held by each client; `assignments[u]` belongs to client `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub assignments: Vec<Vec<usize>>,
    pub n_clients: usize,
    pub scheme: Scheme,
    pub seed: u64,
}

impl Partition {
    pub fn client(&self, id: usize) -> &[usize] {
        &self.assignments[id]
    }

    pub fn total(&self) -> usize {
        self.assignments.iter().map(Vec::len).sum()
    }

    /// True when every index of `expected` is held by exactly one client and nothing else is.
    pub fn covers_exactly(&self, expected: &[usize]) -> bool {
        let mut held: Vec<usize> = self.assignments.iter().flatten().copied().collect();
        let mut want = expected.to_vec();
        held.sort_unstable();
        want.sort_unstable();
        held == want
    }

    /// Per-client sample counts of each class present in `labels`.
    pub fn class_counts(&self, labels: &[usize], classes: usize) -> Vec<Vec<usize>> {
        self.assignments
            .iter()
            .map(|held| {
                let mut counts = vec![0; classes];
                for &i in held {
                    counts[labels[i]] += 1;
                }
                counts
            })
            .collect()
    }

    /// Mean, over non-empty clients, of the share held by each client's largest class.
    pub fn max_class_share(&self, labels: &[usize], classes: usize) -> f64 {
        let shares: Vec<f64> = self
            .class_counts(labels, classes)
            .into_iter()
            .filter_map(|counts| {
                let total: usize = counts.iter().sum();
                (total > 0).then(|| *counts.iter().max().unwrap() as f64 / total as f64)
            })
            .collect();
        if shares.is_empty() {
            0.0
        } else {
            shares.iter().sum::<f64>() / shares.len() as f64
        }
    }

    /// Writes `client_id<TAB>sample_index` lines under a header.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(out, "client_id\tsample_index").map_err(io)?;
        for (client, held) in self.assignments.iter().enumerate() {
            for i in held {
                writeln!(out, "{client}\t{i}").map_err(io)?;
            }
        }
        out.flush().map_err(io)
    }

    /// Reads the client lists of a partition TSV written by [`Partition::write_tsv`].
    pub fn read_tsv(path: &Path) -> Result<Vec<Vec<usize>>> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        if lines.next().map(str::trim_end) != Some("client_id\tsample_index") {
            return Err(Error::format("partition", "missing header line"));
        }
        let mut out: Vec<Vec<usize>> = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || Error::format("partition", format!("line {}", n + 2));
            let (c, i) = line.split_once('\t').ok_or_else(bad)?;
            let c: usize = c.trim().parse().map_err(|_| bad())?;
            let i: usize = i.trim().parse().map_err(|_| bad())?;
            if out.len() <= c {
                out.resize(c + 1, Vec::new());
            }
            out[c].push(i);
        }
        Ok(out)
    }
}

fn check_clients(n_clients: usize) -> Result<()> {
    if n_clients == 0 {
        return Err(Error::Config("n_clients must be at least 1".into()));
    }
    Ok(())
}

/// Deals each class's shuffled samples round-robin. The dealing position
/// carries over from one class to the next, so client totals also differ
/// by at most one.
pub fn partition_iid(indices: &[usize], labels: &[usize], n_clients: usize, seed: u64) -> Result<Partition> {
    check_clients(n_clients)?;
    let mut assignments = vec![Vec::new(); n_clients];
    let mut next = 0;
    for (label, mut members) in by_class(indices, labels)? {
        let mut rng = seeded_stream(derive_seed(seed, IID_DOMAIN), label as u64);
        members.shuffle(&mut rng);
        for i in members {
            assignments[next].push(i);
            next = (next + 1) % n_clients;
        }
    }
    Ok(Partition {
        assignments,
        n_clients,
        scheme: Scheme::Iid,
        seed,
    })
}

/// Integer counts summing to `total` from proportions, by largest remainder
/// (ties to the lower index).
fn largest_remainder(proportions: &[f64], total: usize) -> Vec<usize> {
    let exact: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &u in order.iter().take(total.saturating_sub(assigned)) {
        counts[u] += 1;
    }
    counts
}

/// Per class, draws client proportions from a symmetric Dirichlet(alpha),
/// rounds them to counts and deals the shuffled class in contiguous blocks
/// in client id order.
pub fn partition_dirichlet(indices: &[usize], labels: &[usize], n_clients: usize, alpha: f64, seed: u64) -> Result<Partition> {
    check_clients(n_clients)?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("alpha {alpha} must be finite and positive")));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::Config(format!("alpha {alpha}: {e}")))?;
    let mut assignments = vec![Vec::new(); n_clients];
    for (label, mut members) in by_class(indices, labels)? {
        let mut rng = seeded_stream(derive_seed(seed, DIRICHLET_DOMAIN), label as u64);
        members.shuffle(&mut rng);
        let draws: Vec<f64> = (0..n_clients).map(|_| gamma.sample(&mut rng)).collect();
        let sum: f64 = draws.iter().sum();
        let counts = if sum > 0.0 && sum.is_finite() {
            let p: Vec<f64> = draws.iter().map(|g| g / sum).collect();
            largest_remainder(&p, members.len())
        } else {
            let mut counts = vec![0; n_clients];
            counts[rng.random_range(0..n_clients)] = members.len();
            counts
        };
        let mut at = 0;
        for (client, count) in counts.into_iter().enumerate() {
            assignments[client].extend_from_slice(&members[at..at + count]);
            at += count;
        }
    }
    Ok(Partition {
        assignments,
        n_clients,
        scheme: Scheme::Dirichlet { alpha },
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn balanced(classes: usize, per_class: usize) -> Vec<usize> {
        (0..classes * per_class).map(|i| i / per_class).collect()
    }

    #[test]
    fn split_is_stratified() {
        let labels = balanced(6, 100);
        let (train, test) = split_train_test(&labels, 0.8, 1).unwrap();
        assert_eq!((train.len(), test.len()), (480, 120));
        for c in 0..6 {
            assert_eq!(train.iter().filter(|&&i| labels[i] == c).count(), 80);
        }
        let mut all = [train, test].concat();
        all.sort_unstable();
        assert_eq!(all, (0..600).collect::<Vec<_>>());
    }

    #[test]
    fn split_two_per_class() {
        let labels = balanced(3, 2);
        let (train, test) = split_train_test(&labels, 0.5, 9).unwrap();
        for c in 0..3 {
            assert_eq!(train.iter().filter(|&&i| labels[i] == c).count(), 1);
            assert_eq!(test.iter().filter(|&&i| labels[i] == c).count(), 1);
        }
    }

    #[test]
    fn split_errors() {
        assert!(matches!(split_train_test(&[0, 0, 1], 0.5, 0), Err(Error::Input(_))));
        assert!(matches!(split_train_test(&balanced(2, 4), 1.0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn iid_balance() {
        let labels = balanced(6, 833);
        let all: Vec<usize> = (0..labels.len()).collect();
        let p = partition_iid(&all, &labels, 10, 4).unwrap();
        assert!(p.covers_exactly(&all));
        let totals: Vec<usize> = p.assignments.iter().map(Vec::len).collect();
        assert!(totals.iter().all(|&t| (499..=500).contains(&t)), "{totals:?}");
        for c in 0..6 {
            let per: Vec<usize> = p.class_counts(&labels, 6).iter().map(|k| k[c]).collect();
            assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
        }
        let one = partition_iid(&all, &labels, 1, 4).unwrap();
        assert_eq!(one.client(0).len(), labels.len());
    }

    #[test]
    fn largest_remainder_ties_go_low() {
        assert_eq!(largest_remainder(&[0.5, 0.5], 3), vec![2, 1]);
        assert_eq!(largest_remainder(&[0.25; 4], 2), vec![1, 1, 0, 0]);
        assert_eq!(largest_remainder(&[0.0, 1.0], 5), vec![0, 5]);
    }

    #[test]
    fn dirichlet_skew_and_concentration() {
        let labels = balanced(6, 500);
        let all: Vec<usize> = (0..labels.len()).collect();
        let mean_share = |alpha: f64| {
            (0..100)
                .map(|s| partition_dirichlet(&all, &labels, 10, alpha, s).unwrap().max_class_share(&labels, 6))
                .sum::<f64>()
                / 100.0
        };
        assert!(mean_share(0.1) > 0.5);
        assert!(mean_share(0.1) > mean_share(100.0));

        let flat = partition_dirichlet(&all, &labels, 10, 1e6, 3).unwrap();
        for counts in flat.class_counts(&labels, 6) {
            let total: usize = counts.iter().sum();
            for k in counts {
                assert!((k as f64 / total as f64 - 1.0 / 6.0).abs() < 0.05);
            }
        }
    }

    #[test]
    fn errors_and_tsv() {
        let labels = balanced(2, 5);
        let all: Vec<usize> = (0..10).collect();
        assert!(partition_iid(&all, &labels, 0, 0).is_err());
        assert!(partition_dirichlet(&all, &labels, 3, 0.0, 0).is_err());
        assert!(partition_iid(&[11], &labels, 2, 0).is_err());

        let p = partition_dirichlet(&all, &labels, 3, 0.5, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.tsv");
        p.write_tsv(&path).unwrap();
        let mut back = Partition::read_tsv(&path).unwrap();
        back.resize(3, Vec::new());
        assert_eq!(back, p.assignments);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn partitions_cover_exactly_once(seed in any::<u64>(), clients in 1usize..12, alpha in 0.01f64..50.0, per in 2usize..40) {
            let labels = balanced(6, per);
            let (train, _) = split_train_test(&labels, 0.8, seed).unwrap();
            let iid = partition_iid(&train, &labels, clients, seed).unwrap();
            let dir = partition_dirichlet(&train, &labels, clients, alpha, seed).unwrap();
            prop_assert!(iid.covers_exactly(&train));
            prop_assert!(dir.covers_exactly(&train));
            prop_assert_eq!(dir.assignments.len(), clients);
            let totals: Vec<usize> = iid.assignments.iter().map(Vec::len).collect();
            prop_assert!(totals.iter().max().unwrap() - totals.iter().min().unwrap() <= 1);
            prop_assert_eq!(&dir, &partition_dirichlet(&train, &labels, clients, alpha, seed).unwrap());
        }
    }
}
