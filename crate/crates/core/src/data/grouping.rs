//! Feature groupings that define omics tokens.
//!
//! Text format, one group per line: `name<TAB>idx,idx,...` with 0-based
//! feature indices. Blank lines and lines starting with `#` are ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::Modality;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GroupingScheme {
    pub modality: Modality,
    pub num_features: usize,
    /// Selected feature indices per group, ascending.
    pub groups: Vec<Vec<usize>>,
    pub names: Vec<String>,
}

impl GroupingScheme {
    pub fn new(
        modality: Modality,
        num_features: usize,
        groups: Vec<Vec<usize>>,
        names: Vec<String>,
    ) -> Result<Self> {
        let mut groups = groups;
        for g in &mut groups {
            g.sort_unstable();
        }
        let s = Self {
            modality,
            num_features,
            groups,
            names,
        };
        s.validate()?;
        Ok(s)
    }

    /// `num_groups` contiguous runs whose sizes differ by at most one.
    pub fn contiguous(modality: Modality, num_features: usize, num_groups: usize) -> Result<Self> {
        if num_groups == 0 || num_groups > num_features {
            return Err(Error::config(
                "groups",
                format!("cannot split {num_features} features into {num_groups} groups"),
            ));
        }
        let groups = even_splits(num_features, num_groups)
            .into_iter()
            .map(|(start, len)| (start..start + len).collect())
            .collect();
        let names = (0..num_groups).map(|k| format!("{modality}_{k}")).collect();
        Self::new(modality, num_features, groups, names)
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    /// Binary membership vector of group `k` over the feature index.
    pub fn mask(&self, k: usize) -> Vec<bool> {
        let mut m = vec![false; self.num_features];
        for &i in &self.groups[k] {
            m[i] = true;
        }
        m
    }

    pub fn validate(&self) -> Result<()> {
        let field = format!("{} grouping", self.modality);
        let err = |message: String| Error::Validation {
            patient: None,
            field: Some(field.clone()),
            message,
        };
        if self.groups.is_empty() {
            return Err(err("no groups".into()));
        }
        if self.names.len() != self.groups.len() {
            return Err(err(format!(
                "{} names for {} groups",
                self.names.len(),
                self.groups.len()
            )));
        }
        let mut cover = vec![0usize; self.num_features];
        for (k, g) in self.groups.iter().enumerate() {
            if g.is_empty() {
                return Err(err(format!("group `{}` selects no features", self.names[k])));
            }
            if g.windows(2).any(|w| w[0] == w[1]) {
                return Err(err(format!("group `{}` repeats a feature", self.names[k])));
            }
            for &i in g {
                if i >= self.num_features {
                    return Err(err(format!(
                        "group `{}` references feature {i} of {}",
                        self.names[k], self.num_features
                    )));
                }
                cover[i] += 1;
            }
        }
        if self.modality.requires_partition() {
            if let Some(i) = cover.iter().position(|&c| c > 1) {
                return Err(err(format!("groups overlap at feature {i}; {} groups must partition", self.modality)));
            }
            if let Some(i) = cover.iter().position(|&c| c == 0) {
                return Err(err(format!("feature {i} belongs to no group")));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str, modality: Modality, num_features: usize) -> Result<Self> {
        let mut groups = Vec::new();
        let mut names = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, idx) = line.split_once('\t').ok_or_else(|| {
                Error::validation(format!("grouping line {}: expected `name<TAB>indices`", lineno + 1))
            })?;
            let idx = idx
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| {
                    s.trim().parse::<usize>().map_err(|e| {
                        Error::validation(format!("grouping line {}: bad index `{s}`: {e}", lineno + 1))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            names.push(name.to_string());
            groups.push(idx);
        }
        Self::new(modality, num_features, groups, names)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, g) in self.names.iter().zip(&self.groups) {
            let idx: Vec<String> = g.iter().map(usize::to_string).collect();
            let _ = writeln!(out, "{name}\t{}", idx.join(","));
        }
        out
    }

    pub fn read(path: &Path, modality: Modality, num_features: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, modality, num_features).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// `(start, len)` of `k` contiguous runs over `n` items; the first `n % k`
/// runs are one longer.
pub(crate) fn even_splits(n: usize, k: usize) -> Vec<(usize, usize)> {
    let base = n / k;
    let extra = n % k;
    let mut start = 0;
    (0..k)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let run = (start, len);
            start += len;
            run
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenomicLocus {
    pub chromosome: String,
    pub position: u64,
}

impl GenomicLocus {
    pub fn new(chromosome: impl Into<String>, position: u64) -> Self {
        Self {
            chromosome: chromosome.into(),
            position,
        }
    }

    fn is_sex_chromosome(&self) -> bool {
        let c = self.chromosome.trim_start_matches("chr").to_ascii_uppercase();
        c == "X" || c == "Y"
    }
}

/// Indices of loci not on chromosome X or Y.
pub fn retain_autosomes(loci: &[GenomicLocus]) -> Vec<usize> {
    (0..loci.len()).filter(|&i| !loci[i].is_sex_chromosome()).collect()
}

/// Natural chromosome order: numbered chromosomes numerically, then others
/// lexicographically.
fn chromosome_key(name: &str) -> (u64, String) {
    let stripped = name.trim_start_matches("chr");
    match stripped.parse::<u64>() {
        Ok(n) => (n, String::new()),
        Err(_) => (u64::MAX, stripped.to_string()),
    }
}

/// Group loci by chromosomal position into `num_clusters` clusters.
///
/// Clusters are apportioned to chromosomes in proportion to their feature
/// counts (largest remainder, ties to the earlier chromosome), with at least
/// one cluster per chromosome when `num_clusters` allows it and never more
/// clusters than features. Within a chromosome, features sorted by position
/// are cut into contiguous runs whose sizes differ by at most one.
/// Chromosomes left without a cluster (only when there are fewer clusters
/// than chromosomes) are pooled with the preceding chromosome.
pub fn cluster_by_position(
    modality: Modality,
    loci: &[GenomicLocus],
    num_clusters: usize,
) -> Result<GroupingScheme> {
    let n = loci.len();
    if num_clusters == 0 || num_clusters > n {
        return Err(Error::config(
            "num_clusters",
            format!("{num_clusters} clusters requested for {n} features"),
        ));
    }
    let mut by_chrom: BTreeMap<(u64, String), (String, Vec<usize>)> = BTreeMap::new();
    for (i, l) in loci.iter().enumerate() {
        by_chrom
            .entry(chromosome_key(&l.chromosome))
            .or_insert_with(|| (l.chromosome.clone(), Vec::new()))
            .1
            .push(i);
    }
    let chroms: Vec<(String, Vec<usize>)> = by_chrom
        .into_values()
        .map(|(name, mut idx)| {
            idx.sort_by_key(|&i| (loci[i].position, i));
            (name, idx)
        })
        .collect();
    let counts: Vec<usize> = chroms.iter().map(|(_, v)| v.len()).collect();
    let alloc = apportion(&counts, num_clusters);

    // Pool zero-allocation chromosomes into the preceding unit.
    let mut units: Vec<(String, Vec<usize>, usize)> = Vec::new();
    let mut pending: Option<(String, Vec<usize>)> = None;
    for ((name, idx), &a) in chroms.iter().zip(&alloc) {
        if a == 0 {
            match units.last_mut() {
                Some(u) => {
                    u.0.push('+');
                    u.0.push_str(name);
                    u.1.extend(idx);
                }
                None => {
                    let p = pending.get_or_insert_with(|| (String::new(), Vec::new()));
                    if !p.0.is_empty() {
                        p.0.push('+');
                    }
                    p.0.push_str(name);
                    p.1.extend(idx);
                }
            }
        } else {
            let (mut uname, mut uidx) = pending.take().unwrap_or_default();
            if !uname.is_empty() {
                uname.push('+');
            }
            uname.push_str(name);
            uidx.extend(idx);
            units.push((uname, uidx, a));
        }
    }

    let mut groups = Vec::with_capacity(num_clusters);
    let mut names = Vec::with_capacity(num_clusters);
    for (name, idx, a) in units {
        for (k, (start, len)) in even_splits(idx.len(), a).into_iter().enumerate() {
            groups.push(idx[start..start + len].to_vec());
            names.push(format!("{name}.{k}"));
        }
    }
    GroupingScheme::new(modality, n, groups, names)
}

/// Largest-remainder apportionment of `total` seats over `counts`, with a
/// floor of one seat per non-empty entry when seats suffice and a ceiling of
/// `counts[i]` seats per entry.
fn apportion(counts: &[usize], total: usize) -> Vec<usize> {
    let n: usize = counts.iter().sum();
    let quota: Vec<f64> = counts
        .iter()
        .map(|&c| total as f64 * c as f64 / n as f64)
        .collect();
    let mut alloc: Vec<usize> = counts.iter().map(|&c| total * c / n).collect();
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    // exact remainders via integer arithmetic: (total·c) mod n
    order.sort_by(|&a, &b| {
        ((total * counts[b]) % n)
            .cmp(&((total * counts[a]) % n))
            .then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        alloc[i] += 1;
    }

    let nonempty = counts.iter().filter(|&&c| c > 0).count();
    if total >= nonempty {
        while let Some(empty) = (0..counts.len()).find(|&i| counts[i] > 0 && alloc[i] == 0) {
            // take from the most over-served entry that can spare a seat
            let donor = (0..counts.len())
                .filter(|&i| alloc[i] > 1)
                .max_by(|&a, &b| {
                    (alloc[a] as f64 - quota[a])
                        .total_cmp(&(alloc[b] as f64 - quota[b]))
                        .then(b.cmp(&a))
                })
                .expect("seats >= non-empty entries leaves a donor");
            alloc[donor] -= 1;
            alloc[empty] += 1;
        }
    }
    while let Some(over) = (0..counts.len()).find(|&i| alloc[i] > counts[i]) {
        let taker = (0..counts.len())
            .filter(|&i| alloc[i] < counts[i])
            .max_by(|&a, &b| {
                (quota[a] - alloc[a] as f64)
                    .total_cmp(&(quota[b] - alloc[b] as f64))
                    .then(b.cmp(&a))
            })
            .expect("total <= feature count leaves capacity");
        alloc[over] -= 1;
        alloc[taker] += 1;
    }
    alloc
}
