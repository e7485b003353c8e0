//! Exact L2 nearest-neighbour index over training embeddings.

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Label;

const MAGIC: &[u8; 6] = b"GRIX1\0";
const KIND_CLASS: u8 = 0;
const KIND_VALUE: u8 = 1;

/// `sqrt(Σ (a_i - b_i)²)`.
pub fn l2_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Index(format!("dimension mismatch: {} vs {}", a.len(), b.len())));
    }
    Ok(sq_dist(a, b).sqrt())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Similarity exposed to the baselines: `1 / (1 + distance)`.
pub fn similarity(distance: f64) -> f64 {
    1.0 / (1.0 + distance)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndexEntry {
    pub key: Vec<f64>,
    pub example_id: u64,
    pub label: Label,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit<'a> {
    pub entry: &'a IndexEntry,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlatIndex {
    dim: usize,
    entries: Vec<IndexEntry>,
}

impl FlatIndex {
    pub fn build(keys: Vec<Vec<f64>>, payloads: Vec<(u64, Label)>) -> Result<Self> {
        if keys.len() != payloads.len() {
            return Err(Error::Index(format!(
                "{} keys for {} payloads",
                keys.len(),
                payloads.len()
            )));
        }
        let entries = keys
            .into_iter()
            .zip(payloads)
            .map(|(key, (example_id, label))| IndexEntry {
                key,
                example_id,
                label,
            })
            .collect();
        Self::from_entries(entries)
    }

    pub fn from_entries(entries: Vec<IndexEntry>) -> Result<Self> {
        let Some(first) = entries.first() else {
            return Err(Error::Index("cannot build an empty index".into()));
        };
        let dim = first.key.len();
        if dim == 0 {
            return Err(Error::Index("keys must have at least one dimension".into()));
        }
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if e.key.len() != dim {
                return Err(Error::Index(format!(
                    "entry {} has dimension {}, expected {dim}",
                    e.example_id,
                    e.key.len()
                )));
            }
            if !seen.insert(e.example_id) {
                return Err(Error::Index(format!("duplicate example id {}", e.example_id)));
            }
        }
        Ok(Self { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    /// The `min(k, len)` nearest entries, ascending by distance and then
    /// by example id.
    pub fn search(&self, query: &[f64], k: usize) -> Result<Vec<Hit<'_>>> {
        if query.len() != self.dim {
            return Err(Error::Index(format!(
                "query has dimension {}, index has {}",
                query.len(),
                self.dim
            )));
        }
        if k == 0 {
            return Err(Error::Index("k must be at least 1".into()));
        }
        let mut scored: Vec<(f64, u64, usize)> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (sq_dist(query, &e.key).sqrt(), e.example_id, i))
            .collect();
        let cmp = |a: &(f64, u64, usize), b: &(f64, u64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        Ok(scored
            .into_iter()
            .map(|(distance, _, i)| Hit {
                entry: &self.entries[i],
                distance,
            })
            .collect())
    }

    /// Permutes the labels of a random `fraction` of entries among
    /// themselves. Used to build deliberately noisy indexes.
    pub fn shuffle_labels(&mut self, fraction: f64, seed: u64) -> Result<usize> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::InvalidArgument(format!("fraction {fraction} outside [0, 1]")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = (fraction * self.entries.len() as f64).round() as usize;
        let mut chosen: Vec<usize> = (0..self.entries.len()).collect();
        chosen.shuffle(&mut rng);
        chosen.truncate(n);
        let mut labels: Vec<Label> = chosen.iter().map(|&i| self.entries[i].label).collect();
        labels.shuffle(&mut rng);
        for (&i, l) in chosen.iter().zip(labels) {
            self.entries[i].label = l;
        }
        Ok(n)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
        put(MAGIC)?;
        put(&(self.dim as u32).to_le_bytes())?;
        put(&(self.entries.len() as u64).to_le_bytes())?;
        for e in &self.entries {
            put(&e.example_id.to_le_bytes())?;
            match e.label {
                Label::Class(c) => {
                    put(&[KIND_CLASS])?;
                    put(&c.to_le_bytes())?;
                }
                Label::Value(v) => {
                    put(&[KIND_VALUE])?;
                    put(&v.to_le_bytes())?;
                }
            }
            for v in &e.key {
                put(&v.to_le_bytes())?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let fail = |msg: &str| Error::Format {
            path: path.to_path_buf(),
            msg: msg.to_string(),
        };
        let mut r = Reader { bytes: &bytes, pos: 0 };
        if r.take(MAGIC.len()).ok_or_else(|| fail("truncated header"))? != MAGIC {
            return Err(fail("bad magic, not an index file"));
        }
        let dim = r.u32().ok_or_else(|| fail("truncated header"))? as usize;
        let count = r.u64().ok_or_else(|| fail("truncated header"))? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 20));
        for i in 0..count {
            let truncated = || fail(&format!("truncated at record {i}"));
            let example_id = r.u64().ok_or_else(truncated)?;
            let label = match r.take(1).ok_or_else(truncated)?[0] {
                KIND_CLASS => Label::Class(r.u32().ok_or_else(truncated)?),
                KIND_VALUE => Label::Value(r.f64().ok_or_else(truncated)?),
                k => return Err(fail(&format!("unknown label kind {k} at record {i}"))),
            };
            let key = (0..dim)
                .map(|_| r.f64())
                .collect::<Option<Vec<_>>>()
                .ok_or_else(truncated)?;
            entries.push(IndexEntry {
                key,
                example_id,
                label,
            });
        }
        if r.pos != bytes.len() {
            return Err(fail("trailing bytes after last record"));
        }
        Self::from_entries(entries).map_err(|e| fail(&e.to_string()))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let out = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(out)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line() -> FlatIndex {
        FlatIndex::build(
            vec![vec![0.0], vec![10.0], vec![20.0]],
            vec![(0, Label::Class(0)), (1, Label::Class(1)), (2, Label::Value(2.5))],
        )
        .unwrap()
    }

    #[test]
    fn distance_basics() {
        assert_eq!(l2_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(l2_distance(&[1.5, -2.0], &[1.5, -2.0]).unwrap(), 0.0);
        assert!(l2_distance(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn search_small_line() {
        let idx = line();
        let hits = idx.search(&[1.0], 2).unwrap();
        let ids: Vec<u64> = hits.iter().map(|h| h.entry.example_id).collect();
        let d: Vec<f64> = hits.iter().map(|h| h.distance).collect();
        assert_eq!(ids, vec![0, 1]);
        assert_eq!(d, vec![1.0, 9.0]);
        assert_eq!(idx.search(&[1.0], 10).unwrap().len(), 3);
        assert!(idx.search(&[1.0, 2.0], 1).is_err());
    }

    #[test]
    fn ties_go_to_smaller_id() {
        let idx = FlatIndex::build(
            vec![vec![1.0], vec![-1.0]],
            vec![(7, Label::Class(0)), (3, Label::Class(1))],
        )
        .unwrap();
        let hits = idx.search(&[0.0], 1).unwrap();
        assert_eq!(hits[0].entry.example_id, 3);
    }

    #[test]
    fn build_rejects_bad_input() {
        assert!(FlatIndex::build(vec![], vec![]).is_err());
        assert!(FlatIndex::build(
            vec![vec![0.0], vec![1.0]],
            vec![(1, Label::Class(0)), (1, Label::Class(0))]
        )
        .is_err());
        assert!(FlatIndex::build(vec![vec![0.0], vec![1.0, 2.0]], vec![(0, Label::Class(0)), (1, Label::Class(0))]).is_err());
    }

    #[test]
    fn self_retrieval() {
        let idx = line();
        for e in idx.entries() {
            let hit = idx.search(&e.key, 1).unwrap()[0];
            assert_eq!((hit.entry.example_id, hit.distance), (e.example_id, 0.0));
        }
    }

    #[test]
    fn round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.grix");
        let idx = line();
        idx.save(&path).unwrap();
        assert_eq!(FlatIndex::load(&path).unwrap(), idx);
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(FlatIndex::load(&path), Err(Error::Format { .. })));
        bytes[0] = b'G';
        bytes.truncate(bytes.len() - 3);
        fs::write(&path, &bytes).unwrap();
        assert!(FlatIndex::load(&path).is_err());
    }

    #[test]
    fn shuffle_keeps_label_multiset() {
        let mut idx = FlatIndex::build(
            (0..10).map(|i| vec![i as f64]).collect(),
            (0..10).map(|i| (i, Label::Class(i as u32))).collect(),
        )
        .unwrap();
        assert_eq!(idx.shuffle_labels(0.3, 1).unwrap(), 3);
        let mut labels: Vec<usize> = idx.entries().iter().filter_map(|e| e.label.class()).collect();
        labels.sort();
        assert_eq!(labels, (0..10).collect::<Vec<_>>());
    }
}
