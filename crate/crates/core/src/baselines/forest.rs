//! Random forest: bootstrap-sampled CART trees grown with Gini impurity,
//! ceil(sqrt(D)) features drawn per node, midpoint thresholds, growth until
//! purity or fewer than two samples. Fully deterministic given the seed.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{rng, sub_seed};

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf {
        positive_fraction: f64,
        n_samples: u32,
    },
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub n_features: usize,
    pub seed: u64,
}

pub fn rf_train(
    inputs: &[Vec<f64>],
    labels: &[bool],
    n_trees: usize,
    seed: u64,
) -> Result<Forest> {
    let n = inputs.len();
    if n < 2 {
        return Err(Error::EmptyTrainingSet);
    }
    let d = inputs[0].len();
    if inputs.iter().any(|x| x.len() != d) {
        return Err(Error::Shape {
            context: "rf_train inputs".into(),
            expected: d.to_string(),
            actual: "ragged rows".into(),
        });
    }
    if labels.iter().all(|&y| y) || labels.iter().all(|&y| !y) {
        return Err(Error::SingleClass);
    }

    let mtry = (d as f64).sqrt().ceil() as usize;
    let trees: Vec<Tree> = (0..n_trees)
        .into_par_iter()
        .map(|t| {
            let tree_seed = sub_seed(seed, "tree", t as u64);
            let mut boot_rng = rng(sub_seed(tree_seed, "bootstrap", 0));
            let samples: Vec<usize> = (0..n).map(|_| boot_rng.gen_range(0..n)).collect();
            let mut builder = TreeBuilder {
                inputs,
                labels,
                mtry,
                tree_seed,
                nodes: Vec::new(),
                next_node_id: 0,
            };
            builder.grow(samples);
            Tree {
                nodes: builder.nodes,
            }
        })
        .collect();

    Ok(Forest {
        trees,
        n_features: d,
        seed,
    })
}

/// Mean of the per-tree leaf positive-fractions.
pub fn rf_predict(forest: &Forest, input: &[f64]) -> f64 {
    let sum: f64 = forest
        .trees
        .iter()
        .map(|tree| {
            let mut at = 0usize;
            loop {
                match &tree.nodes[at] {
                    Node::Leaf {
                        positive_fraction, ..
                    } => return *positive_fraction,
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        at = if input[*feature as usize] <= *threshold {
                            *left as usize
                        } else {
                            *right as usize
                        };
                    }
                }
            }
        })
        .sum();
    sum / forest.trees.len() as f64
}

struct TreeBuilder<'a> {
    inputs: &'a [Vec<f64>],
    labels: &'a [bool],
    mtry: usize,
    tree_seed: u64,
    nodes: Vec<Node>,
    /// Counter in construction (pre-order) order; seeds each node's feature
    /// draw independently of every other node's rng consumption.
    next_node_id: u64,
}

impl TreeBuilder<'_> {
    fn grow(&mut self, samples: Vec<usize>) -> u32 {
        let node_id = self.next_node_id;
        self.next_node_id += 1;
        let idx = self.nodes.len() as u32;

        let n = samples.len();
        let pos = samples.iter().filter(|&&i| self.labels[i]).count();
        if n < 2 || pos == 0 || pos == n {
            self.nodes.push(Node::Leaf {
                positive_fraction: pos as f64 / n as f64,
                n_samples: n as u32,
            });
            return idx;
        }

        let d = self.inputs[0].len();
        let mut node_rng = rng(sub_seed(self.tree_seed, "node", node_id));
        let candidates = sample_distinct(&mut node_rng, d, self.mtry);
        let best = self
            .best_split(&samples, &candidates)
            // All drawn features constant within the node: retry with the
            // full feature set before giving up.
            .or_else(|| self.best_split(&samples, &(0..d).collect::<Vec<_>>()));

        let Some((feature, threshold)) = best else {
            self.nodes.push(Node::Leaf {
                positive_fraction: pos as f64 / n as f64,
                n_samples: n as u32,
            });
            return idx;
        };

        // Placeholder; children indices are patched in below.
        self.nodes.push(Node::Split {
            feature: feature as u32,
            threshold,
            left: 0,
            right: 0,
        });
        let (left_samples, right_samples): (Vec<usize>, Vec<usize>) = samples
            .into_iter()
            .partition(|&i| self.inputs[i][feature] <= threshold);
        let left = self.grow(left_samples);
        let right = self.grow(right_samples);
        if let Node::Split {
            left: l, right: r, ..
        } = &mut self.nodes[idx as usize]
        {
            *l = left;
            *r = right;
        }
        idx
    }

    /// Lowest weighted-Gini split over the candidate features, thresholds at
    /// midpoints between consecutive sorted distinct values. First candidate
    /// wins ties; zero-gain splits are allowed (the node is impure and both
    /// children are non-empty), which lets the forest shatter XOR-like data.
    fn best_split(&self, samples: &[usize], candidates: &[usize]) -> Option<(usize, f64)> {
        let n = samples.len() as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        for &feature in candidates {
            let mut by_value: Vec<(f64, bool)> = samples
                .iter()
                .map(|&i| (self.inputs[i][feature], self.labels[i]))
                .collect();
            by_value.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

            let total_pos = by_value.iter().filter(|(_, y)| *y).count() as f64;
            let mut left_n = 0.0;
            let mut left_pos = 0.0;
            for w in 0..by_value.len() - 1 {
                left_n += 1.0;
                if by_value[w].1 {
                    left_pos += 1.0;
                }
                if by_value[w].0 == by_value[w + 1].0 {
                    continue;
                }
                let right_n = n - left_n;
                let right_pos = total_pos - left_pos;
                let gini = |count: f64, pos: f64| {
                    let p = pos / count;
                    1.0 - p * p - (1.0 - p) * (1.0 - p)
                };
                let weighted =
                    left_n / n * gini(left_n, left_pos) + right_n / n * gini(right_n, right_pos);
                if best.map_or(true, |(b, _, _)| weighted < b) {
                    let threshold = 0.5 * (by_value[w].0 + by_value[w + 1].0);
                    best = Some((weighted, feature, threshold));
                }
            }
        }
        best.map(|(_, feature, threshold)| (feature, threshold))
    }
}

/// Partial Fisher-Yates draw of `k` distinct indices from 0..d.
fn sample_distinct(r: &mut rand_chacha::ChaCha8Rng, d: usize, k: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..d).collect();
    let k = k.min(d);
    for i in 0..k {
        let j = r.gen_range(i..d);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

const MAGIC: &[u8; 4] = b"ARF1";
const VERSION: u32 = 1;

/// Binary forest file: magic "ARF1" | version u32 | n_trees u32 |
/// n_features u32 | seed u64, then per tree: n_nodes u32 and per node either
/// tag 0 (leaf: positive_fraction f64, n_samples u32) or tag 1 (split:
/// feature u32, threshold f64, left u32, right u32). Little-endian.
pub fn save_forest(path: &Path, forest: &Forest) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(forest.trees.len() as u32).to_le_bytes())?;
    w.write_all(&(forest.n_features as u32).to_le_bytes())?;
    w.write_all(&forest.seed.to_le_bytes())?;
    for tree in &forest.trees {
        w.write_all(&(tree.nodes.len() as u32).to_le_bytes())?;
        for node in &tree.nodes {
            match node {
                Node::Leaf {
                    positive_fraction,
                    n_samples,
                } => {
                    w.write_all(&[0u8])?;
                    w.write_all(&positive_fraction.to_le_bytes())?;
                    w.write_all(&n_samples.to_le_bytes())?;
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    w.write_all(&[1u8])?;
                    w.write_all(&feature.to_le_bytes())?;
                    w.write_all(&threshold.to_le_bytes())?;
                    w.write_all(&left.to_le_bytes())?;
                    w.write_all(&right.to_le_bytes())?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_forest(path: &Path) -> Result<Forest> {
    let mut r = BufReader::new(File::open(path)?);
    let bad = |msg: &str| Error::FeatureCache(format!("{}: {msg}", path.display()));

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    if read_u32(&mut r)? != VERSION {
        return Err(bad("unsupported version"));
    }
    let n_trees = read_u32(&mut r)? as usize;
    let n_features = read_u32(&mut r)? as usize;
    let mut buf8 = [0u8; 8];
    r.read_exact(&mut buf8)?;
    let seed = u64::from_le_bytes(buf8);

    let mut trees = Vec::with_capacity(n_trees);
    for _ in 0..n_trees {
        let n_nodes = read_u32(&mut r)? as usize;
        let mut nodes = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            let mut tag = [0u8; 1];
            r.read_exact(&mut tag)?;
            match tag[0] {
                0 => {
                    r.read_exact(&mut buf8)?;
                    let positive_fraction = f64::from_le_bytes(buf8);
                    let n_samples = read_u32(&mut r)?;
                    nodes.push(Node::Leaf {
                        positive_fraction,
                        n_samples,
                    });
                }
                1 => {
                    let feature = read_u32(&mut r)?;
                    r.read_exact(&mut buf8)?;
                    let threshold = f64::from_le_bytes(buf8);
                    let left = read_u32(&mut r)?;
                    let right = read_u32(&mut r)?;
                    nodes.push(Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    });
                }
                t => return Err(bad(&format!("bad node tag {t}"))),
            }
        }
        trees.push(Tree { nodes });
    }
    Ok(Forest {
        trees,
        n_features,
        seed,
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable() -> (Vec<Vec<f64>>, Vec<bool>) {
        let inputs: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let side = if i % 2 == 0 { -1.0 } else { 1.0 };
                vec![side * (2.0 + (i as f64) * 0.1), side]
            })
            .collect();
        let labels: Vec<bool> = (0..20).map(|i| i % 2 == 1).collect();
        (inputs, labels)
    }

    #[test]
    fn separable_data_gives_pure_leaves_and_hard_predictions() {
        let (inputs, labels) = separable();
        let forest = rf_train(&inputs, &labels, 50, 3).unwrap();
        for tree in &forest.trees {
            for node in &tree.nodes {
                if let Node::Leaf {
                    positive_fraction, ..
                } = node
                {
                    assert!(*positive_fraction == 0.0 || *positive_fraction == 1.0);
                }
            }
        }
        for (x, &y) in inputs.iter().zip(&labels) {
            let p = rf_predict(&forest, x);
            assert_eq!(p, f64::from(y), "x = {x:?}");
        }
    }

    #[test]
    fn xor_is_shattered_by_purity_grown_trees() {
        let inputs = vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
        ];
        let labels = vec![false, true, true, false];
        let forest = rf_train(&inputs, &labels, 200, 11).unwrap();
        for (x, &y) in inputs.iter().zip(&labels) {
            let p = rf_predict(&forest, x);
            assert_eq!(p > 0.5, y, "x = {x:?}, p = {p}");
        }
    }

    #[test]
    fn duplicate_feature_column_predicts_identically_when_seed_paired() {
        // Column 1 is constant junk in A and a copy of column 0 in B; with the
        // same seed, bootstraps and per-node feature draws coincide, and every
        // split that could use the copy behaves exactly like column 0.
        let base: Vec<f64> = (0..30).map(|i| (i as f64 * 0.7).sin() * 2.0).collect();
        let labels: Vec<bool> = base.iter().map(|&v| v > 0.3).collect();
        let a_inputs: Vec<Vec<f64>> = base.iter().map(|&v| vec![v, 0.0]).collect();
        let b_inputs: Vec<Vec<f64>> = base.iter().map(|&v| vec![v, v]).collect();
        let fa = rf_train(&a_inputs, &labels, 40, 5).unwrap();
        let fb = rf_train(&b_inputs, &labels, 40, 5).unwrap();
        for probe in [-2.0, -0.4, 0.0, 0.31, 1.7] {
            let pa = rf_predict(&fa, &[probe, 0.0]);
            let pb = rf_predict(&fb, &[probe, probe]);
            assert_eq!(pa, pb, "probe {probe}");
        }
    }

    #[test]
    fn adding_trees_moves_prediction_by_at_most_one_share() {
        let (inputs, labels) = separable();
        let probe = vec![0.1, -1.0];
        for n in [5usize, 10, 20] {
            let small = rf_train(&inputs, &labels, n, 9).unwrap();
            let big = rf_train(&inputs, &labels, n + 1, 9).unwrap();
            // Same seed derivation: the first n trees coincide.
            assert_eq!(small.trees[..], big.trees[..n]);
            let ps = rf_predict(&small, &probe);
            let pb = rf_predict(&big, &probe);
            assert!((ps - pb).abs() <= 1.0 / (n as f64 + 1.0) + 1e-12);
        }
    }

    #[test]
    fn single_class_is_an_error() {
        let inputs = vec![vec![1.0], vec![2.0]];
        assert!(matches!(
            rf_train(&inputs, &[true, true], 5, 1),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn forest_file_round_trip() {
        let (inputs, labels) = separable();
        let forest = rf_train(&inputs, &labels, 7, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rf.bin");
        save_forest(&path, &forest).unwrap();
        let back = load_forest(&path).unwrap();
        assert_eq!(back, forest);
    }
}
