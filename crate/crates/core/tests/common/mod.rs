//! Independent brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn sse(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - mean) * (v - mean)).sum()
}

/// Random regression instance. Features sometimes sit on a coarse grid so
/// repeated values are exercised.
pub fn random_instance(r: &mut ChaCha8Rng, max_n: usize, max_d: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = r.random_range(1..=max_n);
    let d = r.random_range(1..=max_d);
    let grid = r.random_bool(0.3);
    let xs = (0..n)
        .map(|_| {
            (0..d)
                .map(|_| {
                    let v: f64 = r.random_range(-3.0..3.0);
                    if grid {
                        v.round()
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect();
    let ys = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
    (xs, ys)
}

#[derive(Debug, Clone)]
pub struct OracleSplit {
    pub leaf: usize,
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Every admissible split of every current leaf, gains from naive SSE.
pub fn enumerate_splits(xs: &[Vec<f64>], ys: &[f64], leaves: &[Vec<usize>], min_leaf: usize) -> Vec<OracleSplit> {
    let mut out = Vec::new();
    let d = xs[0].len();
    for (leaf, members) in leaves.iter().enumerate() {
        let parent: Vec<f64> = members.iter().map(|&i| ys[i]).collect();
        let parent_sse = sse(&parent);
        let raw_sq: f64 = parent.iter().map(|v| v * v).sum();
        for f in 0..d {
            let mut vals: Vec<f64> = members.iter().map(|&i| xs[i][f]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let t = (w[0] + w[1]) / 2.0;
                let t = if t >= w[1] { w[0] } else { t };
                let (l, r): (Vec<usize>, Vec<usize>) = members.iter().partition(|&&i| xs[i][f] <= t);
                if l.len() < min_leaf || r.len() < min_leaf {
                    continue;
                }
                let ls: Vec<f64> = l.iter().map(|&i| ys[i]).collect();
                let rs: Vec<f64> = r.iter().map(|&i| ys[i]).collect();
                let gain = parent_sse - sse(&ls) - sse(&rs);
                if gain > 1e-12 * raw_sq {
                    out.push(OracleSplit {
                        leaf,
                        feature: f,
                        threshold: t,
                        gain,
                    });
                }
            }
        }
    }
    out
}

/// Replays best-first growth by brute force and checks each split the tree
/// recorded is an optimum of the exhaustive enumeration. Returns the oracle's
/// final partition SSE.
pub fn check_greedy_sequence(
    xs: &[Vec<f64>],
    ys: &[f64],
    max_leaves: usize,
    min_leaf: usize,
    tree: &vbfi_core::RegressionTree,
) -> Result<f64, String> {
    let mut leaves: Vec<Vec<usize>> = vec![(0..ys.len()).collect()];
    let growth = tree.growth();
    let mut step = 0;
    while leaves.len() < max_leaves {
        let cands = enumerate_splits(xs, ys, &leaves, min_leaf);
        let Some(best) = cands.iter().map(|c| c.gain).max_by(f64::total_cmp) else {
            break;
        };
        let Some(rec) = growth.get(step) else {
            // The tree stopped; legitimate only if the best remaining gain is rounding noise.
            let scale: f64 = ys.iter().map(|v| v * v).sum::<f64>().max(1.0);
            if best <= 1e-9 * scale {
                break;
            }
            return Err(format!("tree stopped after {step} splits but gain {best} remains"));
        };
        let tol = 1e-9 * (1.0 + best.abs());
        let chosen = cands
            .iter()
            .filter(|c| c.feature == rec.feature && (c.threshold - rec.threshold).abs() <= 1e-12 * (1.0 + c.threshold.abs()))
            .max_by(|a, b| a.gain.total_cmp(&b.gain))
            .ok_or_else(|| format!("step {step}: split {:?} is not an admissible candidate", rec))?;
        if chosen.gain < best - tol {
            return Err(format!("step {step}: chose gain {} but brute force found {best}", chosen.gain));
        }
        if (chosen.gain - rec.gain).abs() > tol {
            return Err(format!("step {step}: recorded gain {} vs recomputed {}", rec.gain, chosen.gain));
        }
        let members = leaves.remove(chosen.leaf);
        let (l, r): (Vec<usize>, Vec<usize>) = members.iter().partition(|&&i| xs[i][chosen.feature] <= chosen.threshold);
        leaves.push(l);
        leaves.push(r);
        step += 1;
    }
    if step != growth.len() {
        return Err(format!("tree made {} splits, oracle {step}", growth.len()));
    }
    Ok(leaves
        .iter()
        .map(|m| sse(&m.iter().map(|&i| ys[i]).collect::<Vec<_>>()))
        .sum())
}

/// Net similarity of assigning every point to its most similar exemplar.
pub fn net_similarity_of(s: &[Vec<f64>], exemplars: &[usize]) -> f64 {
    (0..s.len())
        .map(|i| {
            if exemplars.contains(&i) {
                s[i][i]
            } else {
                exemplars.iter().map(|&e| s[i][e]).fold(f64::NEG_INFINITY, f64::max)
            }
        })
        .sum()
}

/// Best net similarity over all non-empty exemplar subsets.
pub fn best_exemplar_subset(s: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let n = s.len();
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for mask in 1u32..(1 << n) {
        let ex: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        let v = net_similarity_of(s, &ex);
        if v > best.0 {
            best = (v, ex);
        }
    }
    best
}

/// Points in tight groups (spread 0.2) whose centers are at least 10 apart,
/// with the planted group of every point.
pub fn planted_groups(r: &mut ChaCha8Rng, max_n: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let n = r.random_range(1..=max_n);
    let groups = r.random_range(1..=n.min(4));
    let centers: Vec<[f64; 2]> = (0..groups).map(|g| [12.0 * g as f64, 5.0 * (g % 2) as f64]).collect();
    let mut labels: Vec<usize> = (0..n).map(|i| if i < groups { i } else { r.random_range(0..groups) }).collect();
    use rand::seq::SliceRandom;
    labels.shuffle(r);
    let points = labels
        .iter()
        .map(|&g| vec![centers[g][0] + r.random_range(0.0..0.2), centers[g][1] + r.random_range(0.0..0.2)])
        .collect();
    (points, labels)
}

/// Two labelings describe the same partition.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    a.len() == b.len() && (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}
