//! Test-only oracles shared by the integration suites.
#![allow(dead_code)]

use std::path::Path;

use mambarate::data_io::{embedding_path, write_embedding, write_manifest, EmbeddingSequence, RatingRecord};
use mambarate::diff::{DiffError, Graph, Tensor, Var};
use mambarate::model::{Bound, MambaRate, ModelConfig, ModelError};
use mambarate::rbf::{centers, RbfConfig};
use mambarate::train::Example;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod grad_cases;

pub const FD_STEP: f64 = 1e-3;
pub const GRAD_REL_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::from_vec(shape.to_vec(), data).unwrap()
}

/// Relative error between two gradient tensors: `|a - n| / max(|a|, |n|)` in the
/// 2-norm, with a floor on the denominator so all-zero gradients compare as equal.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(1e-10)
}

/// Fourth-order central differences of a scalar function of several tensors:
/// `(8 (f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h`.
pub fn numeric_gradients(f: &dyn Fn(&[Tensor<f64>]) -> f64, inputs: &[Tensor<f64>], h: f64) -> Vec<Vec<f64>> {
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut out = Vec::new();
    for i in 0..inputs.len() {
        let mut g = Vec::with_capacity(inputs[i].len());
        for k in 0..inputs[i].len() {
            let orig = work[i].data()[k];
            let mut at = |offset: f64| {
                work[i].data_mut()[k] = orig + offset;
                f(&work)
            };
            let near = at(h) - at(-h);
            let far = at(2.0 * h) - at(-2.0 * h);
            let d = 8.0 * near - far;
            work[i].data_mut()[k] = orig;
            g.push(d / (12.0 * h));
        }
        out.push(g);
    }
    out
}

pub type Builder<'a> = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var, DiffError> + 'a;

/// Builds `sum(weights * op(inputs))` and compares the tape's gradient for every
/// input against central differences. Returns one relative error per input.
pub fn check_op(op: &Builder<'_>, inputs: &[Tensor<f64>], seed: u64) -> Vec<f64> {
    let loss_of = |vals: &[Tensor<f64>], weights: Option<&Tensor<f64>>| -> (Graph<f64>, Vec<Var>, Var, Tensor<f64>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone())).collect();
        let out = op(&mut g, &vars).expect("op forward");
        let w = match weights {
            Some(w) => w.clone(),
            None => random_tensor(&mut rng(seed ^ 0xabcd), g.value(out).shape(), 1.0),
        };
        let wv = g.leaf(w.clone());
        let prod = g.mul(out, wv).unwrap();
        let loss = g.sum(prod).unwrap();
        (g, vars, loss, w)
    };
    let (g, vars, loss, weights) = loss_of(inputs, None);
    let grads = g.backward(loss).unwrap();
    let f = |vals: &[Tensor<f64>]| {
        let (g, _, loss, _) = loss_of(vals, Some(&weights));
        g.value(loss).item()
    };
    let numeric = numeric_gradients(&f, inputs, FD_STEP);
    vars.iter()
        .zip(&numeric)
        .map(|(v, n)| {
            let a = grads.get(*v).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; n.len()]);
            relative_error(&a, n)
        })
        .collect()
}

/// End-to-end gradient check of a model: the input and every parameter tensor
/// are FD-checked through `sum(w * forward(x))`. Returns `(name, error)` pairs.
pub fn model_gradient_errors(cfg: ModelConfig, frames: usize, seed: u64) -> Vec<(String, f64)> {
    let model = MambaRate::<f64>::new(cfg.clone(), seed).unwrap();
    let mut r = rng(seed.wrapping_add(1000));
    let x = random_tensor(&mut r, &[frames, cfg.input_dim], 1.0);
    // perturb zero-initialized tensors so no gradient path is trivially flat
    let mut inputs = vec![x];
    for t in model.params().tensors() {
        let mut t = t.clone();
        t.data_mut().iter_mut().for_each(|v| *v += r.gen_range(-0.1..0.1));
        inputs.push(t);
    }
    let names: Vec<String> = std::iter::once("input".to_string())
        .chain(model.params().names().iter().map(|s| s.to_string()))
        .collect();
    let op = |g: &mut Graph<f64>, vars: &[Var]| {
        let p = Bound::from_vars(vars[1..].to_vec());
        model.forward(g, &p, vars[0]).map_err(|e| match e {
            ModelError::Diff(d) => d,
            other => panic!("{other}"),
        })
    };
    names.into_iter().zip(check_op(&op, &inputs, seed)).collect()
}

/// 1-based ranks with ties averaged, by counting: `1 + #less + (#equal - 1) / 2`.
pub fn brute_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let less = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

/// Textbook Pearson: `sum(dx dy) / sqrt(sum(dx^2) sum(dy^2))`.
pub fn direct_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

pub fn brute_spearman(x: &[f64], y: &[f64]) -> f64 {
    direct_pearson(&brute_ranks(x), &brute_ranks(y))
}

/// Kendall tau by enumerating all pairs; returns `(tau_a, tau_b)`.
pub fn brute_kendall(x: &[f64], y: &[f64]) -> (f64, f64) {
    let (mut c, mut d, mut tx, mut ty) = (0.0, 0.0, 0.0, 0.0);
    let n = x.len();
    for i in 0..n {
        for j in i + 1..n {
            let sx = (x[i] - x[j]).signum() * f64::from(x[i] != x[j]);
            let sy = (y[i] - y[j]).signum() * f64::from(y[i] != y[j]);
            match (sx == 0.0, sy == 0.0) {
                (true, true) => {}
                (true, false) => tx += 1.0,
                (false, true) => ty += 1.0,
                (false, false) if sx == sy => c += 1.0,
                _ => d += 1.0,
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    ((c - d) / pairs, (c - d) / ((c + d + tx) * (c + d + ty)).sqrt())
}

/// Random scores; with `ties`, values are drawn from a 4-level grid.
pub fn random_scores(r: &mut ChaCha8Rng, n: usize, ties: bool) -> Vec<f64> {
    (0..n)
        .map(|_| {
            if ties {
                f64::from(r.gen_range(1..=4u8))
            } else {
                r.gen_range(1.0..5.0)
            }
        })
        .collect()
}

/// One synthetic dataset on disk: EMB1 files plus a manifest.
pub struct SyntheticData {
    pub embedding_dir: std::path::PathBuf,
    pub manifest: std::path::PathBuf,
    pub records: Vec<RatingRecord>,
}

/// `n` utterances of `dim`-dimensional random embeddings with 2 to 4 listener
/// ratings each, assigned round-robin to `systems` systems (none if 0).
pub fn write_dataset(root: &Path, n: usize, dim: usize, systems: usize, seed: u64) -> SyntheticData {
    let mut r = rng(seed);
    let embedding_dir = root.join("emb");
    std::fs::create_dir_all(&embedding_dir).unwrap();
    let mut records = Vec::new();
    for i in 0..n {
        let id = format!("utt{i:03}");
        let frames = r.gen_range(4..=9);
        let data: Vec<f32> = (0..frames * dim).map(|_| r.gen_range(-1.0f32..1.0)).collect();
        let emb = EmbeddingSequence::new(id.clone(), frames, dim, data).unwrap();
        write_embedding(&embedding_path(&embedding_dir, &id), &emb).unwrap();
        let listeners = r.gen_range(2..=4);
        records.push(RatingRecord {
            utterance_id: id,
            system_id: (systems > 0).then(|| format!("sys{}", i % systems)),
            sample_rate_hz: 16000,
            listener_ratings: (0..listeners).map(|_| f64::from(r.gen_range(1..=5u8))).collect(),
        });
    }
    let manifest = root.join("manifest.csv");
    write_manifest(std::fs::File::create(&manifest).unwrap(), &records).unwrap();
    SyntheticData {
        embedding_dir,
        manifest,
        records,
    }
}

/// Sixteen utterances with `T` in `[20, 50]`, uniform embeddings and ratings on the center grid.
pub fn overfit_examples(input_dim: usize, seed: u64) -> Vec<Example<f64>> {
    let mut r = rng(seed);
    let grid = centers::<f64>(&RbfConfig::default());
    (0..16)
        .map(|i| {
            let t = r.gen_range(20..=50);
            let data = (0..t * input_dim).map(|_| r.gen_range(-1.0..1.0)).collect();
            Example {
                utterance_id: format!("u{i}"),
                input: Tensor::from_vec(vec![t, input_dim], data).unwrap(),
                rating: grid[r.gen_range(0..grid.len())],
            }
        })
        .collect()
}
