//! Finite-difference cases for every tape primitive, grouped by kind.

use mambarate::diff::same_padding;
use rand::Rng;

use super::{check_op, random_tensor, rng};

/// `(primitive, relative error per input)`.
pub type Cases = Vec<(&'static str, Vec<f64>)>;

fn dims(seed: u64) -> (usize, usize, usize) {
    let mut r = rng(seed.wrapping_mul(7919));
    (r.gen_range(1..=8), r.gen_range(1..=8), r.gen_range(1..=8))
}

pub fn elementwise_binary(s: u64) -> Cases {
    let mut out = Cases::new();
    let (m, n, _) = dims(s);
    let mut r = rng(s);
    let a = random_tensor(&mut r, &[m, n], 2.0);
    let b = random_tensor(&mut r, &[m, n], 2.0);
    out.push(("add", check_op(&|g, v| g.add(v[0], v[1]), &[a.clone(), b.clone()], s)));
    out.push(("sub", check_op(&|g, v| g.sub(v[0], v[1]), &[a.clone(), b.clone()], s)));
    out.push(("mul", check_op(&|g, v| g.mul(v[0], v[1]), &[a.clone(), b.clone()], s)));
    out.push(("scale", check_op(&|g, v| g.scale(v[0], -1.7), std::slice::from_ref(&a), s)));
    let bias = random_tensor(&mut r, &[n], 1.0);
    out.push(("broadcast_add", check_op(&|g, v| g.broadcast_add(v[0], v[1]), &[a, bias], s)));
    out
}

pub fn activations(s: u64) -> Cases {
    let mut out = Cases::new();
    let (m, n, _) = dims(s);
    let x = random_tensor(&mut rng(s), &[m, n], 3.0);
    let xs = [x];
    out.push(("mish", check_op(&|g, v| g.mish(v[0]), &xs, s)));
    out.push(("silu", check_op(&|g, v| g.silu(v[0]), &xs, s)));
    out.push(("sigmoid", check_op(&|g, v| g.sigmoid(v[0]), &xs, s)));
    out.push(("softplus", check_op(&|g, v| g.softplus(v[0]), &xs, s)));
    out.push(("exp", check_op(&|g, v| g.exp(v[0]), &xs, s)));
    out.push(("tanh", check_op(&|g, v| g.tanh(v[0]), &xs, s)));
    out
}

pub fn matmul_and_layout_ops(s: u64) -> Cases {
    let mut out = Cases::new();
    let (m, k, n) = dims(s);
    let mut r = rng(s);
    let a = random_tensor(&mut r, &[m, k], 1.0);
    let b = random_tensor(&mut r, &[k, n], 1.0);
    out.push(("matmul", check_op(&|g, v| g.matmul(v[0], v[1]), &[a.clone(), b], s)));
    out.push(("transpose", check_op(&|g, v| g.transpose(v[0]), std::slice::from_ref(&a), s)));
    out.push(("reshape", check_op(&|g, v| g.reshape(v[0], vec![m * k]), std::slice::from_ref(&a), s)));
    for axis in 0..2 {
        out.push(("mean_over_axis", check_op(&|g, v| g.mean_over_axis(v[0], axis), std::slice::from_ref(&a), s)));
    }
    out.push(("sum", check_op(&|g, v| g.sum(v[0]), std::slice::from_ref(&a), s)));
    out.push(("mean", check_op(&|g, v| g.mean(v[0]), std::slice::from_ref(&a), s)));
    let start = r.gen_range(0..k);
    let len = r.gen_range(1..=k - start);
    out.push(("slice", check_op(&|g, v| g.slice(v[0], 1, start, len), std::slice::from_ref(&a), s)));
    let start = r.gen_range(0..m);
    out.push(("slice0", check_op(&|g, v| g.slice(v[0], 0, start, m - start), std::slice::from_ref(&a), s)));
    let c = random_tensor(&mut r, &[m, n], 1.0);
    out.push(("concat1", check_op(&|g, v| g.concat(&[v[0], v[1]], 1), &[a.clone(), c], s)));
    let d = random_tensor(&mut r, &[n, k], 1.0);
    out.push(("concat0", check_op(&|g, v| g.concat(&[v[0], v[1], v[0]], 0), &[a, d], s)));
    out
}

pub fn conv1d_variants(s: u64) -> Cases {
    let mut out = Cases::new();
    let (t, cin, cout) = dims(s);
    let mut r = rng(s);
    let kernel = [1, 3, 5][s as usize % 3];
    let x = random_tensor(&mut r, &[t, cin], 1.0);
    let w = random_tensor(&mut r, &[cout, cin, kernel], 1.0);
    let b = random_tensor(&mut r, &[cout], 1.0);
    let pad = same_padding(kernel);
    let errs = check_op(&|g, v| g.conv1d(v[0], v[1], v[2], 1, pad), &[x.clone(), w.clone(), b.clone()], s);
    out.push(("conv1d same", errs));
    if t + 2 >= kernel {
        let errs = check_op(&|g, v| g.conv1d(v[0], v[1], v[2], 2, (1, 1)), &[x.clone(), w, b], s);
        out.push(("conv1d stride 2", errs));
    }
    let dw = random_tensor(&mut r, &[cin, 4], 1.0);
    let db = random_tensor(&mut r, &[cin], 1.0);
    let errs = check_op(&|g, v| g.depthwise_conv1d_causal(v[0], v[1], v[2]), &[x, dw, db], s);
    out.push(("depthwise causal", errs));
    out
}

pub fn normalizations(s: u64) -> Cases {
    let mut out = Cases::new();
    let (m, n, _) = dims(s);
    let n = n.max(2);
    let mut r = rng(s);
    let x = random_tensor(&mut r, &[m, n], 2.0);
    let gain = random_tensor(&mut r, &[n], 1.5);
    let bias = random_tensor(&mut r, &[n], 1.0);
    let errs = check_op(&|g, v| g.layer_norm(v[0], v[1], v[2], 1e-5), &[x.clone(), gain.clone(), bias], s);
    out.push(("layer_norm", errs));
    let errs = check_op(&|g, v| g.rms_norm(v[0], v[1], 1e-5), &[x, gain], s);
    out.push(("rms_norm", errs));
    out
}

pub fn selective_scan(s: u64) -> Cases {
    let mut out = Cases::new();
    let mut r = rng(s);
    let t = r.gen_range(1..=8);
    let heads = r.gen_range(1..=3);
    let head_dim = r.gen_range(1..=4);
    let d_state = r.gen_range(1..=5);
    let x = random_tensor(&mut r, &[t, heads * head_dim], 1.0);
    // positive step sizes and negative decays, as the model produces them
    let delta = random_tensor(&mut r, &[t, heads], 1.0).map(|v| 0.05 + v.abs() * 0.5);
    let a = random_tensor(&mut r, &[heads], 1.0).map(|v| -0.5 - v.abs() * 0.5);
    let b = random_tensor(&mut r, &[t, d_state], 1.0);
    let c = random_tensor(&mut r, &[t, d_state], 1.0);
    let d = random_tensor(&mut r, &[heads], 1.0);
    let errs = check_op(
        &|g, v| g.selective_scan(v[0], v[1], v[2], v[3], v[4], v[5]),
        &[x, delta, a, b, c, d],
        s,
    );
    out.push(("selective_scan", errs));
    out
}

pub fn three_layer_composite(s: u64) -> Cases {
    let mut out = Cases::new();
    let mut r = rng(100 + s);
    let (t, cin, hid) = (r.gen_range(2..=8), r.gen_range(1..=6), r.gen_range(2..=6));
    let inputs = vec![
        random_tensor(&mut r, &[t, cin], 1.0),
        random_tensor(&mut r, &[hid, cin, 3], 0.7),
        random_tensor(&mut r, &[hid], 0.3),
        random_tensor(&mut r, &[hid], 1.0).map(|v| 1.0 + 0.2 * v),
        random_tensor(&mut r, &[hid], 0.2),
        random_tensor(&mut r, &[hid, hid], 0.7),
        random_tensor(&mut r, &[hid], 0.3),
        random_tensor(&mut r, &[hid, 3], 0.7),
    ];
    let errs = check_op(
        &|g, v| {
            let h = g.conv1d(v[0], v[1], v[2], 1, same_padding(3))?;
            let h = g.layer_norm(h, v[3], v[4], 1e-5)?;
            let h = g.mish(h)?;
            let z = g.matmul(h, v[5])?;
            let z = g.broadcast_add(z, v[6])?;
            let z = g.tanh(z)?;
            let gate = g.silu(z)?;
            let z = g.mul(z, gate)?;
            let z = g.rms_norm(z, v[3], 1e-5)?;
            let z = g.matmul(z, v[7])?;
            let z = g.softplus(z)?;
            let p = g.mean_over_axis(z, 0)?;
            let p = g.exp(p)?;
            g.sigmoid(p)
        },
        &inputs,
        s,
    );
    out.push(("composite", errs));
    out
}

pub fn all(s: u64) -> Cases {
    [
        elementwise_binary,
        activations,
        matmul_and_layout_ops,
        conv1d_variants,
        normalizations,
        selective_scan,
        three_layer_composite,
    ]
    .iter()
    .flat_map(|f| f(s))
    .collect()
}
