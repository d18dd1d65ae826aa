//! Analytic gradients against central differences of independent f64 forward passes.
//! Shared by the core gradient tests and the acceptance run.

use dasr_core::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-3;
const TOL: f64 = 1e-3;
pub const SEEDS: u64 = 20;

type Reference = dyn Fn(&[Vec<f64>]) -> Vec<f64>;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Keeps values at least `gap` away from zero so kinks are never straddled.
fn away_from_zero(rng: &mut ChaCha8Rng, n: usize, gap: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(gap..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect()
}

fn tensor(shape: &[usize], v: &[f64]) -> Tensor {
    Tensor::new(shape, v.iter().map(|&x| x as f32).collect())
        .unwrap()
        .with_grad()
}

/// Projects the op output onto random weights and compares d(w·out)/d(input)
/// from the tape with central differences of `reference`.
fn check(
    name: &str,
    seed: u64,
    inputs: &[(Vec<usize>, Vec<f64>)],
    differentiable: &[bool],
    build: impl Fn(&mut Tape, &[Var]) -> Var,
    reference: &Reference,
) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    // Round inputs to f32 so both sides see identical values.
    let values: Vec<Vec<f64>> = inputs
        .iter()
        .map(|(_, v)| v.iter().map(|&x| f64::from(x as f32)).collect())
        .collect();
    let out_len = reference(&values).len();
    let proj = rand_vec(&mut rng, out_len, -1.0, 1.0);

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .zip(&values)
        .map(|((s, _), v)| tape.leaf(tensor(s, v)))
        .collect();
    let out = build(&mut tape, &vars);
    if tape.value(out).numel() != out_len {
        return Err(format!("{name}: output size differs from the reference"));
    }
    let flat = tape.reshape(out, &[1, out_len]).unwrap();
    let w = tape.leaf(Tensor::new(&[1, out_len], proj.iter().map(|&x| x as f32).collect()).unwrap());
    let b = tape.leaf(Tensor::zeros(&[1]));
    let loss = tape.linear(flat, w, b).unwrap();
    tape.backward(loss).unwrap();

    let objective = |vals: &[Vec<f64>]| -> f64 { reference(vals).iter().zip(&proj).map(|(o, p)| o * p).sum() };
    for (k, var) in vars.iter().enumerate() {
        if !differentiable[k] {
            continue;
        }
        let analytic = tape
            .grad(*var)
            .ok_or_else(|| format!("{name}: no gradient for input {k}"))?
            .to_vec();
        for j in 0..values[k].len() {
            let mut plus = values.clone();
            plus[k][j] += STEP;
            let mut minus = values.clone();
            minus[k][j] -= STEP;
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * STEP);
            let a = f64::from(analytic[j]);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-2);
            if rel.is_nan() || rel >= TOL {
                return Err(format!(
                    "{name} seed {seed}: input {k}[{j}] analytic {a} numeric {numeric} (rel {rel:.2e})"
                ));
            }
        }
    }
    Ok(())
}

fn conv_ref(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    (n, c, h, wd): (usize, usize, usize, usize),
    (o, k): (usize, usize),
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * o * oh * ow];
    for ni in 0..n {
        for oi in 0..o {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = b[oi];
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xo * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x[((ni * c + ci) * h + iy as usize) * wd + ix as usize]
                                    * w[((oi * c + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                    out[((ni * o + oi) * oh + y) * ow + xo] = acc;
                }
            }
        }
    }
    out
}

pub fn conv2d() -> Result<(), String> {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, c, o) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
        let k = [1, 3, 5][rng.random_range(0..3)];
        let (h, w) = (rng.random_range(k..k + 5), rng.random_range(k..k + 5));
        let stride = rng.random_range(1..3);
        let pad = rng.random_range(0..=k / 2);
        let inputs = vec![
            (vec![n, c, h, w], rand_vec(&mut rng, n * c * h * w, -1.0, 1.0)),
            (vec![o, c, k, k], rand_vec(&mut rng, o * c * k * k, -1.0, 1.0)),
            (vec![o], rand_vec(&mut rng, o, -1.0, 1.0)),
        ];
        check(
            "conv2d",
            seed,
            &inputs,
            &[true, true, true],
            |t, v| t.conv2d(v[0], v[1], v[2], stride, pad).unwrap(),
            &move |v| conv_ref(&v[0], &v[1], &v[2], (n, c, h, w), (o, k), stride, pad),
        )?;
    }
    Ok(())
}

pub fn relu() -> Result<(), String> {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..40);
        let inputs = vec![(vec![n], away_from_zero(&mut rng, n, 0.01))];
        check("relu", seed, &inputs, &[true], |t, v| t.relu(v[0]), &|v| {
            v[0].iter().map(|x| x.max(0.0)).collect()
        })?;
    }
    Ok(())
}

pub fn maxpool2() -> Result<(), String> {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, c) = (rng.random_range(1..3), rng.random_range(1..3));
        let (h, w) = (2 * rng.random_range(1..5), 2 * rng.random_range(1..5));
        // Distinct values spaced well beyond the finite-difference step.
        let len = n * c * h * w;
        let mut vals: Vec<f64> = (0..len).map(|i| i as f64 * 0.05).collect();
        for i in (1..len).rev() {
            vals.swap(i, rng.random_range(0..=i));
        }
        let inputs = vec![(vec![n, c, h, w], vals)];
        check(
            "maxpool2",
            seed,
            &inputs,
            &[true],
            |t, v| t.maxpool2(v[0]).unwrap(),
            &move |v| {
                let (oh, ow) = (h / 2, w / 2);
                let mut out = Vec::new();
                for nc in 0..n * c {
                    for y in 0..oh {
                        for x in 0..ow {
                            let at = |dy: usize, dx: usize| v[0][(nc * h + 2 * y + dy) * w + 2 * x + dx];
                            out.push(at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1)));
                        }
                    }
                }
                out
            },
        )?;
    }
    Ok(())
}

pub fn linear() -> Result<(), String> {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, d, k) = (rng.random_range(1..5), rng.random_range(1..8), rng.random_range(1..6));
        let inputs = vec![
            (vec![n, d], rand_vec(&mut rng, n * d, -1.0, 1.0)),
            (vec![k, d], rand_vec(&mut rng, k * d, -1.0, 1.0)),
            (vec![k], rand_vec(&mut rng, k, -1.0, 1.0)),
        ];
        check(
            "linear",
            seed,
            &inputs,
            &[true, true, true],
            |t, v| t.linear(v[0], v[1], v[2]).unwrap(),
            &move |v| {
                let mut out = Vec::new();
                for i in 0..n {
                    for j in 0..k {
                        out.push(v[2][j] + (0..d).map(|e| v[0][i * d + e] * v[1][j * d + e]).sum::<f64>());
                    }
                }
                out
            },
        )?;
    }
    Ok(())
}

pub fn add_and_reshape() -> Result<(), String> {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (rng.random_range(1..5), rng.random_range(1..5));
        let inputs = vec![
            (vec![a, b], rand_vec(&mut rng, a * b, -1.0, 1.0)),
            (vec![a, b], rand_vec(&mut rng, a * b, -1.0, 1.0)),
        ];
        check(
            "add",
            seed,
            &inputs,
            &[true, true],
            |t, v| {
                let r = t.reshape(v[1], &[b, a]).unwrap();
                let r = t.reshape(r, &[a, b]).unwrap();
                t.add(v[0], r).unwrap()
            },
            &|v| v[0].iter().zip(&v[1]).map(|(x, y)| x + y).collect(),
        )?;
    }
    Ok(())
}

pub fn pixel_shuffle() -> Result<(), String> {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = rng.random_range(2..5);
        let (n, c, h, w) = (
            rng.random_range(1..3),
            rng.random_range(1..3),
            rng.random_range(1..4),
            rng.random_range(1..4),
        );
        let inputs = vec![(
            vec![n, c * r * r, h, w],
            rand_vec(&mut rng, n * c * r * r * h * w, -1.0, 1.0),
        )];
        check(
            "pixel_shuffle",
            seed,
            &inputs,
            &[true],
            |t, v| t.pixel_shuffle(v[0], r).unwrap(),
            &move |v| {
                let (oh, ow) = (h * r, w * r);
                let mut out = vec![0.0; n * c * oh * ow];
                for ni in 0..n {
                    for ci in 0..c {
                        for y in 0..oh {
                            for x in 0..ow {
                                let src_c = ci * r * r + (y % r) * r + x % r;
                                out[((ni * c + ci) * oh + y) * ow + x] =
                                    v[0][((ni * c * r * r + src_c) * h + y / r) * w + x / r];
                            }
                        }
                    }
                }
                out
            },
        )?;
    }
    Ok(())
}

fn softmax_ref(z: &[f64], k: usize) -> Vec<f64> {
    z.chunks(k)
        .flat_map(|row| {
            let m = row.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(move |v| v / s)
        })
        .collect()
}

pub fn softmax() -> Result<(), String> {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, k) = (rng.random_range(1..5), rng.random_range(2..7));
        let inputs = vec![(vec![n, k], rand_vec(&mut rng, n * k, -3.0, 3.0))];
        check(
            "softmax",
            seed,
            &inputs,
            &[true],
            |t, v| t.softmax(v[0]).unwrap(),
            &move |v| softmax_ref(&v[0], k),
        )?;
    }
    Ok(())
}

pub fn softmax_cross_entropy() -> Result<(), String> {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, k) = (rng.random_range(1..6), 5);
        let classes: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let mut onehot = vec![0.0f32; n * k];
        for (i, c) in classes.iter().enumerate() {
            onehot[i * k + c] = 1.0;
        }
        let target = Tensor::new(&[n, k], onehot).unwrap();
        let inputs = vec![(vec![n, k], rand_vec(&mut rng, n * k, -3.0, 3.0))];
        let classes2 = classes.clone();
        check(
            "cross_entropy",
            seed,
            &inputs,
            &[true],
            move |t, v| {
                let p = t.softmax(v[0]).unwrap();
                t.cross_entropy(p, target.clone()).unwrap()
            },
            &move |v| {
                let p = softmax_ref(&v[0], k);
                let s: f64 = classes2.iter().enumerate().map(|(i, c)| p[i * k + c].ln()).sum();
                vec![-s / (n * k) as f64]
            },
        )?;
    }
    Ok(())
}

pub fn masked_l1() -> Result<(), String> {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, d) = (rng.random_range(2..6), rng.random_range(1..10));
        let mut include: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        include[0] = true;
        let target = rand_vec(&mut rng, n * d, -1.0, 1.0);
        let diff = away_from_zero(&mut rng, n * d, 0.01);
        let pred: Vec<f64> = target.iter().zip(&diff).map(|(t, e)| t + e).collect();
        let target_t = Tensor::new(&[n, 1, d], target.iter().map(|&x| x as f32).collect()).unwrap();
        let inputs = vec![(vec![n, 1, d], pred)];
        let target_f: Vec<f64> = target.iter().map(|&x| f64::from(x as f32)).collect();
        let inc = include.clone();
        check(
            "masked_l1",
            seed,
            &inputs,
            &[true],
            move |t, v| t.masked_l1(v[0], target_t.clone(), include.clone()).unwrap(),
            &move |v| {
                let kept = inc.iter().filter(|&&m| m).count();
                let mut s = 0.0;
                for i in 0..n {
                    if inc[i] {
                        s += (0..d)
                            .map(|j| (v[0][i * d + j] - target_f[i * d + j]).abs())
                            .sum::<f64>();
                    }
                }
                vec![s / (kept * d) as f64]
            },
        )?;
    }
    Ok(())
}

pub fn composed_network() -> Result<(), String> {
    // conv → relu → pool → reshape → linear, all at once.
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, h) = (2, 6);
        let inputs = vec![
            (vec![1, 1, h, h], rand_vec(&mut rng, h * h, -1.0, 1.0)),
            (vec![c, 1, 3, 3], rand_vec(&mut rng, c * 9, -1.0, 1.0)),
            (vec![c], rand_vec(&mut rng, c, 0.5, 1.0)),
            (vec![3, c * 9], rand_vec(&mut rng, 3 * c * 9, -1.0, 1.0)),
            (vec![3], rand_vec(&mut rng, 3, -1.0, 1.0)),
        ];
        // Pre-activations near zero or pooled near-ties would make the
        // objective non-smooth; skip those draws.
        let pre = conv_ref(&inputs[0].1, &inputs[1].1, &inputs[2].1, (1, 1, h, h), (c, 3), 1, 1);
        if pre.iter().any(|v| v.abs() < 0.02) {
            continue;
        }
        check(
            "composed",
            seed,
            &inputs,
            &[true, true, true, true, true],
            |t, v| {
                let z = t.conv2d(v[0], v[1], v[2], 1, 1).unwrap();
                let z = t.relu(z);
                let z = t.maxpool2(z).unwrap();
                let z = t.reshape(z, &[1, c * 9]).unwrap();
                t.linear(z, v[3], v[4]).unwrap()
            },
            &move |v| {
                let a: Vec<f64> = conv_ref(&v[0], &v[1], &v[2], (1, 1, h, h), (c, 3), 1, 1)
                    .iter()
                    .map(|x| x.max(0.0))
                    .collect();
                let mut pooled = Vec::new();
                for ch in 0..c {
                    for y in 0..3 {
                        for x in 0..3 {
                            let at = |dy: usize, dx: usize| a[(ch * h + 2 * y + dy) * h + 2 * x + dx];
                            pooled.push(at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1)));
                        }
                    }
                }
                (0..3)
                    .map(|j| v[4][j] + (0..c * 9).map(|e| pooled[e] * v[3][j * c * 9 + e]).sum::<f64>())
                    .collect()
            },
        )?;
    }
    Ok(())
}

/// Every op check, by name.
pub type Check = fn() -> Result<(), String>;

pub const ALL: &[(&str, Check)] = &[
    ("conv2d", conv2d),
    ("relu", relu),
    ("maxpool2", maxpool2),
    ("linear", linear),
    ("add_and_reshape", add_and_reshape),
    ("pixel_shuffle", pixel_shuffle),
    ("softmax", softmax),
    ("softmax_cross_entropy", softmax_cross_entropy),
    ("masked_l1", masked_l1),
    ("composed_network", composed_network),
];
