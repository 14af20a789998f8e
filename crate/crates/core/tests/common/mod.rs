//! Reference implementations used only by tests.
#![allow(dead_code)]

use downscale::grid::{EnsembleSample, GridField};
use rand::Rng;

/// Zero-pads each `rows x cols` plane by `r` cells on every side.
fn pad(
    data: &[f64],
    channels: usize,
    rows: usize,
    cols: usize,
    r: usize,
) -> (Vec<f64>, usize, usize) {
    let (pr, pc) = (rows + 2 * r, cols + 2 * r);
    let mut out = vec![0.0; channels * pr * pc];
    for c in 0..channels {
        for y in 0..rows {
            for x in 0..cols {
                out[(c * pr + y + r) * pc + x + r] = data[(c * rows + y) * cols + x];
            }
        }
    }
    (out, pr, pc)
}

/// Same-padded cross-correlation, straight from the definition.
pub fn conv_oracle(
    input: &[f64],
    (channels, rows, cols): (usize, usize, usize),
    weights: &[f64],
    bias: &[f64],
    out_channels: usize,
    k: usize,
) -> Vec<f64> {
    let (p, pr, pc) = pad(input, channels, rows, cols, k / 2);
    let mut out = vec![0.0; out_channels * rows * cols];
    for o in 0..out_channels {
        for y in 0..rows {
            for x in 0..cols {
                let mut s = bias[o];
                for c in 0..channels {
                    for i in 0..k {
                        for j in 0..k {
                            let w = weights[((o * channels + c) * k + i) * k + j];
                            s += w * p[(c * pr + y + i) * pc + x + j];
                        }
                    }
                }
                out[(o * rows + y) * cols + x] = s;
            }
        }
    }
    out
}

/// Locally connected layer: a separate kernel and bias per output pixel.
pub fn local_oracle(
    input: &[f64],
    (channels, rows, cols): (usize, usize, usize),
    weights: &[f64],
    bias: &[f64],
    out_channels: usize,
    k: usize,
) -> Vec<f64> {
    let (p, pr, pc) = pad(input, channels, rows, cols, k / 2);
    let per_pixel = out_channels * channels * k * k;
    let mut out = vec![0.0; out_channels * rows * cols];
    for y in 0..rows {
        for x in 0..cols {
            let pix = y * cols + x;
            let w = &weights[pix * per_pixel..(pix + 1) * per_pixel];
            for o in 0..out_channels {
                let mut s = bias[pix * out_channels + o];
                for c in 0..channels {
                    for i in 0..k {
                        for j in 0..k {
                            s += w[((o * channels + c) * k + i) * k + j]
                                * p[(c * pr + y + i) * pc + x + j];
                        }
                    }
                }
                out[(o * rows + y) * cols + x] = s;
            }
        }
    }
    out
}

/// Solves `(XᵀX) β = Xᵀy` by Gaussian elimination with partial pivoting.
/// `rows` holds the design matrix row-major with `p` columns.
pub fn normal_equations(rows: &[f64], y: &[f64], p: usize) -> Vec<f64> {
    let mut a = vec![0.0; p * (p + 1)];
    for (r, &t) in rows.chunks(p).zip(y) {
        for i in 0..p {
            for j in 0..p {
                a[i * (p + 1) + j] += r[i] * r[j];
            }
            a[i * (p + 1) + p] += r[i] * t;
        }
    }
    for col in 0..p {
        let piv = (col..p)
            .max_by(|&i, &j| {
                a[i * (p + 1) + col]
                    .abs()
                    .total_cmp(&a[j * (p + 1) + col].abs())
            })
            .unwrap();
        for j in 0..=p {
            a.swap(col * (p + 1) + j, piv * (p + 1) + j);
        }
        for i in col + 1..p {
            let f = a[i * (p + 1) + col] / a[col * (p + 1) + col];
            for j in col..=p {
                a[i * (p + 1) + j] -= f * a[col * (p + 1) + j];
            }
        }
    }
    let mut beta = vec![0.0; p];
    for i in (0..p).rev() {
        let mut s = a[i * (p + 1) + p];
        for j in i + 1..p {
            s -= a[i * (p + 1) + j] * beta[j];
        }
        beta[i] = s / a[i * (p + 1) + i];
    }
    beta
}

/// Pooled design rows `[x_1 .. x_n, 1]` and targets, skipping missing cells.
pub fn pooled_design(samples: &[EnsembleSample]) -> (Vec<f64>, Vec<f64>, usize) {
    let n = samples[0].members.len();
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for s in samples {
        for c in 0..s.label.values.len() {
            if s.label.values[c].is_nan() || s.members.iter().any(|m| m.values[c].is_nan()) {
                continue;
            }
            rows.extend(s.members.iter().map(|m| m.values[c]));
            rows.push(1.0);
            y.push(s.label.values[c]);
        }
    }
    (rows, y, n + 1)
}

pub fn uniform_vec<R: Rng>(rng: &mut R, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(lo..hi)).collect()
}

/// A random pooled regression problem: `days` days of `rows x cols` fields
/// with `n` members and a noisy affine label.
pub fn random_regression<R: Rng>(
    rng: &mut R,
    n: usize,
    days: usize,
    rows: usize,
    cols: usize,
) -> Vec<EnsembleSample> {
    let a = uniform_vec(rng, n, -2.0, 2.0);
    let b = rng.random_range(-5.0..5.0);
    let start = chrono::NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
    (0..days)
        .map(|d| {
            let members: Vec<GridField> = (0..n)
                .map(|_| {
                    GridField::from_values(rows, cols, uniform_vec(rng, rows * cols, 0.0, 20.0))
                        .unwrap()
                })
                .collect();
            let label = (0..rows * cols)
                .map(|c| {
                    b + a
                        .iter()
                        .zip(&members)
                        .map(|(ai, m)| ai * m.values[c])
                        .sum::<f64>()
                        + rng.random_range(-1.0..1.0)
                })
                .collect();
            EnsembleSample::new(
                start + chrono::Days::new(d as u64),
                members,
                GridField::from_values(rows, cols, label).unwrap(),
            )
            .unwrap()
        })
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Encodes every 2^n outcome of n fair coin flips and counts those with at
/// least `k` heads.
pub fn enumerate_tail(n: usize, k: usize) -> u64 {
    (0u64..1 << n)
        .filter(|m| m.count_ones() as usize >= k)
        .count() as u64
}

pub fn bin() -> std::process::Command {
    std::process::Command::new(env!("CARGO_BIN_EXE_downscale"))
}

/// Runs the binary with `args` and returns (exit code, stdout).
pub fn run(args: &[&str]) -> (i32, String) {
    let out = bin().args(args).output().expect("spawn downscale");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
    )
}

/// Drives every subcommand once inside `dir` on a small synthetic dataset.
/// Returns each command's stdout and every file written, sorted by name. The
/// wall-clock column is stripped from training histories.
pub fn cli_pipeline(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let mut outputs = Vec::new();
    let mut step = |args: &[&str]| {
        let mut full = args.to_vec();
        full.extend(["--threads", "1"]);
        let (code, stdout) = run(&full);
        assert_eq!(code, 0, "failed: {full:?}");
        outputs.push((
            format!("{}:{}:stdout", outputs.len(), args[0]),
            stdout.into_bytes(),
        ));
    };
    let quick = [
        "--set",
        "max_epochs=3",
        "--set",
        "conv_layers=3",
        "--set",
        "batch_size=8",
    ];
    let data = p("data/manifest.json");
    let (model, board, best) = (p("model.mdl"), p("board.csv"), p("best.cfg"));
    step(&[
        "synth",
        "--out",
        &p("data"),
        "--days",
        "60",
        "--grid",
        "16x16",
        "--seed",
        "5",
    ]);
    step(&[&["train", "--data", &data, "--out", &model][..], &quick].concat());
    step(&[
        "eval",
        "--model",
        &model,
        "--data",
        &data,
        "--report",
        &p("nn.json"),
        "--dump-grids",
        &p("grids"),
    ]);
    step(&[
        "baseline",
        "--method",
        "mean",
        "--data",
        &data,
        "--report",
        &p("mean.json"),
    ]);
    step(&[
        "baseline",
        "--method",
        "linreg",
        "--data",
        &data,
        "--report",
        &p("ols.json"),
    ]);
    step(
        &[
            &[
                "search",
                "--data",
                &data,
                "--budget",
                "2",
                "--seed",
                "3",
                "--out",
                &best,
                "--leaderboard",
                &board,
            ][..],
            &quick,
        ]
        .concat(),
    );
    step(&[
        "compare",
        "--a",
        &p("nn.csv"),
        "--b",
        &p("ols.csv"),
        "--report",
        &p("cmp.json"),
        "--paired",
        &p("paired.csv"),
    ]);
    // the dumped grids cover the test split only
    let start = test_start(&data);
    step(&[
        "score-external",
        "--pred",
        &p("grids/predicted.grd"),
        "--data",
        &data,
        "--start",
        &start,
        "--report",
        &p("ext.json"),
    ]);

    let mut files = Vec::new();
    collect(dir, dir, &mut files);
    files.sort();
    for rel in files {
        let mut bytes = std::fs::read(dir.join(&rel)).unwrap();
        if rel.ends_with(".history.csv") {
            bytes = strip_last_column(&bytes);
        }
        outputs.push((rel, bytes));
    }
    outputs
}

fn test_start(manifest: &str) -> String {
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(manifest).unwrap()).unwrap();
    let val_end =
        chrono::NaiveDate::parse_from_str(m["split"]["val_end"].as_str().unwrap(), "%Y-%m-%d")
            .unwrap();
    (val_end + chrono::Days::new(1)).to_string()
}

fn collect(root: &std::path::Path, dir: &std::path::Path, out: &mut Vec<String>) {
    for e in std::fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            collect(root, &path, out);
        } else {
            out.push(
                path.strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned(),
            );
        }
    }
}

fn strip_last_column(bytes: &[u8]) -> Vec<u8> {
    let text = String::from_utf8_lossy(bytes);
    text.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
        .into_bytes()
}
