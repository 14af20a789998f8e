//! One PASS/FAIL line per acceptance criterion. Exits nonzero on any failure.

mod common;

use std::path::Path;
use std::time::Instant;

use chrono::{Days, NaiveDate};
use downscale::baselines::{ensemble_mean, fit_linear, predict_linear, score_with};
use downscale::error::Error;
use downscale::grid::{compute_norm_stats, EnsembleSample, GridField, GridGeometry, NormMode};
use downscale::io::{decode_grd, decode_mdl, encode_grd, encode_mdl};
use downscale::net::conv::conv2d_preactivation;
use downscale::net::gradcheck::{run_gradcheck, GRADIENT_TOLERANCE};
use downscale::net::local::{local_preactivation, local_weight_count};
use downscale::net::{build_network, ensemble_mean_tensor, network_forward, Architecture, Variant};
use downscale::stats::{bayes_ratio_bound, binomial_upper_tail, sign_test};
use downscale::synth::{default_geometry, default_members, generate_dataset, TruthConfig};
use downscale::tensor::Tensor;
use downscale::train::{
    dataset_loss, physical_rmse, prepare_examples, quadratic_loss, train_model, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const IDENTITY_TOL: f64 = 1e-10;
const LAYER_ORACLE_TOL: f64 = 1e-12;
const OLS_REL_TOL: f64 = 1e-8;
const STEP0_REL_TOL: f64 = 1e-8;
const PARITY_TOL: f64 = 0.15;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_samples(
    rng: &mut ChaCha8Rng,
    n: usize,
    days: usize,
    rows: usize,
    cols: usize,
) -> Vec<EnsembleSample> {
    let start = NaiveDate::from_ymd_opt(2001, 1, 1).unwrap();
    (0..days)
        .map(|d| {
            let f = |rng: &mut ChaCha8Rng| {
                GridField::from_values(rows, cols, common::uniform_vec(rng, rows * cols, 0.0, 30.0))
                    .unwrap()
            };
            let members = (0..n).map(|_| f(rng)).collect();
            EnsembleSample::new(start + Days::new(d as u64), members, f(rng)).unwrap()
        })
        .collect()
}

fn identity_at_init() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let n = rng.random_range(1..=3);
        let (rows, cols) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let arch = Architecture {
            conv_layers: rng.random_range(1..=45),
            filters: 2 * n,
            local_layers: rng.random_range(0..=3),
            kernel: 3,
            variant: Variant::DeltaInit,
        };
        let samples = random_samples(&mut rng, n, 3, rows, cols);
        let stats = compute_norm_stats(&samples, NormMode::ScaleOnly).map_err(|e| e.to_string())?;
        let ex = prepare_examples(&samples, &stats).map_err(|e| e.to_string())?;
        let p = build_network(&arch, (n, rows, cols), 0.0, case, &mut rng)
            .map_err(|e| e.to_string())?;
        for e in &ex {
            let y = network_forward(&p, &e.input).map_err(|e| e.to_string())?;
            worst = worst.max(common::max_abs_diff(
                y.data(),
                ensemble_mean_tensor(&e.input).data(),
            ));
        }
    }
    check(
        worst < IDENTITY_TOL,
        format!("100 inputs, max |out - mean| = {worst:.2e} (tol {IDENTITY_TOL:e})"),
    )
}

fn gradients() -> Outcome {
    let r = run_gradcheck(2024, 200).map_err(|e| e.to_string())?;
    check(
        r.passed(),
        format!(
            "200 networks, {} parameters, max rel err {:.2e} (tol {GRADIENT_TOLERANCE:e}), worst {}",
            r.parameters_checked, r.max_relative_error, r.worst_case
        ),
    )
}

fn oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut layer_err: f64 = 0.0;
    for case in 0..50 {
        let shape = (
            rng.random_range(1..=3),
            rng.random_range(1..=7),
            rng.random_range(1..=7),
        );
        let out = rng.random_range(1..=3);
        let k = [1, 3, 5][rng.random_range(0..3)];
        let size = shape.0 * shape.1 * shape.2;
        let x = common::uniform_vec(&mut rng, size, -1.0, 1.0);
        let input = Tensor::from_vec(shape.0, shape.1, shape.2, x.clone()).unwrap();
        let err = if case % 2 == 0 {
            let w = common::uniform_vec(&mut rng, out * shape.0 * k * k, -1.0, 1.0);
            let b = common::uniform_vec(&mut rng, out, -1.0, 1.0);
            let got = conv2d_preactivation(&input, &w, &b, out, k).map_err(|e| e.to_string())?;
            common::max_abs_diff(got.data(), &common::conv_oracle(&x, shape, &w, &b, out, k))
        } else {
            let w = common::uniform_vec(
                &mut rng,
                local_weight_count(shape.0, out, k, shape.1, shape.2),
                -1.0,
                1.0,
            );
            let b = common::uniform_vec(&mut rng, out * shape.1 * shape.2, -1.0, 1.0);
            let got = local_preactivation(&input, &w, &b, out, k).map_err(|e| e.to_string())?;
            common::max_abs_diff(got.data(), &common::local_oracle(&x, shape, &w, &b, out, k))
        };
        layer_err = layer_err.max(err);
    }
    let mut ols_err: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.random_range(1..=5);
        let days = rng.random_range(2..=6);
        let samples = common::random_regression(&mut rng, n, days, 6, 6);
        let model = fit_linear(&samples).map_err(|e| e.to_string())?;
        let (rows, y, p) = common::pooled_design(&samples);
        let beta = common::normal_equations(&rows, &y, p);
        for (a, b) in model
            .coefficients
            .iter()
            .chain([&model.intercept])
            .zip(&beta)
        {
            ols_err = ols_err.max((a - b).abs() / b.abs().max(1.0));
        }
    }
    check(
        layer_err < LAYER_ORACLE_TOL && ols_err < OLS_REL_TOL,
        format!(
            "50 layer cases max err {layer_err:.2e} (tol {LAYER_ORACLE_TOL:e}); 20 OLS problems max rel err {ols_err:.2e} (tol {OLS_REL_TOL:e})"
        ),
    )
}

struct Run {
    mean: f64,
    ols: f64,
    nn: f64,
    nn_val: f64,
}

fn synthetic_config(seed: u64, variant: Variant) -> TrainConfig {
    TrainConfig {
        learning_rate: 0.05,
        lambda: 1e-5,
        batch_size: 16,
        max_epochs: 30,
        patience: 10,
        arch: Architecture {
            conv_layers: 4,
            filters: 8,
            local_layers: 1,
            kernel: 3,
            variant,
        },
        seed,
        ..TrainConfig::default()
    }
}

fn synthetic_run(seed: u64, variant: Variant) -> Result<Run, Error> {
    let synth = generate_dataset(
        default_geometry(32, 32),
        400,
        &default_members(4),
        &TruthConfig::default(),
        seed,
    )?;
    let data = synth.to_dataset(NormMode::CenterScale)?;
    let s = data.splits();
    let out = train_model(
        s.train,
        s.val,
        &data.stats,
        &synthetic_config(seed, variant),
    )?;
    let test_ex = prepare_examples(s.test, &data.stats)?;
    let nn = physical_rmse(&out.params, &test_ex, &data.stats)?;
    let mean = score_with("mean", s.test, |d| ensemble_mean(&d.members))?.rmse_mm;
    let fit_days: Vec<EnsembleSample> = s.train.iter().chain(s.val).cloned().collect();
    let model = fit_linear(&fit_days)?;
    let ols = score_with("linreg", s.test, |d| predict_linear(&model, &d.members))?.rmse_mm;
    Ok(Run {
        mean,
        ols,
        nn,
        nn_val: out.best_val_rmse,
    })
}

fn ordering(runs: &[Run]) -> Outcome {
    let good = runs
        .iter()
        .filter(|r| r.nn < r.ols && r.ols < r.mean)
        .count();
    let detail = runs
        .iter()
        .enumerate()
        .map(|(i, r)| {
            format!(
                "seed {}: nn {:.2} ols {:.2} mean {:.2}",
                i + 1,
                r.nn,
                r.ols,
                r.mean
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    check(good >= 4, format!("{good}/5 seeds ordered [{detail}]"))
}

fn significance() -> Outcome {
    let mut mismatches = 0;
    for n in 1..=20usize {
        for wins in 0..=n {
            let pairs: Vec<(f64, f64)> = (0..n)
                .map(|i| if i < wins { (0.0, 1.0) } else { (1.0, 0.0) })
                .collect();
            let p = sign_test(&pairs).map_err(|e| e.to_string())?.p_value;
            let exact = common::enumerate_tail(n, wins) as f64 / (1u64 << n) as f64;
            if p != exact || binomial_upper_tail(n, wins) != exact {
                mismatches += 1;
            }
        }
    }
    let r = bayes_ratio_bound(0.001, 0.95)
        .map_err(|e| e.to_string())?
        .ratio;
    check(
        mismatches == 0 && r == 50.0,
        format!("230 (wins, n) pairs, {mismatches} mismatches; ratio bound {r}"),
    )
}

fn init_advantage() -> Outcome {
    let mut worst_rel: f64 = 0.0;
    let mut worse_than_random = 0;
    for seed in 0..10 {
        let synth = generate_dataset(
            default_geometry(16, 16),
            60,
            &default_members(4),
            &TruthConfig::default(),
            600 + seed,
        )
        .map_err(|e| e.to_string())?;
        let data = synth
            .to_dataset(NormMode::ScaleOnly)
            .map_err(|e| e.to_string())?;
        let ex = prepare_examples(data.splits().train, &data.stats).map_err(|e| e.to_string())?;
        let shape = ex[0].input.shape();
        let loss = |variant| -> Result<f64, Error> {
            let arch = Architecture {
                variant,
                ..synthetic_config(seed, variant).arch
            };
            let p = build_network(
                &arch,
                shape,
                0.0,
                seed,
                &mut ChaCha8Rng::seed_from_u64(seed),
            )?;
            dataset_loss(&p, &ex)
        };
        let delta = loss(Variant::DeltaInit).map_err(|e| e.to_string())?;
        let random = loss(Variant::RandomInit).map_err(|e| e.to_string())?;
        let pred: Vec<f64> = ex
            .iter()
            .flat_map(|e| ensemble_mean_tensor(&e.input).data().to_vec())
            .collect();
        let label: Vec<f64> = ex.iter().flat_map(|e| e.label.iter().copied()).collect();
        let baseline = quadratic_loss(&pred, &label)
            .map_err(|e| e.to_string())?
            .value;
        worst_rel = worst_rel.max((delta - baseline).abs() / baseline);
        if delta > random {
            worse_than_random += 1;
        }
    }
    check(
        worse_than_random == 0 && worst_rel < STEP0_REL_TOL,
        format!(
            "10 datasets, delta > random in {worse_than_random}; max |delta - mean| / mean = {worst_rel:.2e} (tol {STEP0_REL_TOL:e})"
        ),
    )
}

fn parity(delta: &[Run], resnet: &[Run]) -> Outcome {
    let gaps: Vec<f64> = delta
        .iter()
        .zip(resnet)
        .map(|(a, b)| (a.nn_val - b.nn_val).abs() / a.nn_val.min(b.nn_val))
        .collect();
    let detail = delta
        .iter()
        .zip(resnet)
        .zip(&gaps)
        .map(|((a, b), g)| {
            format!(
                "delta {:.2} resnet {:.2} gap {:.1}%",
                a.nn_val,
                b.nn_val,
                100.0 * g
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    check(
        gaps.iter().all(|g| *g <= PARITY_TOL),
        format!("3 seeds [{detail}] (tol {:.0}%)", 100.0 * PARITY_TOL),
    )
}

fn formats() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let path = Path::new("mem");
    let mut bad = 0;
    for i in 0..100 {
        let (t, rows, cols) = (
            rng.random_range(1..=4),
            rng.random_range(1..=9),
            rng.random_range(1..=9),
        );
        let g = GridGeometry {
            rows,
            cols,
            lat0: rng.random_range(-90.0..90.0),
            lon0: rng.random_range(-180.0..180.0),
            dlat: 0.25,
            dlon: -0.5,
        };
        let fields: Vec<GridField> = (0..t)
            .map(|_| {
                let mut v = common::uniform_vec(&mut rng, rows * cols, 0.0, 500.0);
                v[0] = f64::NAN;
                GridField::new(g, v, format!("f{i}")).unwrap()
            })
            .collect();
        let back = decode_grd(&encode_grd(&fields).map_err(|e| e.to_string())?, path)
            .map_err(|e| e.to_string())?;
        let same = fields.iter().zip(&back).all(|(a, b)| {
            a.geometry() == b.geometry()
                && a.values
                    .iter()
                    .zip(&b.values)
                    .all(|(x, y)| (x.is_nan() && y.is_nan()) || (*x as f32) as f64 == *y)
        });
        let arch = Architecture {
            conv_layers: rng.random_range(1..=5),
            filters: 4,
            local_layers: rng.random_range(0..=2),
            kernel: 3,
            variant: [Variant::DeltaInit, Variant::Resnet, Variant::RandomInit][i % 3],
        };
        let p = build_network(&arch, (2, rows, cols), 1e-3, i as u64, &mut rng)
            .map_err(|e| e.to_string())?;
        let q = decode_mdl(&encode_mdl(&p).map_err(|e| e.to_string())?, path)
            .map_err(|e| e.to_string())?;
        if !same || back.len() != t || q.layers != p.layers || q.input_shape != p.input_shape {
            bad += 1;
        }
    }

    let grd = encode_grd(&[GridField::from_values(3, 3, vec![1.0; 9]).unwrap()]).unwrap();
    let mdl =
        encode_mdl(&build_network(&Architecture::default(), (2, 3, 3), 0.0, 0, &mut rng).unwrap())
            .unwrap();
    let mut classified = 0;
    let mut cases = 0;
    for bytes in [&grd, &mdl] {
        let decode = |b: &[u8]| -> Result<(), Error> {
            if bytes == &grd {
                decode_grd(b, path).map(|_| ())
            } else {
                decode_mdl(b, path).map(|_| ())
            }
        };
        let mut magic = bytes.clone();
        magic[1] ^= 0xff;
        let mut version = bytes.clone();
        version[4..8].copy_from_slice(&7u32.to_le_bytes());
        let mut trailing = bytes.clone();
        trailing.extend_from_slice(&[0; 3]);
        let checks: [(Vec<u8>, fn(&Error) -> bool); 5] = [
            (magic, |e| matches!(e, Error::BadMagic { .. })),
            (version, |e| {
                matches!(e, Error::UnsupportedVersion { version: 7, .. })
            }),
            (bytes[..bytes.len() - 5].to_vec(), |e| {
                matches!(e, Error::Truncated { .. })
            }),
            (bytes[..6].to_vec(), |e| {
                matches!(e, Error::Truncated { .. })
            }),
            (trailing, |e| matches!(e, Error::Corrupt { .. })),
        ];
        for (b, want) in checks {
            cases += 1;
            if decode(&b).as_ref().err().is_some_and(want) {
                classified += 1;
            }
        }
    }
    check(
        bad == 0 && classified == cases,
        format!("100 GRD1 + 100 MDL1 round trips, {bad} mismatched; {classified}/{cases} corruptions classified"),
    )
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = root.path().join("run");
    let mut runs = Vec::new();
    for _ in 0..2 {
        std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        runs.push(common::cli_pipeline(&dir));
        std::fs::remove_dir_all(&dir).map_err(|e| e.to_string())?;
    }
    let names: Vec<&str> = runs[0].iter().map(|(n, _)| n.as_str()).collect();
    let differing: Vec<&str> = runs[0]
        .iter()
        .zip(&runs[1])
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a.0.as_str())
        .collect();
    check(
        runs[0].len() == runs[1].len() && differing.is_empty(),
        format!("{} outputs compared, differing: {differing:?}", names.len()),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, started: Instant, outcome: Outcome| {
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS {id} {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL {id} {name}: {d} [{secs:.1}s]");
            }
        }
    };

    let t = Instant::now();
    report(1, "identity at init", t, identity_at_init());
    let t = Instant::now();
    report(2, "gradient check", t, gradients());
    let t = Instant::now();
    report(3, "layer and regression oracles", t, oracles());

    let t = Instant::now();
    let delta: Result<Vec<Run>, Error> = (1..=5)
        .map(|s| synthetic_run(s, Variant::DeltaInit))
        .collect();
    let delta = match delta {
        Ok(runs) => {
            report(4, "synthetic ordering nn < ols < mean", t, ordering(&runs));
            Some(runs)
        }
        Err(e) => {
            report(
                4,
                "synthetic ordering nn < ols < mean",
                t,
                Err(e.to_string()),
            );
            None
        }
    };

    let t = Instant::now();
    report(5, "sign test and ratio bound", t, significance());
    let t = Instant::now();
    report(6, "delta init step-0 loss", t, init_advantage());

    let t = Instant::now();
    let resnet: Result<Vec<Run>, Error> =
        (1..=3).map(|s| synthetic_run(s, Variant::Resnet)).collect();
    let outcome = match (&delta, resnet) {
        (Some(d), Ok(r)) => parity(&d[..3], &r),
        (None, _) => Err("delta runs unavailable".into()),
        (_, Err(e)) => Err(e.to_string()),
    };
    report(7, "resnet parity", t, outcome);

    let t = Instant::now();
    report(8, "format round trips", t, formats());
    let t = Instant::now();
    report(9, "cli determinism", t, determinism());

    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
