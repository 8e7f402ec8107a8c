//! End-to-end acceptance checks. Runs without the libtest harness so that
//! each criterion prints exactly one PASS or FAIL line; the process exits
//! non-zero when any criterion fails.

#[path = "../../core/tests/support/reference_unet.rs"]
mod reference_unet;

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use uplot::analysis::{FlagTag, MITrajectory, MiConfig};
use uplot::dataset::gen_synthetic;
use uplot::miest::{entropy_discrete, kde_entropy, kde_mi_layer, mi_discrete, JointCounts, KdeBound, KdeConfig, Points};
use uplot::reduce::{CoarsenConfig, ReduceConfig};
use uplot::unet::{build, NetworkSpec};
use uplot_cli::commands::{self, RunReport};
use uplot_cli::RunConfig;

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        ok,
        detail: detail.into(),
    }
}

fn work_dir(name: &str) -> PathBuf {
    let d = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = fs::remove_dir_all(&d);
    fs::create_dir_all(&d).unwrap();
    d
}

fn h2(p: f64) -> f64 {
    -(p * p.log2() + (1.0 - p) * (1.0 - p).log2())
}

fn discrete_oracle() -> Outcome {
    // Tables with their mutual information worked out by hand.
    let cases: Vec<(Vec<Vec<u64>>, f64)> = vec![
        (vec![vec![1, 0], vec![0, 1]], 1.0),
        (vec![vec![1, 1], vec![1, 1]], 0.0),
        (vec![vec![1, 1], vec![0, 2]], 1.0 + h2(0.25) - 1.5),
        (vec![vec![2, 0, 0], vec![0, 2, 0], vec![0, 0, 2]], 3f64.log2()),
        (vec![vec![4]], 0.0),
        (
            vec![vec![1, 0, 0, 0], vec![0, 1, 0, 0], vec![0, 0, 1, 0], vec![0, 0, 0, 1]],
            2.0,
        ),
        (vec![vec![3, 1], vec![1, 3]], 1.0 - h2(0.25)),
        (vec![vec![1, 0], vec![0, 3]], h2(0.25)),
        (vec![vec![2, 2, 0], vec![0, 0, 4]], 1.0),
        (vec![vec![1, 2], vec![2, 4]], 0.0),
        (vec![vec![1, 1, 0], vec![0, 0, 2]], 1.0),
        (vec![vec![3, 0], vec![0, 1], vec![0, 0]], h2(0.25)),
    ];
    let mut worst = 0.0f64;
    for (rows, expected) in &cases {
        let got = mi_discrete(&JointCounts::from_rows(rows).unwrap()).unwrap();
        worst = worst.max((got - expected).abs());
    }
    let derived = mi_discrete(&JointCounts::from_rows(&[vec![1, 1], vec![0, 2]]).unwrap()).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut exact = 0;
    for _ in 0..100 {
        let k = rng.gen_range(1..20);
        let mut xs = Vec::new();
        let mut counts = Vec::new();
        for sym in 0..k {
            let c = rng.gen_range(1..40u64);
            counts.push(c);
            xs.extend(std::iter::repeat(sym).take(c as usize));
        }
        let j = JointCounts::from_pairs(&xs, &xs).unwrap();
        if mi_discrete(&j).unwrap() == entropy_discrete(&counts).unwrap() {
            exact += 1;
        }
    }
    outcome(
        worst <= 1e-9 && exact == 100,
        format!(
            "{} tables, worst error {worst:.1e} bits; [[1,1],[0,2]] gives {derived:.4} bits; I(X;X) = H(X) exactly on {exact}/100",
            cases.len()
        ),
    )
}

fn estimator_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let mut rows = Vec::new();
    let mut ys = Vec::new();
    for i in 0..80 {
        let c = i % 2;
        let cx = if c == 0 { -10.0 } else { 10.0 };
        rows.push(vec![cx + noise.sample(&mut rng), noise.sample(&mut rng)]);
        ys.push(c);
    }
    let xs: Vec<usize> = (0..rows.len()).collect();
    let mi = kde_mi_layer(&Points::from_rows(&rows).unwrap(), &xs, &ys, &KdeConfig::default()).unwrap();
    let two_class_ok = (mi.i_ym - 1.0).abs() <= 0.05;

    let mut dominated = 0;
    for set in 0..50 {
        let n = rng.gen_range(2..40);
        let d = rng.gen_range(1..6);
        let scale = rng.gen_range(0.1..5.0);
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| scale * rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let p = Points::from_rows(&pts).unwrap();
        let var = 0.25 + set as f64 / 25.0;
        let up = kde_entropy(&p, &KdeConfig { noise_variance: var, bound: KdeBound::Upper }).unwrap();
        let lo = kde_entropy(&p, &KdeConfig { noise_variance: var, bound: KdeBound::Lower }).unwrap();
        if up >= lo {
            dominated += 1;
        }
    }
    outcome(
        two_class_ok && dominated == 50,
        format!("two separated classes give I(Y;M) = {:.4} bits; upper >= lower on {dominated}/50 sets", mi.i_ym),
    )
}

/// The desk-scale Model 1 run shared by criteria 3 to 5.
struct Desk {
    kmeans: MITrajectory,
    kmeans_k: usize,
    coarse: MITrajectory,
    report: RunReport,
    minutes: f64,
}

fn desk_run() -> Desk {
    let start = Instant::now();
    let dir = work_dir("desk");
    let cfg = RunConfig::default();
    commands::cmd_train(&cfg, &dir).unwrap();
    let mi = MiConfig {
        estimator: cfg.estimator,
        max_dims: cfg.max_dims,
        seed: cfg.seed,
    };
    let trace = dir.join(commands::TRACE_DIR);
    let kmeans = commands::cmd_mi(&trace, &dir, &mi, &cfg.reduction).unwrap();
    let kmeans_k = match cfg.reduction {
        ReduceConfig::Kmeans { k, .. } => k,
        ReduceConfig::Coarsen(_) => unreachable!("desk configuration clusters masks"),
    };
    let coarse_cfg = ReduceConfig::Coarsen(CoarsenConfig { grid: 4, threshold: 32 });
    let coarse = commands::cmd_mi(&trace, &dir.join("coarsened"), &mi, &coarse_cfg).unwrap();
    let report = commands::cmd_report(&dir, 0.1, 0.1).unwrap();
    Desk {
        kmeans,
        kmeans_k,
        coarse,
        report,
        minutes: start.elapsed().as_secs_f64() / 60.0,
    }
}

fn bound_compliance(desk: &Desk) -> Outcome {
    let bound = (desk.kmeans_k as f64).log2() + 0.05;
    let max_k = desk.kmeans.records().iter().map(|r| r.i_ym_bits).fold(0.0, f64::max);
    let max_c = desk.coarse.records().iter().map(|r| r.i_ym_bits).fold(0.0, f64::max);
    outcome(
        max_k <= bound && max_c <= 16.05,
        format!(
            "max I(Y;M) {max_k:.3} bits with K = {} (bound {bound:.3}), {max_c:.3} bits with 4x4 coarsening (bound 16.05) over {} records each",
            desk.kmeans_k,
            desk.kmeans.records().len()
        ),
    )
}

fn dpi_behaviour(desk: &Desk) -> Outcome {
    let dpi = &desk.report.dpi;
    let epochs: Vec<usize> = dpi.epochs.iter().map(|e| e.epoch).collect();
    let early = &epochs[..epochs.len().div_ceil(4)];
    let merges = [11, 14, 17, 20];
    let early_merges: Vec<(usize, usize)> = dpi
        .epochs
        .iter()
        .filter(|e| early.contains(&e.epoch))
        .flat_map(|e| {
            e.forward
                .iter()
                .filter(|f| f.tag == FlagTag::ExpectedMerge && merges.contains(&f.to))
                .map(move |f| (e.epoch, f.to))
        })
        .collect();
    let last = dpi.epochs.last().unwrap();
    let anomalies: Vec<String> = last
        .forward
        .iter()
        .chain(&last.reverse)
        .filter(|f| f.tag == FlagTag::Anomaly && f.excess > 0.25)
        .map(|f| format!("{}->{} by {:.3}", f.from, f.to, f.excess))
        .collect();
    outcome(
        !early_merges.is_empty() && anomalies.is_empty(),
        format!(
            "expected-merge rises in captures {early:?}: {early_merges:?}; anomalies above 0.25 bits at epoch {}: {anomalies:?}; desk run took {:.1} min",
            last.epoch, desk.minutes
        ),
    )
}

fn uplot_ordering(desk: &Desk) -> Outcome {
    let sat = &desk.report.saturation;
    let epochs: Vec<Option<usize>> = [11, 14, 17, 20].iter().map(|&l| sat.saturation_epoch(l)).collect();
    let ok = match epochs[0] {
        None => true,
        Some(_) => {
            epochs.iter().all(Option::is_some) && epochs.windows(2).all(|w| w[0].unwrap() >= w[1].unwrap())
        }
    };
    let shown: Vec<String> = [11, 14, 17, 20]
        .iter()
        .zip(&epochs)
        .map(|(l, e)| format!("{l}: {}", e.map_or("never".into(), |e| e.to_string())))
        .collect();
    outcome(ok, format!("saturation epochs of merge layers {}", shown.join(", ")))
}

fn output_layer_dominates(desk: &Desk) -> Outcome {
    let last = *desk.kmeans.epochs().last().unwrap();
    let final_records: Vec<_> = desk.kmeans.records().iter().filter(|r| r.epoch == last).collect();
    let best = final_records.iter().map(|r| r.i_ym_bits).fold(0.0, f64::max);
    let out = final_records.iter().find(|r| r.layer == 23).unwrap().i_ym_bits;
    outcome(
        out >= best - 0.1,
        format!("final-epoch I(Y;M) at layer 23 is {out:.3} bits, layer maximum {best:.3} bits"),
    )
}

fn ablation_ordering() -> Outcome {
    let start = Instant::now();
    let dir = work_dir("ablation");
    let cfg = RunConfig::default();
    let r = commands::cmd_ablate(&cfg, &dir).unwrap();
    let medians: Vec<String> = r
        .models
        .iter()
        .map(|m| {
            format!(
                "M{} {}",
                m.model,
                m.median_epochs_to_reach.map_or("never".into(), |e| e.to_string())
            )
        })
        .collect();
    outcome(
        r.ordering_holds == Some(true),
        format!(
            "median epochs-to-reach {} over seeds {:?}; {}; took {:.1} min",
            medians.join(", "),
            cfg.ablation.seeds,
            r.ordering_detail,
            start.elapsed().as_secs_f64() / 60.0
        ),
    )
}

fn determinism() -> Outcome {
    let dir = work_dir("determinism");
    let cfg = serde_json::json!({
        "seed": 11,
        "dataset": {"kind": "synthetic", "count": 24, "seed": 5},
        "split": {"train": 16, "val": 8, "seed": 1},
        "training": {"epochs": 3, "capture": [1, 2, 3]},
        "reduction": {"kind": "kmeans", "k": 4, "seed": 0, "max_iter": 50}
    });
    let cfg_path = dir.join("config.json");
    fs::write(&cfg_path, cfg.to_string()).unwrap();
    let run = |name: &str| -> Vec<u8> {
        let out = dir.join(name);
        for cmd in ["train", "mi"] {
            let status = Command::new(env!("CARGO_BIN_EXE_uplot"))
                .arg(cmd)
                .arg("--config")
                .arg(&cfg_path)
                .arg("--out")
                .arg(&out)
                .output()
                .unwrap();
            assert!(status.status.success(), "{cmd}: {}", String::from_utf8_lossy(&status.stderr));
        }
        fs::read(out.join(commands::MI_CSV)).unwrap()
    };
    let (a, b) = (run("a"), run("b"));
    let lines = a.iter().filter(|&&c| c == b'\n').count();
    outcome(
        a == b && lines > 1,
        format!("two train + mi runs produced {} byte MI tables ({lines} lines), identical: {}", a.len(), a == b),
    )
}

fn gradient_check() -> Outcome {
    let spec = NetworkSpec::new(16, 4, 8, 21);
    let data = gen_synthetic(2, 16, 13).unwrap();
    let images: Vec<_> = data.samples().iter().map(|s| &s.image).collect();
    let masks: Vec<_> = data.samples().iter().map(|s| &s.mask).collect();
    let graph = build(&spec).unwrap();
    let result = graph.loss_and_grads(&images, &masks).unwrap();
    let mut params: Vec<Vec<f64>> = graph
        .params()
        .iter()
        .map(|p| p.iter().map(|&v| v as f64).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let slot = rng.gen_range(0..params.len());
        let i = rng.gen_range(0..params[slot].len());
        let orig = params[slot][i];
        params[slot][i] = orig + h;
        let up = reference_unet::loss(&graph, &params, &images, &masks);
        params[slot][i] = orig - h;
        let down = reference_unet::loss(&graph, &params, &images, &masks);
        params[slot][i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let analytic = result.grads.0[slot][i] as f64;
        worst = worst.max((numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6));
    }
    outcome(
        worst < 5e-2,
        format!("worst relative error {worst:.2e} over 10 parameters of a 16x16 network"),
    )
}

fn main() {
    let mut failed = 0;
    let mut check = |n: &str, title: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !o.ok {
            failed += 1;
        }
        println!(
            "{} [{n}] {title} ({:.1}s): {}",
            if o.ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
    };
    check("1", "discrete MI oracle", &mut discrete_oracle);
    check("2", "estimator consistency", &mut estimator_consistency);
    check("8", "gradient correctness", &mut gradient_check);
    check("7", "determinism", &mut determinism);
    let desk: Result<Desk, String> = panic::catch_unwind(desk_run).map_err(|_| "desk run panicked".to_string());
    let on_desk = |f: fn(&Desk) -> Outcome| {
        let desk = &desk;
        move || match desk {
            Ok(d) => f(d),
            Err(e) => outcome(false, e.clone()),
        }
    };
    check("3", "bound compliance", &mut on_desk(bound_compliance));
    check("4", "DPI behaviour", &mut on_desk(dpi_behaviour));
    check("5", "U-Plot ordering", &mut on_desk(uplot_ordering));
    check("5b", "output layer carries the most label information", &mut on_desk(output_layer_dominates));
    check("6", "ablation ordering", &mut ablation_ordering);
    println!("{failed} acceptance criteria failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
