//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use ndarray::{array, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use mige_core::eigen::sym_eig;
use mige_core::encoder::{
    pjvp_check, Encoder, GaussianChannelEncoder, LinearEncoder, TanhMlpEncoder,
};
use mige_core::harness::{self, rel_err, reference_chain, toy_estimate, Cell, Command, RunConfig};
use mige_core::kernels::RbfKernel;
use mige_core::mige::{
    cond_entropy_grad, entropy_grad, joint_entropy_grad, mi_grad_circ1, mi_grad_circ2,
    noise_matrix, MigeConfig,
};
use mige_core::oracles::{finite_diff, ToyProblem};
use mige_core::projection::RandomProjector;
use mige_core::ssge::{stein_residual, SsgeConfig};

struct Verdict {
    passed: bool,
    detail: String,
}

type Check = fn() -> Verdict;

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn ssge() -> SsgeConfig {
    SsgeConfig::default()
}

fn toy_fidelity() -> Verdict {
    let mut worst_rel: f64 = 0.0;
    let mut ok = true;
    for rho in [-0.7, -0.5, -0.3, 0.3, 0.5, 0.7] {
        let a = ToyProblem::new(5, rho).unwrap().analytic_mi_grad();
        let (est, _) = toy_estimate(5, rho, 4000, 0, &ssge(), None).unwrap();
        let r = rel_err(est, a);
        worst_rel = worst_rel.max(r);
        ok &= r <= 0.15;
    }
    let (zero, _) = toy_estimate(5, 0.0, 4000, 0, &ssge(), None).unwrap();
    ok &= zero.abs() <= 0.1;
    verdict(
        ok,
        format!("d=5 max rel_err {worst_rel:.4} (<= 0.15), |est(rho=0)| {:.4} (<= 0.1)", zero.abs()),
    )
}

fn high_dim_fidelity() -> Verdict {
    let mut worst: f64 = 0.0;
    for rho in [-0.7, -0.5, 0.5, 0.7] {
        let a = ToyProblem::new(20, rho).unwrap().analytic_mi_grad();
        let (est, _) = toy_estimate(20, rho, 4000, 0, &ssge(), None).unwrap();
        worst = worst.max(rel_err(est, a));
    }
    verdict(worst <= 0.2, format!("d=20 max rel_err {worst:.4} (<= 0.20)"))
}

fn smoothness() -> Verdict {
    let mut violations = 0;
    for seed in 0..3u64 {
        let grid: Vec<f64> = harness::default_rho_grid()
            .into_iter()
            .map(|rho| toy_estimate(5, rho, 4000, seed, &ssge(), None).unwrap().0)
            .collect();
        violations += grid.windows(2).filter(|w| w[1] < w[0]).count();
    }
    verdict(
        violations <= 2,
        format!("{violations} adjacent decreases over 3 seeds x 19 points (<= 2)"),
    )
}

fn float_column(table: &harness::Table, name: &str) -> Vec<f64> {
    let idx = table.header.iter().position(|h| *h == name).unwrap();
    table
        .rows
        .iter()
        .map(|r| match &r[idx] {
            Cell::Float(v) => *v,
            Cell::Int(v) => *v as f64,
            Cell::Text(t) => panic!("non-numeric cell {t}"),
        })
        .collect()
}

fn score_consistency() -> Verdict {
    let out = harness::run(&RunConfig::defaults(Command::Scorecheck)).unwrap();
    let rmse = float_column(&out.table, "rmse_vs_analytic");
    let monotone = rmse.windows(2).all(|w| w[1] <= w[0]);
    let last = *rmse.last().unwrap();
    verdict(
        monotone && last <= 0.3,
        format!(
            "rmse at M=100,400,1600: {:.4}, {:.4}, {:.4} (non-increasing, last <= 0.3)",
            rmse[0], rmse[1], rmse[2]
        ),
    )
}

fn stein_identity() -> Verdict {
    let x = noise_matrix(5000, 1, 42, 0);
    let kernel = RbfKernel::with_median_heuristic(&x).unwrap();
    let good = stein_residual(&kernel, &x, &x.as_array().mapv(|v| -v)).unwrap();
    let bad = stein_residual(&kernel, &x, x.as_array()).unwrap();
    verdict(
        good <= 0.05 && bad > 0.5,
        format!("analytic {good:.4} (<= 0.05), wrong sign {bad:.4} (> 0.5)"),
    )
}

fn entropy_oracle() -> Verdict {
    let x = noise_matrix(2000, 1, 7, 0);
    let mut ok = true;
    let mut parts = Vec::new();
    for (sigma, tol) in [(1.0, 0.1), (2.0, 0.08)] {
        let enc = LinearEncoder::new(array![[sigma]]).unwrap();
        let est = entropy_grad(&enc, &x, &MigeConfig::new(ssge(), 7)).unwrap().gradient[0];
        let err = (est - 1.0 / sigma).abs();
        ok &= err <= tol;
        parts.push(format!("sigma={sigma}: {est:.4} (|err| {err:.4} <= {tol})"));
    }
    verdict(ok, parts.join(", "))
}

fn conditional_oracle() -> Verdict {
    let enc = GaussianChannelEncoder::new(0.5, 1).unwrap();
    let x = noise_matrix(4000, 1, 3, 0);
    let est = cond_entropy_grad(&enc, &x, 1, &MigeConfig::new(ssge(), 3))
        .unwrap()
        .gradient[0];
    let target = -2.0 / 3.0;
    let r = rel_err(est, target);
    verdict(r <= 0.1, format!("{est:.4} vs -0.6667, rel_err {r:.4} (<= 0.10)"))
}

fn chain_check() -> Verdict {
    let chain = reference_chain();
    let (c, f) = chain.encoders().unwrap();
    let x = noise_matrix(4000, c.input_dim(), 11, 0);
    let est = mi_grad_circ2(&c, &f, &x, &MigeConfig::new(ssge(), 11))
        .unwrap()
        .gradient;
    let fd = finite_diff(
        |t| chain.with_params(t).and_then(|c| c.mi()).unwrap(),
        &chain.params(),
        1e-5,
    );
    let num: f64 = est.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
    let r = num / den;
    verdict(r <= 0.15, format!("relative error {r:.4} over 6 parameters (<= 0.15)"))
}

fn preserved_fraction(d: usize, k: usize, seed: u64) -> f64 {
    let pts = noise_matrix(200, d, seed.wrapping_add(1000), 0);
    let p = RandomProjector::new(d, k, seed).unwrap();
    let proj = p.project(&pts).unwrap();
    let scale = (d as f64 / k as f64).sqrt();
    let dist = |a: &[f64], b: &[f64]| {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    };
    let kept = (0..100)
        .filter(|&i| {
            let orig = dist(pts.row(2 * i), pts.row(2 * i + 1));
            let red = scale * dist(proj.row(2 * i), proj.row(2 * i + 1));
            (red / orig - 1.0).abs() <= 0.2
        })
        .count();
    kept as f64 / 100.0
}

fn random_projection() -> Verdict {
    let at128 = preserved_fraction(1024, 128, 0);
    let means: Vec<f64> = [16, 64, 256]
        .iter()
        .map(|&k| (0..5).map(|s| preserved_fraction(1024, k, s)).sum::<f64>() / 5.0)
        .collect();
    let monotone = means.windows(2).all(|w| w[1] >= w[0]);
    verdict(
        at128 >= 0.95 && monotone,
        format!(
            "k=128 preserved {at128:.2} (>= 0.95); mean at k=16,64,256: {:.3}, {:.3}, {:.3}",
            means[0], means[1], means[2]
        ),
    )
}

fn rp_ablation() -> Verdict {
    let mut sums = [0.0; 2];
    let mut worst_match: f64 = 0.0;
    for seed in 0..5u64 {
        let mut cfg = RunConfig::defaults(Command::RpAblation);
        cfg.seed = seed;
        cfg.rp_dims = vec![16, 128, 512];
        let out = harness::run(&cfg).unwrap();
        // rows: unprojected, k=16, k=128, k=512
        let err = float_column(&out.table, "rel_err");
        let plain = err[0];
        sums[0] += err[1];
        sums[1] += err[2];
        worst_match = worst_match.max((err[3] - plain).abs());
    }
    let (m16, m128) = (sums[0] / 5.0, sums[1] / 5.0);
    verdict(
        m128 <= m16 && worst_match <= 0.05,
        format!(
            "mean rel_err k=16 {m16:.5}, k=128 {m128:.5} (k=128 <= k=16); max |k=d - unprojected| {worst_match:.5} (<= 0.05)"
        ),
    )
}

fn gaussian(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn mechanical() -> Verdict {
    let mut failures = Vec::new();

    let linear = LinearEncoder::new(Array2::from_shape_vec((3, 4), gaussian(12, 1)).unwrap()).unwrap();
    let noisy = LinearEncoder::with_noise(Array2::from_shape_vec((2, 3), gaussian(6, 2)).unwrap(), 0.7)
        .unwrap();
    let mlp = TanhMlpEncoder::random(4, 6, 3, 0.8, false, 3).unwrap();
    let skip_mlp = TanhMlpEncoder::random(3, 5, 3, 0.8, true, 4).unwrap();
    let channel = GaussianChannelEncoder::new(0.3, 4).unwrap();
    let mut encoders: Vec<(&str, Box<dyn Encoder>)> = vec![
        ("linear", Box::new(linear)),
        ("noisy-linear", Box::new(noisy)),
        ("mlp", Box::new(mlp)),
        ("skip-mlp", Box::new(skip_mlp)),
        ("channel", Box::new(channel)),
    ];
    let mut worst_lin: f64 = 0.0;
    let mut worst_fd: f64 = 0.0;
    for (i, (name, enc)) in encoders.iter_mut().enumerate() {
        let seed = 100 + i as u64;
        let x = gaussian(enc.input_dim(), seed);
        let e = gaussian(enc.noise_dim(), seed + 1);
        let v1 = gaussian(enc.output_dim(), seed + 2);
        let v2 = gaussian(enc.output_dim(), seed + 3);
        let (a, b) = (1.7, -0.4);
        let combo: Vec<f64> = v1.iter().zip(&v2).map(|(p, q)| a * p + b * q).collect();
        let lhs = enc.pjvp(&x, &e, &combo);
        let (p1, p2) = (enc.pjvp(&x, &e, &v1), enc.pjvp(&x, &e, &v2));
        let lin = lhs
            .iter()
            .zip(p1.iter().zip(&p2))
            .map(|(l, (p, q))| (l - (a * p + b * q)).abs())
            .fold(0.0, f64::max);
        worst_lin = worst_lin.max(lin);
        if lin > 1e-10 {
            failures.push(format!("{name} pjvp linearity {lin:.2e}"));
        }
        let fd = pjvp_check(enc.as_mut(), &x, &e, seed).unwrap();
        worst_fd = worst_fd.max(fd);
        if fd > 1e-4 {
            failures.push(format!("{name} pjvp vs finite differences {fd:.2e}"));
        }
    }

    let pts = noise_matrix(300, 3, 5, 0);
    let g = RbfKernel::with_median_heuristic(&pts).unwrap().gram(&pts).unwrap();
    let eig = sym_eig(&g.view()).unwrap();
    let max_eig = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    if min_eig < -1e-8 * max_eig {
        failures.push(format!("gram min eigenvalue {min_eig:.2e}"));
    }
    let u = &eig.eigenvectors;
    let recon = u.dot(&Array2::from_diag(&eig.eigenvalues)).dot(&u.t());
    let gmax = g.iter().cloned().fold(0.0, |m: f64, v| m.max(v.abs()));
    let round_trip = (&recon - &g).iter().cloned().fold(0.0, |m: f64, v| m.max(v.abs())) / gmax;
    if round_trip > 1e-8 {
        failures.push(format!("eigen round trip {round_trip:.2e}"));
    }

    let enc = LinearEncoder::with_noise(array![[0.8, 0.1], [0.2, 0.5]], 0.5).unwrap();
    let x = noise_matrix(300, 2, 8, 0);
    let cfg = MigeConfig::new(ssge(), 8);
    let circ1 = mi_grad_circ1(&enc, &x, &cfg).unwrap().gradient;
    let h = entropy_grad(&enc, &x, &cfg).unwrap().gradient;
    let hj = joint_entropy_grad(&enc, &x, &cfg).unwrap().gradient;
    let diff: Vec<f64> = h.iter().zip(&hj).map(|(a, b)| a - b).collect();
    if circ1 != diff {
        failures.push("circ1 differs from entropy minus joint entropy".into());
    }

    let mut csv_ok = true;
    for command in [Command::Scorecheck, Command::Toy, Command::Gradcheck] {
        let mut cfg = RunConfig::defaults(command);
        cfg.seed = 9;
        if command == Command::Toy {
            cfg.dims = vec![3];
            cfg.rho_grid = vec![-0.5, 0.0, 0.5];
            cfg.n = 500;
        }
        if command == Command::Gradcheck {
            cfg.n = 1000;
        }
        let a = harness::run(&cfg).unwrap().table.to_csv();
        let b = harness::run(&cfg).unwrap().table.to_csv();
        if a != b {
            csv_ok = false;
            failures.push(format!("{command} csv not bitwise identical"));
        }
    }

    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            format!(
                "pjvp linearity {worst_lin:.1e}, pjvp fd {worst_fd:.1e}, gram min/max {:.1e}, eigen round trip {round_trip:.1e}, csv determinism {}",
                min_eig / max_eig,
                if csv_ok { "ok" } else { "broken" }
            )
        } else {
            failures.join("; ")
        },
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, Check); 11] = [
        ("toy gradient fidelity, d=5", toy_fidelity),
        ("toy gradient fidelity, d=20", high_dim_fidelity),
        ("smoothness over the rho grid", smoothness),
        ("score estimator consistency", score_consistency),
        ("stein identity residual", stein_identity),
        ("entropy gradient oracle", entropy_oracle),
        ("conditional entropy oracle", conditional_oracle),
        ("two-stage chain vs finite differences", chain_check),
        ("random projection distance band", random_projection),
        ("random projection ablation trend", rp_ablation),
        ("mechanical invariants", mechanical),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = check();
        let secs = start.elapsed().as_secs_f64();
        let status = if v.passed { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {status}  {name}: {} [{secs:.1}s]", i + 1, v.detail);
        if !v.passed {
            failed += 1;
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
