//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pmga::audit::{audit_qa, audited_epsilon, privacy_region, rg_channel};
use pmga::experiment::{
    budget_users, compare_curves, default_epsilon_grid, find_crossover, run_trials, Crossover, EmpiricalSettings,
    ExperimentConfig, RunSize,
};
use pmga::population::{extreme_probs, sample_population, second_moment};
use pmga::qa::{epsilon_qa, max_lambda, qa_alpha};
use pmga::rg::{epsilon_rg, optimal_rg_params, rg_beta3};
use pmga::scheme::{AggregationScheme, QaScheme, RgScheme};
use pmga::{PopulationModel, QaParams, RgParams};

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_model(rng: &mut ChaCha8Rng, m: u32, k: usize) -> PopulationModel {
    let w = 2 * m as usize;
    let rows = (0..k)
        .map(|_| {
            let raw: Vec<f64> = (0..w).map(|_| rng.gen_range(0.05..1.0)).collect();
            let total: f64 = raw.iter().sum();
            raw.iter().map(|x| x / total).collect()
        })
        .collect();
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    PopulationModel::new(m, rows, raw.iter().map(|x| x / total).collect()).unwrap()
}

fn audit_models() -> Vec<PopulationModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut models = vec![
        PopulationModel::binary(0.5, 0.5).unwrap(),
        PopulationModel::binary(0.6, 0.3).unwrap(),
        PopulationModel::binary(0.9, 0.01).unwrap(),
    ];
    for (m, k) in [(1, 2), (1, 3), (2, 2), (2, 3)] {
        for _ in 0..3 {
            models.push(random_model(&mut rng, m, k));
        }
    }
    models
}

fn qa_audit_equivalence() -> Outcome {
    let mut points = 0;
    let mut worst = 0.0f64;
    for model in audit_models() {
        let top = max_lambda(model.m());
        for frac in [0.0, 0.1, 0.35, 0.7, 0.95] {
            let params = QaParams::new(frac * top, model.m()).unwrap();
            worst = worst.max((audit_qa(&model, &params) - epsilon_qa(&model, &params)).abs());
            points += 1;
        }
    }
    outcome(
        points >= 50 && worst <= 1e-9,
        format!("{points} points, max |audit - closed form| = {worst:.3e}"),
    )
}

fn rg_audit_equivalence() -> Outcome {
    let mut points = 0;
    let mut worst = 0.0f64;
    for model in audit_models() {
        let (hi, lo) = extreme_probs(&model);
        for lg in [0.01, 0.2, 0.5, 0.8, 0.99] {
            for frac in [0.0, 0.3, 0.6, 0.95] {
                let params = RgParams::new(lg, frac * max_lambda(model.m()), model.m()).unwrap();
                let d = audited_epsilon(&rg_channel(&model, &params)) - epsilon_rg(hi, lo, &params, model.k());
                worst = worst.max(d.abs());
                points += 1;
            }
        }
    }
    outcome(
        points >= 50 && worst <= 1e-9,
        format!("{points} points, max |audit - closed form| = {worst:.3e}"),
    )
}

fn summary(model: &PopulationModel, scheme: Arc<dyn AggregationScheme>, seed: u64) -> pmga::experiment::TrialSummary {
    run_trials(&ExperimentConfig {
        model: model.clone(),
        scheme,
        size: RunSize::Users(500),
        trials: 10_000,
        master_seed: seed,
        threads: None,
    })
    .unwrap()
}

fn qa(lambda: f64, m: u32) -> Arc<dyn AggregationScheme> {
    Arc::new(QaScheme {
        params: QaParams::new(lambda, m).unwrap(),
    })
}

fn rg(lambda_gr: f64, lambda_vl: f64, m: u32) -> Arc<dyn AggregationScheme> {
    Arc::new(RgScheme {
        params: RgParams::new(lambda_gr, lambda_vl, m).unwrap(),
    })
}

fn unbiasedness() -> Outcome {
    let binary = PopulationModel::binary(0.6, 0.3).unwrap();
    let wide = PopulationModel::new(
        2,
        vec![
            vec![0.1, 0.2, 0.3, 0.4],
            vec![0.4, 0.3, 0.2, 0.1],
            vec![0.25, 0.25, 0.25, 0.25],
        ],
        vec![0.5, 0.3, 0.2],
    )
    .unwrap();
    let cases = [
        ("qa lambda=0", &binary, qa(0.0, 1)),
        ("qa lambda=0.2", &wide, qa(0.2, 2)),
        ("rg (0.5, 0)", &binary, rg(0.5, 0.0, 1)),
        ("rg (0.3, 0.2)", &wide, rg(0.3, 0.2, 2)),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for (i, (name, model, scheme)) in cases.into_iter().enumerate() {
        let s = summary(model, scheme, 100 + i as u64);
        let z = s
            .mean_estimate
            .iter()
            .zip(&s.expected_aggregate)
            .zip(&s.mean_estimate_se)
            .map(|((m, e), se)| (m - e).abs() / se)
            .fold(0.0, f64::max);
        pass &= z <= 4.0;
        detail.push(format!("{name}: max z = {z:.2}"));
    }
    outcome(pass, detail.join("; "))
}

fn mse_reproduction() -> Outcome {
    let uniform = PopulationModel::uniform(2, 1).unwrap();
    let binary = PopulationModel::binary(0.6, 0.3).unwrap();
    let wide = PopulationModel::new(
        2,
        vec![vec![0.1, 0.2, 0.3, 0.4], vec![0.4, 0.3, 0.2, 0.1]],
        vec![0.5, 0.5],
    )
    .unwrap();

    let exact_alpha = qa_alpha(1, 2, 0.0, 1.0).unwrap();
    let exact_beta = rg_beta3(&RgParams::new(0.5, 0.0, 1).unwrap(), 1.0);
    let mut pass = exact_alpha == 1.0 && (exact_beta - 3.0).abs() < 1e-12;
    let mut detail = vec![format!("alpha = {exact_alpha}, beta3 = {exact_beta}")];

    let cases = [
        ("qa uniform lambda=0", &uniform, qa(0.0, 1)),
        ("rg uniform (0.5, 0)", &uniform, rg(0.5, 0.0, 1)),
        ("qa lambda=0.2", &binary, qa(0.2, 1)),
        ("rg (0.2, 0.3)", &wide, rg(0.2, 0.3, 2)),
    ];
    for (i, (name, model, scheme)) in cases.into_iter().enumerate() {
        let s = summary(model, scheme, 200 + i as u64);
        let z = (s.empirical_relative_mse - s.theory_relative_mse).abs() / s.standard_error;
        pass &= z <= 3.0;
        detail.push(format!(
            "{name}: {:.5} vs {:.5} ({z:.2} se)",
            s.empirical_relative_mse, s.theory_relative_mse
        ));
    }
    outcome(pass, detail.join("; "))
}

fn corollary_optimality() -> Outcome {
    let settings = [(0.5, 0.5), (0.6, 0.3), (0.9, 0.01)];
    let res = 200;
    let mut pass = true;
    let mut worst_excess = f64::NEG_INFINITY;
    for (p1, p2) in settings {
        let model = PopulationModel::binary(p1, p2).unwrap();
        let (hi, lo) = extreme_probs(&model);
        let ev2 = second_moment(&model);
        let top = max_lambda(1);
        for eps in [0.25, 0.5, 1.0, 2.0] {
            let best = optimal_rg_params(hi, lo, eps, 1, 2).unwrap();
            let closed = rg_beta3(&best, ev2);
            pass &= epsilon_rg(hi, lo, &best, 2) <= eps + 1e-9;
            let mut grid_min = f64::INFINITY;
            for i in 0..res {
                for j in 0..res {
                    let params = RgParams::new((i as f64 + 0.5) / res as f64, top * j as f64 / res as f64, 1).unwrap();
                    if epsilon_rg(hi, lo, &params, 2) <= eps {
                        grid_min = grid_min.min(rg_beta3(&params, ev2));
                    }
                }
            }
            let excess = (closed - grid_min) / grid_min;
            worst_excess = worst_excess.max(excess);
            pass &= excess <= 1e-9;
        }
    }
    outcome(
        pass,
        format!("12 settings, max (closed - grid min) / grid min = {worst_excess:.3e}"),
    )
}

fn figure2_regimes() -> Outcome {
    let b = 500;
    let limit = (2.0f64).log2() * 3.0 * 2.0 * 1.0 / (6.0 * b as f64);
    let mut pass = true;
    let mut detail = Vec::new();
    for (p1, p2) in [(0.5, 0.5), (0.6, 0.3), (0.9, 0.01)] {
        let model = PopulationModel::binary(p1, p2).unwrap();
        let table = compare_curves(&model, b, &default_epsilon_grid(), None).unwrap();
        let (first, last) = (&table.rows[0], table.rows.last().unwrap());
        let regimes = first.e_qa_theory < first.e_rg_theory && last.e_qa_theory > last.e_rg_theory;
        let crossover = matches!(
            find_crossover(&table).unwrap(),
            Crossover::Found { epsilon_l: Some(_), .. }
        );
        let far = &compare_curves(&model, b, &[25.0], None).unwrap().rows[0];
        let gap = far.e_qa_theory - far.e_rg_theory;
        pass &= regimes && crossover && (gap - limit).abs() <= 1e-6;
        detail.push(format!("({p1}, {p2}): regimes {regimes}, gap at eps=25 {gap:.7}"));
    }
    let excluded = PopulationModel::binary(0.6, 0.6).unwrap();
    let table = compare_curves(&excluded, b, &default_epsilon_grid(), None).unwrap();
    let far = &compare_curves(&excluded, b, &[25.0], None).unwrap().rows[0];
    let far_gap = far.e_qa_theory - far.e_rg_theory;
    let none = match find_crossover(&table).unwrap() {
        Crossover::None { gap } => (gap - 1.0 / b as f64).abs() <= 1e-6,
        Crossover::Found { .. } => false,
    };
    pass &= none && (far_gap - limit).abs() <= 1e-6;
    detail.push(format!(
        "excluded (0.6, 0.6): none with 1/b gap {none}, gap at eps=25 {far_gap:.7}"
    ));
    outcome(pass, detail.join("; "))
}

fn figure3_regions() -> Outcome {
    let res = 201;
    let regions: Vec<_> = [0.0, 0.5, 1.0, 2.5].iter().map(|&e| privacy_region(e, res)).collect();
    let nested = regions.windows(2).all(|w| w[0].is_subset_of(&w[1]));
    let mirror = |i: usize| res - 1 - i;
    let symmetric = regions.iter().all(|r| {
        (0..res).all(|i| {
            (0..res).all(|j| {
                let x = r.contains_cell(i, j);
                x == r.contains_cell(j, i) && x == r.contains_cell(mirror(i), mirror(j))
            })
        })
    });
    let center = res / 2;
    let sole = regions[0].cells().collect::<Vec<_>>() == vec![(center, center)] && regions[0].coordinate(center) == 0.5;
    let in_all = regions.iter().all(|r| r.contains_cell(center, center));

    let mut agree = true;
    for r in &regions[1..] {
        for i in (0..res).step_by(10) {
            for j in (0..res).step_by(10) {
                let model = PopulationModel::binary(r.coordinate(i), r.coordinate(j)).unwrap();
                let audited = audit_qa(&model, &QaParams::new(0.0, 1).unwrap());
                if (audited - r.epsilon).abs() > 1e-9 {
                    agree &= (audited <= r.epsilon) == r.contains_cell(i, j);
                }
            }
        }
    }
    outcome(
        nested && symmetric && sole && in_all && agree,
        format!("nested {nested}, symmetric {symmetric}, sole (0.5,0.5) at eps=0 {sole}, audit agreement {agree}"),
    )
}

fn communication() -> Outcome {
    let model = PopulationModel::uniform(2, 1).unwrap();
    let population = sample_population(&model, 500, 3);
    let qa_bits = qa(0.1, 1).run_protocol(&model, &population, 4).unwrap().payload_bits;
    let rg_bits = rg(0.3, 0.1, 1)
        .run_protocol(&model, &population, 4)
        .unwrap()
        .payload_bits;
    let split = budget_users(500, 1, 2).unwrap();
    outcome(
        qa_bits == 500 && rg_bits == 1000 && (split.n_qa, split.n_rg) == (500, 250),
        format!(
            "qa {} bits/user, rg {} bits/user, budget_users(500,1,2) = ({}, {})",
            qa_bits as f64 / 500.0,
            rg_bits as f64 / 500.0,
            split.n_qa,
            split.n_rg
        ),
    )
}

fn determinism() -> Outcome {
    let model = PopulationModel::binary(0.6, 0.3).unwrap();
    let grid = [0.1, 0.5, 1.0, 2.0, 4.0];
    let csv = |threads| {
        let settings = EmpiricalSettings {
            trials: 300,
            master_seed: 7,
            threads: Some(threads),
        };
        let mut buf = Vec::new();
        compare_curves(&model, 500, &grid, Some(settings))
            .unwrap()
            .write_csv(&mut buf)
            .unwrap();
        buf
    };
    let many = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .max(4);
    let (a, b) = (csv(1), csv(many));
    outcome(
        a == b,
        format!(
            "compare CSV with empirical columns, 1 vs {many} threads: {} bytes",
            a.len()
        ),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        (
            "1 privacy audit equivalence (Q&A)",
            Duration::from_secs(10),
            qa_audit_equivalence,
        ),
        (
            "2 privacy audit equivalence (RG)",
            Duration::from_secs(10),
            rg_audit_equivalence,
        ),
        ("3 unbiasedness", Duration::from_secs(120), unbiasedness),
        ("4 MSE formula reproduction", Duration::from_secs(120), mse_reproduction),
        ("5 optimal RG parameters", Duration::from_secs(60), corollary_optimality),
        ("6 fixed-budget regimes", Duration::from_secs(60), figure2_regimes),
        ("7 privacy regions", Duration::from_secs(5), figure3_regions),
        ("8 communication accounting", Duration::from_secs(1), communication),
        (
            "9 determinism across thread counts",
            Duration::from_secs(120),
            determinism,
        ),
    ];
    let mut failures = 0;
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let pass = result.pass && elapsed <= budget;
        failures += usize::from(!pass);
        println!(
            "{} criterion {name} [{:.2}s / {}s] {}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs(),
            result.detail
        );
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
