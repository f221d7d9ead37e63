//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use ehdnas::archspace::{relax, ArchLogits, BlockKind, DiscreteArch, SearchSpaceSpec};
use ehdnas::dnas::{
    brute_force_best, gen_task_data, search, sweep_beta, FinalConfig, HwKind, Objective, SearchConfig, SweepRow,
    TaskData,
};
use ehdnas::hwloss::{evaluate, evaluate_predictor, grad_arch_check, train, HwLossModel, Scaler, TrainConfig};
use ehdnas::perfmodel::{benchmark, build_lut, gen_dataset, GeneratedSplits, HardwareBudget, Paradigm};

const GRID: [f64; 6] = [0.1, 0.01, 0.005, 0.001, 0.0005, 0.0001];
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const BETA: f64 = 0.01;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: &str, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let elapsed = start.elapsed();
    let in_time = elapsed <= limit;
    let pass = out.pass && in_time;
    println!(
        "{} {id} {name}: {} [{:.1}s, limit {}s]",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    pass
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn task(space: &SearchSpaceSpec) -> TaskData {
    gen_task_data(0, 2000, space.input_dim(), space.num_classes(), 0.5).unwrap()
}

fn a1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let worst = (0..100)
        .map(|_| {
            let scaler = Scaler {
                mean_ms: rng.random_range(0.001..10.0),
                std_ms: rng.random_range(1e-4..1.0),
            };
            let model = HwLossModel::init(5, 6, 10, 64, 64, 0.1, scaler, rng.random()).unwrap();
            let logits = ArchLogits::from_vec(5, 6, (0..30).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
            grad_arch_check(&model, &relax(&logits).unwrap(), 1e-6).unwrap()
        })
        .fold(0.0, f64::max);
    Outcome {
        pass: worst < 1e-4,
        detail: format!("max rel err {worst:.2e} over 100 pairs (< 1e-4)"),
    }
}

struct Surrogates {
    gp: GeneratedSplits,
    gp_model: HwLossModel,
    pp: GeneratedSplits,
    pp_model: HwLossModel,
}

fn surrogates() -> Surrogates {
    let space = SearchSpaceSpec::desk_default();
    let large = HardwareBudget::large();
    let fit = |paradigm| {
        let d = gen_dataset(&space, &large, paradigm, 20_000, 4_000, 4_000, 0).unwrap();
        let m = train(&d.train, &d.val, &TrainConfig::default()).unwrap();
        (d, m)
    };
    let ((gp, gp_model), (pp, pp_model)) = rayon::join(|| fit(Paradigm::Generic), || fit(Paradigm::Pipeline));
    Surrogates {
        gp,
        gp_model,
        pp,
        pp_model,
    }
}

fn a2(s: &Surrogates) -> Outcome {
    let gp = evaluate(&s.gp_model, &s.gp.test).unwrap();
    let pp = evaluate(&s.pp_model, &s.pp.test).unwrap();
    Outcome {
        pass: gp.mean_rel_err < 0.10 && pp.mean_rel_err < 0.15,
        detail: format!(
            "GP mean rel err {:.3}% (< 10%), PP {:.3}% (< 15%)",
            100.0 * gp.mean_rel_err,
            100.0 * pp.mean_rel_err
        ),
    }
}

fn a3(s: &Surrogates) -> Outcome {
    let space = SearchSpaceSpec::desk_default();
    let large = HardwareBudget::large();
    let lut = build_lut(&space, &large);
    let learned = evaluate(&s.gp_model, &s.gp.test).unwrap().mean_rel_err;
    let lut_err = evaluate_predictor(&lut, &s.gp.test).unwrap().mean_rel_err;
    let witness = space
        .enumerate()
        .unwrap()
        .map(|a| {
            let truth = benchmark(&a, &space, &large, Paradigm::Generic)
                .unwrap()
                .total_ms
                .unwrap();
            (lut.arch_latency(&a).unwrap() - truth).abs() / truth
        })
        .fold(0.0, f64::max);
    Outcome {
        pass: lut_err >= 3.0 * learned && witness >= 0.05,
        detail: format!(
            "LUT {:.2}% vs learned {:.4}% (ratio {:.0}x, need >= 3x); largest LUT gap {:.1}% (need >= 5%)",
            100.0 * lut_err,
            100.0 * learned,
            lut_err / learned,
            100.0 * witness
        ),
    }
}

fn degenerate(beta: f64, seed: u64) -> SearchConfig {
    SearchConfig {
        beta,
        hw_kind: HwKind::Deep,
        seed,
        freeze_head: true,
        ..SearchConfig::default()
    }
}

fn a4(s: &Surrogates) -> Outcome {
    let large = HardwareBudget::large();

    let small = SearchSpaceSpec::new(2, 32, 16, 4, &[BlockKind::FullDense, BlockKind::Identity]).unwrap();
    let (best, _) = brute_force_best(&small, &large, Paradigm::Generic, Objective::Latency)
        .unwrap()
        .unwrap();
    let d = gen_dataset(&small, &large, Paradigm::Generic, 2_000, 400, 400, 0).unwrap();
    let model = train(&d.train, &d.val, &TrainConfig::default()).unwrap();
    let flat = task(&small).with_constant_labels();
    let small_hits: Vec<bool> = SEEDS
        .par_iter()
        .map(|&seed| {
            search(&small, &flat, Some(&model), &degenerate(BETA, seed), &[])
                .unwrap()
                .arch
                == best
        })
        .collect();

    let space = SearchSpaceSpec::desk_default();
    let (_, min_ms) = brute_force_best(&space, &large, Paradigm::Generic, Objective::Latency)
        .unwrap()
        .unwrap();
    let flat = task(&space).with_constant_labels();
    let gaps: Vec<f64> = SEEDS
        .par_iter()
        .map(|&seed| {
            let r = search(
                &space,
                &flat,
                Some(&s.gp_model),
                &degenerate(BETA, seed),
                std::slice::from_ref(&large),
            )
            .unwrap();
            r.searched_latency_ms["large"] / min_ms - 1.0
        })
        .collect();
    let within = gaps.iter().filter(|&&g| g <= 0.01).count();
    let exact = small_hits.iter().all(|&h| h);
    Outcome {
        pass: exact && within >= 3,
        detail: format!(
            "K=2,L=2 argmin {best} recovered in {}/5 seeds (need 5); default space within 1% of min in {within}/5 (need 3), gaps {}",
            small_hits.iter().filter(|&&h| h).count(),
            gaps.iter().map(|g| format!("{:.2}%", 100.0 * g)).collect::<Vec<_>>().join(",")
        ),
    }
}

fn a5(s: &Surrogates) -> Outcome {
    let space = SearchSpaceSpec::desk_default();
    let t = task(&space);
    let base = SearchConfig {
        hw_kind: HwKind::Deep,
        ..SearchConfig::default()
    };
    let rows = sweep_beta(
        &space,
        &t,
        Some(&s.gp_model),
        &base,
        &FinalConfig::default(),
        &GRID,
        &SEEDS,
    )
    .unwrap();
    let at = |beta: f64, f: fn(&SweepRow) -> f64| median(rows.iter().filter(|r| r.beta == beta).map(f).collect());
    let lat = |r: &SweepRow| r.latency_large_ms;
    let acc = |r: &SweepRow| r.accuracy;
    let (lat_hi, lat_lo) = (at(0.1, lat), at(0.0001, lat));
    let (acc_hi, acc_lo) = (at(0.1, acc), at(0.0001, acc));
    let summary = GRID
        .iter()
        .map(|&b| format!("{b}: {:.6}ms/{:.3}", at(b, lat), at(b, acc)))
        .collect::<Vec<_>>()
        .join(", ");
    Outcome {
        pass: lat_hi <= lat_lo && acc_lo >= acc_hi - 0.02,
        detail: format!(
            "median latency beta=0.1 {lat_hi:.6}ms <= beta=1e-4 {lat_lo:.6}ms; median accuracy beta=1e-4 {acc_lo:.3} >= beta=0.1 {acc_hi:.3} - 0.02 [{summary}]"
        ),
    }
}

fn a6(s: &Surrogates) -> Outcome {
    let space = SearchSpaceSpec::desk_default();
    let t = task(&space);
    let budgets = HardwareBudget::builtin();
    let wins: Vec<bool> = SEEDS
        .par_iter()
        .map(|&seed| {
            let plain = search(
                &space,
                &t,
                None,
                &SearchConfig {
                    seed,
                    ..SearchConfig::default()
                },
                &budgets,
            )
            .unwrap();
            let cfg = SearchConfig {
                beta: BETA,
                hw_kind: HwKind::Deep,
                seed,
                ..SearchConfig::default()
            };
            let guided = search(&space, &t, Some(&s.gp_model), &cfg, &budgets).unwrap();
            budgets
                .iter()
                .all(|b| guided.searched_latency_ms[&b.name] < plain.searched_latency_ms[&b.name])
        })
        .collect();
    let n = wins.iter().filter(|&&w| w).count();
    Outcome {
        pass: n >= 3,
        detail: format!(
            "beta={BETA} search faster than beta=0 on all three budgets in {n}/5 seeds (need 3), per seed {wins:?}"
        ),
    }
}

fn a7() -> Outcome {
    let space = SearchSpaceSpec::wide();
    let small = HardwareBudget::small();
    let run = |op: usize| benchmark(&DiscreteArch::uniform(op, 6), &space, &small, Paradigm::Pipeline).unwrap();
    let (dense, identity) = (run(0), run(3));
    let repeatable = (run(0), run(3)) == (dense.clone(), identity.clone());
    let pass = !dense.feasible && identity.feasible && repeatable;
    Outcome {
        pass,
        detail: format!(
            "wide space, small budget, PP: all-full-dense feasible={}, all-identity feasible={}, repeatable={}",
            dense.feasible, identity.feasible, repeatable
        ),
    }
}

fn a8() -> Outcome {
    let space = SearchSpaceSpec::desk_default();
    let large = HardwareBudget::large();
    let d1 = gen_dataset(&space, &large, Paradigm::Generic, 2_000, 400, 400, 11).unwrap();
    let d2 = gen_dataset(&space, &large, Paradigm::Generic, 2_000, 400, 400, 11).unwrap();
    let same_data = d1.train.to_jsonl() == d2.train.to_jsonl() && d1.test.to_jsonl() == d2.test.to_jsonl();

    let cfg = TrainConfig {
        epochs: 10,
        ..TrainConfig::default()
    };
    let m1 = train(&d1.train, &d1.val, &cfg).unwrap();
    let m2 = train(&d2.train, &d2.val, &cfg).unwrap();
    let same_model = m1.to_json() == m2.to_json();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    m1.save(&path).unwrap();
    let back = HwLossModel::load(&path).unwrap();
    let bits = |m: &HwLossModel| -> Vec<u64> {
        m.params()
            .values()
            .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
            .collect()
    };
    let round_trip = bits(&back) == bits(&m1) && back.scaler() == m1.scaler() && back.to_json() == m1.to_json();

    let t = task(&space);
    let cfg = SearchConfig {
        beta: BETA,
        hw_kind: HwKind::Deep,
        epochs: 10,
        seed: 5,
        ..SearchConfig::default()
    };
    let budgets = HardwareBudget::builtin();
    let r1 = search(&space, &t, Some(&m1), &cfg, &budgets).unwrap();
    let r2 = search(&space, &t, Some(&back), &cfg, &budgets).unwrap();
    let same_search = r1.to_json() == r2.to_json();
    Outcome {
        pass: same_data && same_model && round_trip && same_search,
        detail: format!(
            "datasets identical={same_data}, models identical={same_model}, save/load bit-exact={round_trip}, search results identical={same_search}"
        ),
    }
}

fn main() {
    ehdnas::parallel::init_global_pool().unwrap();
    let secs = Duration::from_secs;
    let mut ok = true;
    ok &= report("A1", "gradient fidelity", secs(30), a1);

    let start = Instant::now();
    let s = surrogates();
    let fit_time = start.elapsed();
    println!("     (surrogates for A2-A6 trained in {:.1}s)", fit_time.as_secs_f64());
    ok &= report("A2", "surrogate accuracy", secs(300).saturating_sub(fit_time), || {
        a2(&s)
    });
    ok &= report("A3", "LUT gap direction", secs(60), || a3(&s));
    ok &= report("A4", "oracle recovery", secs(300), || a4(&s));
    ok &= report("A5", "trade-off monotonicity", secs(1200), || a5(&s));
    ok &= report("A6", "budget transfer", secs(600), || a6(&s));
    ok &= report("A7", "feasibility semantics", secs(1), a7);
    ok &= report("A8", "determinism and round-trip", secs(120), a8);
    if !ok {
        std::process::exit(1);
    }
}
