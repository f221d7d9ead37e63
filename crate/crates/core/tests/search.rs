use ehdnas::archspace::{BlockKind, SearchSpaceSpec, DEFAULT_CATALOG};
use ehdnas::dnas::{brute_force_best, gen_task_data, search, sweep_beta, FinalConfig, HwKind, Objective, SearchConfig};
use ehdnas::hwloss::{HwLossModel, Scaler};
use ehdnas::perfmodel::{benchmark_generic, build_lut, HardwareBudget, Paradigm};

const GRID: [f64; 6] = [0.1, 0.01, 0.005, 0.001, 0.0005, 0.0001];

fn small_space() -> SearchSpaceSpec {
    SearchSpaceSpec::new(3, 16, 8, 3, &DEFAULT_CATALOG).unwrap()
}

fn quick(beta: f64, kind: HwKind, seed: u64) -> SearchConfig {
    SearchConfig {
        beta,
        hw_kind: kind,
        epochs: 3,
        batch_size: 64,
        seed,
        ..SearchConfig::default()
    }
}

#[test]
fn lut_and_deep_searches_share_a_result_schema() {
    let space = small_space();
    let task = gen_task_data(0, 300, 8, 3, 0.5).unwrap();
    let lut = build_lut(&space, &HardwareBudget::large());
    let model = HwLossModel::init(
        5,
        3,
        10,
        16,
        16,
        0.1,
        Scaler {
            mean_ms: 0.002,
            std_ms: 1e-5,
        },
        0,
    )
    .unwrap();
    let budgets = HardwareBudget::builtin();
    let a = search(&space, &task, Some(&lut), &quick(0.01, HwKind::Lut, 1), &budgets).unwrap();
    let b = search(&space, &task, Some(&model), &quick(0.01, HwKind::Deep, 1), &budgets).unwrap();
    let keys = |r: &ehdnas::dnas::SearchResult| {
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        let top: Vec<String> = v.as_object().unwrap().keys().cloned().collect();
        let hist: Vec<String> = v["history"][0].as_object().unwrap().keys().cloned().collect();
        (top, hist)
    };
    assert_eq!(keys(&a), keys(&b));
    assert!(a.history.iter().chain(&b.history).all(|h| h.hw_term_ms.is_some()));
}

#[test]
fn degenerate_task_recovers_the_fastest_two_layer_network() {
    let space = SearchSpaceSpec::new(2, 32, 16, 4, &[BlockKind::FullDense, BlockKind::Identity]).unwrap();
    let budget = HardwareBudget::large();
    let (best, best_ms) = brute_force_best(&space, &budget, Paradigm::Generic, Objective::Latency)
        .unwrap()
        .unwrap();
    let direct: Vec<f64> = space
        .enumerate()
        .unwrap()
        .map(|a| benchmark_generic(&a, &space, &budget).unwrap().total_ms.unwrap())
        .collect();
    assert_eq!(best_ms, direct.iter().copied().fold(f64::INFINITY, f64::min));

    let task = gen_task_data(0, 200, 16, 4, 0.5).unwrap().with_constant_labels();
    let lut = build_lut(&space, &budget);
    for seed in 0..3 {
        let cfg = SearchConfig {
            freeze_head: true,
            epochs: 10,
            ..quick(0.01, HwKind::Lut, seed)
        };
        assert_eq!(search(&space, &task, Some(&lut), &cfg, &[]).unwrap().arch, best);
    }
}

#[test]
fn sweep_over_the_grid_has_one_row_per_cell() {
    let space = small_space();
    let task = gen_task_data(0, 150, 8, 3, 0.5).unwrap();
    let lut = build_lut(&space, &HardwareBudget::large());
    let final_cfg = FinalConfig {
        epochs: 2,
        ..FinalConfig::default()
    };
    let rows = sweep_beta(
        &space,
        &task,
        Some(&lut),
        &quick(0.0, HwKind::Lut, 0),
        &final_cfg,
        &GRID,
        &[0, 1],
    )
    .unwrap();
    assert_eq!(rows.len(), 12);
    let cells: Vec<(f64, u64)> = rows.iter().map(|r| (r.beta, r.seed)).collect();
    let expected: Vec<(f64, u64)> = GRID.iter().flat_map(|&b| [(b, 0), (b, 1)]).collect();
    assert_eq!(cells, expected);
}

#[test]
fn zero_beta_sweep_row_matches_plain_search() {
    let space = small_space();
    let task = gen_task_data(2, 150, 8, 3, 0.5).unwrap();
    let lut = build_lut(&space, &HardwareBudget::large());
    let final_cfg = FinalConfig {
        epochs: 2,
        ..FinalConfig::default()
    };
    let rows = sweep_beta(
        &space,
        &task,
        Some(&lut),
        &quick(0.0, HwKind::Lut, 0),
        &final_cfg,
        &[0.0],
        &[3],
    )
    .unwrap();
    let plain = search(
        &space,
        &task,
        None,
        &quick(0.0, HwKind::None, 3),
        &HardwareBudget::builtin(),
    )
    .unwrap();
    assert_eq!(rows[0].arch, plain.arch);
    assert_eq!(rows[0].latency_small_ms, plain.searched_latency_ms["small"]);
}

#[test]
fn sweeps_do_not_depend_on_the_thread_count() {
    let space = small_space();
    let task = gen_task_data(1, 150, 8, 3, 0.5).unwrap();
    let lut = build_lut(&space, &HardwareBudget::large());
    let final_cfg = FinalConfig {
        epochs: 2,
        ..FinalConfig::default()
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            sweep_beta(
                &space,
                &task,
                Some(&lut),
                &quick(0.0, HwKind::Lut, 0),
                &final_cfg,
                &[0.1, 0.001],
                &[0, 1],
            )
            .unwrap()
        })
    };
    assert_eq!(run(1), run(4));
}
