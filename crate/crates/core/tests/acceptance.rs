//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with a
//! failure status if any criterion fails.

mod common;

use std::time::Instant;

use micromeasure::categorical::Categorical;
use micromeasure::communities::{build_graph, louvain, LouvainConfig};
use micromeasure::epidemic::*;
use micromeasure::metrics::{compute_metrics, ensemble_metrics, EnsembleMetrics};
use micromeasure::mobility::{compare_models, MobilityModel, ModelKind};
use micromeasure::scenario::{self, ScenarioConfig};
use micromeasure::seed::{derive_seed, stream};
use micromeasure::strategies::*;
use micromeasure::synth::{Country, CountrySpec};
use micromeasure::trace::{generate_trace, split_train_test, AntennaId, GeneratorParams};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn seeds(list: &[(usize, u64)]) -> Vec<SeedInfectives> {
    list.iter()
        .map(|&(a, count)| SeedInfectives { region: AntennaId::from_index(a - 1), count })
        .collect()
}

fn single_region() -> MobilityModel {
    MobilityModel::planted(1, None, |_, _| Categorical::point(1, 0)).unwrap()
}

fn compile(cfg: StrategyConfig, country: &Country, g: f64) -> Strategy {
    let comm = cfg.needs_communities().then(|| {
        let graph = build_graph(&country.model, &country.populations, 1e-6).unwrap();
        louvain(&graph, &LouvainConfig::default()).assignment
    });
    Strategy::new(cfg, country.populations.len(), g, comm).unwrap()
}

fn ensemble(setup: &PopulationSetup, model: &MobilityModel, params: &EpidemicParams, strategy: &Strategy, runs: u64, master: u64) -> Vec<RunRecord> {
    (0..runs)
        .map(|r| run(setup, model, params, strategy, derive_seed(master, r, "run"), RunOptions::default()).unwrap())
        .collect()
}

fn mean_field_oracle() -> Outcome {
    let start = Instant::now();
    let n = 10_000u64;
    let setup = PopulationSetup { populations: vec![n], mobile_fraction: 0.55, seeds: seeds(&[(1, 10)]) };
    let params = EpidemicParams { steps: 120, ..Default::default() };
    let records = ensemble(&setup, &single_region(), &params, &Strategy::baseline(), 1000, 1);
    let m = ensemble_metrics(&records).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let det = common::mean_field(n as f64, 10.0, 1.0, 0.5, 120);
    let det_peak = det.iter().map(|x| x[1]).fold(0.0, f64::max) / n as f64;
    let det_q = det.last().unwrap()[2] / n as f64;
    let peak_err = (m.i_star.mean - det_peak).abs() / det_peak;
    let q_err = (m.q_star.mean - det_q).abs();
    let traj_err = (m.mean_trajectory_peak() - det_peak).abs() / det_peak;
    outcome(
        peak_err <= 0.02 && q_err <= 0.01 && elapsed < 30.0,
        format!(
            "peak I* mean {:.5} vs recursion {:.5} (rel err {:.4}); Q* {:.5} vs {:.5} (abs err {:.5}); peak of mean trajectory rel err {:.4}; {:.1}s",
            m.i_star.mean, det_peak, peak_err, m.q_star.mean, det_q, q_err, traj_err, elapsed
        ),
    )
}

fn country100(seed: u64) -> Country {
    CountrySpec { antennas: 100, clusters: 5, population: 100_000, seed, ..Default::default() }.build().unwrap()
}

fn conservation() -> Outcome {
    let country = country100(1);
    let cfgs = [
        StrategyConfig::baseline(),
        StrategyConfig::cut_communities(0.7),
        StrategyConfig::decrease_mix(0.05),
        StrategyConfig::go_home(0.5),
    ];
    let mut steps_checked = 0;
    let mut violations = Vec::new();
    for cfg in cfgs {
        let strategy = compile(cfg, &country, 0.5);
        for (k, mf) in [0.0, 0.55, 1.0].into_iter().enumerate() {
            let setup = PopulationSetup {
                populations: country.populations.clone(),
                mobile_fraction: mf,
                seeds: seeds(&[(3, 5), (50, 5), (90, 5)]),
            };
            let params = EpidemicParams { steps: 80, ..Default::default() };
            let mut sim = Simulation::new(&setup, &country.model, params, &strategy, k as u64).unwrap();
            let total = setup.total();
            let classes: Vec<u64> = (0..100).map(|c| sim.state().class_total(c)).collect();
            let mut last = sim.state().totals();
            for step in 0..80 {
                sim.mobility_phase();
                let moved = sim.state().totals();
                sim.epidemic_phase();
                let t = sim.state().totals();
                let ok = moved == last
                    && t.iter().sum::<u64>() == total
                    && t[2] >= last[2]
                    && (0..100).all(|c| sim.state().class_total(c) == classes[c]);
                if !ok {
                    violations.push(format!("{} mf={mf} step {step}", cfg.kind.name()));
                }
                last = t;
                steps_checked += 1;
            }
        }
    }
    outcome(violations.is_empty(), format!("{steps_checked} steps checked, {} violations {:?}", violations.len(), violations.first()))
}

fn no_op_equivalences() -> Outcome {
    let country = country100(2);
    let setup = PopulationSetup {
        populations: country.populations.clone(),
        mobile_fraction: 0.55,
        seeds: seeds(&[(3, 5), (7, 5), (40, 5), (67, 4), (75, 4)]),
    };
    let params = EpidemicParams { steps: 150, ..Default::default() };
    let base = ensemble(&setup, &country.model, &params, &Strategy::baseline(), 3, 5);
    let mut identical = Vec::new();
    for cfg in [StrategyConfig::cut_communities(0.0), StrategyConfig::go_home(0.0), StrategyConfig::decrease_mix(1.0)] {
        let other = ensemble(&setup, &country.model, &params, &compile(cfg, &country, 0.5), 3, 5);
        identical.push((cfg.kind.name(), other == base));
    }
    let mut rng = stream(3, 0, "lambda");
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let beta: f64 = rng.random_range(0.01..=1.0);
        let n_region: u64 = rng.random_range(1..1_000_000);
        let n_group = rng.random_range(0..=n_region);
        let i_region = rng.random_range(0..=n_region);
        let i_group = rng.random_range(i_region.saturating_sub(n_region - n_group)..=i_region.min(n_group));
        let l = decreasemix_lambda(beta, 1.0, n_group, n_region, i_group, i_region);
        worst = worst.max((l - beta * i_region as f64 / n_region as f64).abs());
    }
    let all = identical.iter().all(|x| x.1);
    outcome(all && worst <= 1e-12, format!("bit-identical to baseline: {identical:?}; max |lambda(q=1) - beta I/N| = {worst:.2e}"))
}

fn beta_split() -> Outcome {
    let mut rng = stream(4, 0, "split");
    let mut failures = 0;
    for _ in 0..10_000 {
        let beta: f64 = if rng.random::<bool>() { 1.0 } else { rng.random_range(0.001..=1.0) };
        let q: f64 = rng.random_range(0.0..=1.0);
        let n_region: u64 = rng.random_range(1..10_000_000);
        let n_group = rng.random_range(0..=n_region);
        let (own, other) = contact_split(beta, q, n_group, n_region);
        if own + other != beta {
            failures += 1;
        }
    }
    outcome(failures == 0, format!("{failures} of 10000 tuples break beta_own + beta_other == beta"))
}

fn gohome_stabilization() -> Outcome {
    let g = 0.5;
    // Expected one-step change of I for every state of regions up to 300.
    let mut worst = f64::NEG_INFINITY;
    for n in 1..=300u64 {
        for i in 0..=n {
            for s in [0, (n - i) / 2, n - i] {
                let (local, _) = gohome_lambda(1.0, g, n, i, 0);
                worst = worst.max(local * s as f64 - g * i as f64);
            }
        }
    }
    // Monte Carlo: one region of 1000 locals with 100 infectives.
    let setup = PopulationSetup { populations: vec![1000], mobile_fraction: 0.55, seeds: seeds(&[(1, 100)]) };
    let model = single_region();
    let strategy = Strategy::new(StrategyConfig::go_home(0.5), 1, g, None).unwrap();
    let params = EpidemicParams { steps: 1, ..Default::default() };
    let draws = 10_000;
    let mut sum = 0.0;
    let mut sq = 0.0;
    for d in 0..draws {
        let mut sim = Simulation::new(&setup, &model, params, &strategy, d).unwrap();
        sim.epidemic_phase();
        let di = sim.state().totals()[1] as f64 - 100.0;
        sum += di;
        sq += di * di;
    }
    let mean = sum / draws as f64;
    let sd = ((sq - sum * sum / draws as f64) / (draws as f64 - 1.0)).sqrt();
    let three_sigma = 3.0 * sd / (draws as f64).sqrt();
    outcome(
        worst <= 1e-9 && mean <= three_sigma,
        format!("max expected dI over all states {worst:.3e}; Monte Carlo mean dI {mean:.3} (3 sigma {three_sigma:.3})"),
    )
}

fn blockade() -> Outcome {
    let spec = CountrySpec { antennas: 20, clusters: 2, population: 20_000, seed: 3, ..Default::default() };
    let country = spec.build().unwrap();
    let graph = build_graph(&country.model, &country.populations, 1e-6).unwrap();
    let comm = louvain(&graph, &LouvainConfig::default()).assignment;
    let seed_comm = comm.of_index(0);
    let planted_match = (0..20).all(|a| (comm.of_index(a) == seed_comm) == (country.clusters[a] == country.clusters[0]));
    let strategy = Strategy::new(StrategyConfig::cut_communities(1.0), 20, 0.5, Some(comm.clone())).unwrap();
    let setup = PopulationSetup {
        populations: country.populations.clone(),
        mobile_fraction: 0.55,
        seeds: seeds(&[(1, 5), (4, 5), (8, 5)]),
    };
    let params = EpidemicParams { steps: 200, ..Default::default() };
    let mut b_infective = 0u64;
    let mut a_infected = 0.0;
    for s in 0..10 {
        let rec = run(&setup, &country.model, &params, &strategy, derive_seed(6, s, "run"), RunOptions { record_regions: true }).unwrap();
        for step in rec.regions.as_ref().unwrap() {
            b_infective += (0..20).filter(|&a| comm.of_index(a) != seed_comm).map(|a| step[a][1]).sum::<u64>();
        }
        a_infected += compute_metrics(&rec).q_star;
    }
    outcome(
        planted_match && b_infective == 0,
        format!(
            "communities match the planted clusters: {planted_match}; infective-steps in community B: {b_infective}; mean Q* {:.3}",
            a_infected / 10.0
        ),
    )
}

/// Generator for the model-ranking benchmark: homes hold 90% of night
/// calls, daytime calls mostly go to a shared hub that differs between
/// morning and afternoon, and night-time call activity is a fifth of the
/// daytime rate.
fn ranking_spec(seed: u64) -> CountrySpec {
    CountrySpec {
        antennas: 50,
        clusters: 5,
        population: 50_000,
        stay_home: [0.2, 0.2, 0.9],
        weekend_stay_home: [0.2, 0.2, 0.9],
        hub_share: [0.8, 0.8, 0.0],
        neighbours: 4,
        cross_cluster: 0.05,
        seed,
        ..Default::default()
    }
}

fn model_ranking() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for rep in 0..5 {
        let country = ranking_spec(rep).build().unwrap();
        let weights: Vec<f64> = country.populations.iter().map(|&p| p as f64).collect();
        let params = GeneratorParams { users: 500, days: 14, calls_per_day: 2.0, activity: [1.0, 1.0, 0.2], seed: rep };
        let g = generate_trace(&country.model, &params, Some(&weights)).unwrap();
        let (train, test) = split_train_test(&g.trace, 0.1, rep).unwrap();
        let reports = compare_models(&train, &test, 0.5).unwrap();
        let order: Vec<ModelKind> = reports.iter().map(|r| r.kind).collect();
        ok &= order == [ModelKind::HomeAntennaTime, ModelKind::SubPrefTime, ModelKind::TimeOnly, ModelKind::Markov];
        lines.push(reports.iter().map(|r| format!("{:.3}", r.avg_loglik)).collect::<Vec<_>>().join(" > "));
    }
    outcome(ok, format!("HAT > SPM > TM > MC per repetition: [{}]", lines.join("; ")))
}

fn louvain_correctness() -> Outcome {
    use micromeasure::communities::MobilityGraph;
    let mut exact = 0;
    let mut single_pass = 0;
    let mut monotone = true;
    for seed in 0..10u64 {
        let mut rng = stream(seed, 0, "graph");
        let mut edges = Vec::new();
        for i in 0..6u32 {
            for j in i + 1..6 {
                if rng.random::<f64>() < 0.5 {
                    edges.push((i, j, rng.random_range(0.1..5.0)));
                }
            }
        }
        edges.push((0, 5, 0.5));
        let g = MobilityGraph::from_edges(6, edges);
        let best = common::set_partitions(6)
            .iter()
            .map(|p| common::modularity_double_sum(6, g.edges(), p))
            .fold(f64::NEG_INFINITY, f64::max);
        let r = louvain(&g, &LouvainConfig { seed, ..Default::default() });
        if (r.modularity - best).abs() <= 1e-9 {
            exact += 1;
        }
        let one = louvain(&g, &LouvainConfig { seed, restarts: 1, ..Default::default() });
        if (one.modularity - best).abs() <= 1e-9 {
            single_pass += 1;
        }
        monotone &= r.levels.windows(2).all(|w| w[1] >= w[0]);
    }
    let mut min_ari: f64 = 1.0;
    for seed in 0..10 {
        let (g, truth) = common::planted_partition(4, 30, 0.3, 0.01, 1000 + seed);
        let r = louvain(&g, &LouvainConfig { seed, ..Default::default() });
        monotone &= r.levels.windows(2).all(|w| w[1] >= w[0]);
        let found: Vec<usize> = r.assignment.labels().iter().map(|&c| c as usize).collect();
        min_ari = min_ari.min(common::adjusted_rand_index(&truth, &found));
    }
    outcome(
        exact == 10 && min_ari >= 0.9 && monotone,
        format!("exact optimum on {exact}/10 six-node graphs ({single_pass}/10 with a single pass); min ARI {min_ari:.3}; modularity monotone across levels: {monotone}"),
    )
}

fn directional_effects() -> Outcome {
    // Desk-scale population: at 10^5 residents a near-blockade sometimes
    // keeps whole clusters uninfected until the horizon.
    let country = CountrySpec { antennas: 100, clusters: 5, population: 1_000_000, seed: 1, ..Default::default() }
        .build()
        .unwrap();
    let setup = PopulationSetup {
        populations: country.populations.clone(),
        mobile_fraction: 0.55,
        // All seeds in the first cluster.
        seeds: seeds(&[(3, 5), (7, 5), (11, 5), (15, 4), (19, 4)]),
    };
    let params = EpidemicParams { steps: 400, ..Default::default() };
    let cell = |cfg: StrategyConfig| -> EnsembleMetrics {
        let strategy = compile(cfg, &country, params.g);
        ensemble_metrics(&ensemble(&setup, &country.model, &params, &strategy, 10, 21)).unwrap()
    };
    let base = cell(StrategyConfig::baseline());
    let dm: Vec<EnsembleMetrics> = [0.01, 0.1, 1.0].into_iter().map(|q| cell(StrategyConfig::decrease_mix(q))).collect();
    let gh: Vec<EnsembleMetrics> = [0.5, 0.1, 0.0].into_iter().map(|p| cell(StrategyConfig::go_home(p))).collect();
    let cc: Vec<EnsembleMetrics> = [0.9, 0.99].into_iter().map(|p| cell(StrategyConfig::cut_communities(p))).collect();
    let t = |m: &EnsembleMetrics| m.t_star.mean;
    let q = |m: &EnsembleMetrics| m.q_star.mean;
    let dm_ok = t(&dm[0]) > t(&dm[1]) && t(&dm[1]) > t(&dm[2]);
    let gh_ok = q(&gh[0]) < q(&gh[1]) && q(&gh[1]) < q(&gh[2]);
    let cc_ok = cc.iter().all(|m| t(m) > t(&base) && (q(m) - q(&base)).abs() < 0.05);
    outcome(
        dm_ok && gh_ok && cc_ok,
        format!(
            "DecreaseMix T* q=0.01/0.1/1: {:.1}/{:.1}/{:.1}; GoHome Q* p=0.5/0.1/0: {:.4}/{:.4}/{:.4}; CutCommunities T* p=0.9/0.99 vs baseline: {:.1}/{:.1} vs {:.1}, Q* {:.4}/{:.4} vs {:.4}",
            t(&dm[0]), t(&dm[1]), t(&dm[2]),
            q(&gh[0]), q(&gh[1]), q(&gh[2]),
            t(&cc[0]), t(&cc[1]), t(&base),
            q(&cc[0]), q(&cc[1]), q(&base)
        ),
    )
}

fn performance() -> Outcome {
    let spec = CountrySpec { antennas: 1231, clusters: 30, population: 1_000_000, ..Default::default() };
    let country = spec.build().unwrap();
    let seeds = scenario::default_seeds(1231)
        .iter()
        .map(|s| SeedInfectives { region: AntennaId::from_index(s.antenna as usize - 1), count: s.count })
        .collect();
    let setup = PopulationSetup { populations: country.populations.clone(), mobile_fraction: 0.55, seeds };
    let params = EpidemicParams { steps: 400, ..Default::default() };
    let start = Instant::now();
    let rec = run(&setup, &country.model, &params, &Strategy::baseline(), 1, RunOptions::default()).unwrap();
    let single = start.elapsed().as_secs_f64();
    let n = rec.series.last().map(|s| s.s + s.i + s.r).unwrap_or(0);

    // Ensemble scaling on a shorter horizon.
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let workers = cores.min(4);
    let short = EpidemicParams { steps: 40, ..Default::default() };
    let timed = |w: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(w).build().unwrap();
        let start = Instant::now();
        let out: Vec<RunRecord> = pool.install(|| {
            use rayon::prelude::*;
            (0..10u64)
                .into_par_iter()
                .map(|r| run(&setup, &country.model, &short, &Strategy::baseline(), r, RunOptions::default()).unwrap())
                .collect()
        });
        (start.elapsed().as_secs_f64(), out)
    };
    let (t1, a) = timed(1);
    let (tw, b) = timed(workers);
    let speedup = t1 / tw;
    let efficiency = speedup / workers as f64;
    outcome(
        single < 60.0 && n == 1_000_000 && efficiency >= 0.7 && a == b,
        format!(
            "1231 regions, N = {n}, 400 steps: {single:.1}s; 10-run ensemble: {t1:.1}s on 1 worker, {tw:.1}s on {workers} (speedup {speedup:.2}, efficiency {efficiency:.2}, {cores} core(s) available); results identical across worker counts: {}",
            a == b
        ),
    )
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
seed = 2024
ensemble = 4
workers = 2
record_regions = true
output = "first"

[mobility.synthetic]
antennas = 40
clusters = 4
population = 20000

[epidemic]
steps = 90

[strategy]
kind = "cut_communities"
p = 0.7

[[compare]]
kind = "go_home"
p = 0.3

[[compare]]
kind = "decrease_mix"
q = 0.2
"#;
    let cfg = ScenarioConfig::from_toml_str(text, dir.path()).unwrap();
    let mut mismatches = Vec::new();
    let mut files = 0;
    let first = scenario::run_scenario(&cfg).unwrap();
    let mut cmp_cfg = cfg.clone();
    cmp_cfg.output = dir.path().join("compare");
    let cells = std::mem::take(&mut cmp_cfg.compare);
    let cmp = scenario::compare_strategies(&cmp_cfg, &cells).unwrap();
    for (manifest, src, dst) in [(&first, "first", "second"), (&cmp, "compare", "compare_again")] {
        let loaded = scenario::RunManifest::load(&dir.path().join(src).join(scenario::MANIFEST_FILE)).unwrap();
        let again = scenario::rerun(&loaded, Some(&dir.path().join(dst))).unwrap();
        for f in &manifest.outputs {
            files += 1;
            let a = std::fs::read(dir.path().join(src).join(&f.path)).unwrap();
            let b = std::fs::read(dir.path().join(dst).join(&f.path)).unwrap();
            if a != b {
                mismatches.push(f.path.clone());
            }
        }
        if !manifest.same_outputs(&again) {
            mismatches.push(format!("{src}: manifest inventory"));
        }
    }
    outcome(mismatches.is_empty(), format!("{files} output files compared after rerun from manifest; mismatches: {mismatches:?}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("mean-field oracle", mean_field_oracle),
        ("conservation", conservation),
        ("no-op equivalences", no_op_equivalences),
        ("beta-split identity", beta_split),
        ("GoHome stabilization", gohome_stabilization),
        ("blockade", blockade),
        ("model ranking", model_ranking),
        ("Louvain correctness", louvain_correctness),
        ("directional strategy effects", directional_effects),
        ("performance", performance),
        ("reproducibility", reproducibility),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let o = check();
        println!("criterion {:>2} {name}: {} ({})", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
