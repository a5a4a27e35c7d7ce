use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn obj(accuracy: f64, flops: u64) -> Objectives {
    Objectives { accuracy, flops }
}

fn point() -> ConfigPoint {
    SearchSpace::default().point([0, 0, 0])
}

fn trial(id: u64, accuracy: f64, flops: u64) -> Trial {
    Trial::complete(id, point(), obj(accuracy, flops), 0.0)
}

/// Distinct objective pairs of a front, as comparable keys.
fn objective_set(front: &[Trial]) -> BTreeSet<(u64, u64)> {
    front
        .iter()
        .map(|t| {
            let o = t.objectives.unwrap();
            ((o.accuracy * 1e6).round() as u64, o.flops)
        })
        .collect()
}

fn brute_force_front(eval: &dyn Evaluator) -> Vec<Trial> {
    let all: Vec<Trial> = SearchSpace::default()
        .points()
        .into_iter()
        .enumerate()
        .map(|(i, p)| Trial::complete(i as u64, p, eval.evaluate(&p, 0).unwrap(), 0.0))
        .collect();
    pareto_front(&all)
}

fn study(sampler: SamplerKind, n: usize, seed: u64, eval: &dyn Evaluator) -> StudyReport {
    let dir = tempfile::tempdir().unwrap();
    let store = TrialStore::open(dir.path().join("study.jsonl")).unwrap();
    let cfg = StudyConfig {
        sampler,
        n_trials: n,
        seed,
        ..Default::default()
    };
    run_study(&SearchSpace::default(), &cfg, eval, &store).unwrap()
}

/// Accuracy also rises with width, so the true front has many members.
struct WideObjective(SyntheticObjective);

impl Evaluator for WideObjective {
    fn evaluate(&self, p: &ConfigPoint, seed: u64) -> crate::Result<Objectives> {
        let o = self.0.evaluate(p, seed)?;
        let width = (p.embed_dim as f64 / 8.0).log2();
        let acc = 0.58 + 0.01 * p.num_transformers as f64 + 0.012 * width + 0.002 * p.num_heads as f64
            - 0.1 * p.dropout;
        Ok(obj((acc * 1e4).round() / 1e4, o.flops))
    }
}

#[test]
fn space_has_96_distinct_points() {
    let s = SearchSpace::default();
    let pts = s.points();
    assert_eq!((s.len(), pts.len()), (96, 96));
    for (i, a) in pts.iter().enumerate() {
        assert!(pts[i + 1..].iter().all(|b| a != b));
        assert_eq!(s.point(s.genes(a).unwrap()), *a);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!((0..500).all(|_| s.contains(&s.sample(&mut rng))));
}

#[test]
fn dominance_examples() {
    assert!(dominates(&obj(0.70, 100), &obj(0.65, 200)));
    assert!(!dominates(&obj(0.70, 100), &obj(0.70, 100)));
    assert!(!dominates(&obj(0.70, 300), &obj(0.65, 200)));
    assert!(!dominates(&obj(0.65, 200), &obj(0.70, 300)));

    assert!(constrained_dominates(&trial(0, 0.66, 1_000_000), &trial(1, 0.64, 100)));
    assert!(!constrained_dominates(&trial(1, 0.64, 100), &trial(0, 0.66, 1_000_000)));
    assert!(constrained_dominates(&trial(0, 0.64, 900), &trial(1, 0.60, 100)));
    assert!(constrained_dominates(&trial(0, 0.70, 100), &trial(1, 0.66, 200)));
    assert!(!constrained_dominates(&trial(0, 0.70, 300), &trial(1, 0.66, 200)));
    let failed = Trial::failed(2, point(), "diverged".into(), 0.0);
    assert!(constrained_dominates(&trial(0, 0.10, 100), &failed));
    assert!(!constrained_dominates(&failed, &failed.clone()));
}

#[test]
fn nondominated_sort_example_and_oracle() {
    let pts = [obj(0.7, 100), obj(0.6, 50), obj(0.65, 200)];
    assert_eq!(nondominated_sort(&pts, dominates), vec![vec![0, 1], vec![2]]);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let pts: Vec<Objectives> = (0..rng.random_range(1..25))
            .map(|_| obj(rng.random_range(0..10) as f64 / 10.0, rng.random_range(0..10)))
            .collect();
        let fronts = nondominated_sort(&pts, dominates);
        let mut rank = vec![usize::MAX; pts.len()];
        for (r, f) in fronts.iter().enumerate() {
            for &i in f {
                rank[i] = r;
            }
        }
        for i in 0..pts.len() {
            assert!(rank[i] != usize::MAX);
            for j in 0..pts.len() {
                if dominates(&pts[i], &pts[j]) {
                    assert!(rank[i] < rank[j]);
                }
            }
            // a point past the first front has a dominator one front up
            if rank[i] > 0 {
                assert!((0..pts.len()).any(|j| rank[j] == rank[i] - 1 && dominates(&pts[j], &pts[i])));
            }
        }
    }
}

#[test]
fn crowding_keeps_boundaries() {
    let pts = [obj(0.7, 100), obj(0.6, 50), obj(0.65, 70), obj(0.68, 90)];
    let d = crowding_distance(&pts);
    assert!(d[0].is_infinite() && d[1].is_infinite());
    assert!(d[2].is_finite() && d[3].is_finite() && d[2] > 0.0);
    assert!(crowding_distance(&pts[..2]).iter().all(|d| d.is_infinite()));
}

#[test]
fn hypervolume_closed_forms() {
    assert_eq!(hypervolume(&[(0.25, 0.25)], (1.0, 1.0)).unwrap(), 0.5625);
    assert_eq!(hypervolume(&[], (1.0, 1.0)).unwrap(), 0.0);
    assert!(hypervolume(&[(0.5, 1.5)], (1.0, 1.0)).is_err());
    assert!(hypervolume(&[(-0.1, 0.5)], (1.0, 1.0)).is_err());
    // dominated points add nothing
    let hv = hypervolume(&[(0.25, 0.25), (0.5, 0.5)], (1.0, 1.0)).unwrap();
    assert_eq!(hv, 0.5625);
}

fn monte_carlo_hv(pts: &[(f64, f64)], rng: &mut ChaCha8Rng) -> f64 {
    let n = 1_000_000;
    let hits = (0..n)
        .filter(|_| {
            let (x, y): (f64, f64) = (rng.random(), rng.random());
            pts.iter().any(|p| p.0 <= x && p.1 <= y)
        })
        .count();
    hits as f64 / n as f64
}

#[test]
fn hypervolume_matches_monte_carlo_and_ignores_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..3 {
        let mut pts: Vec<(f64, f64)> = (0..10).map(|_| (rng.random(), rng.random())).collect();
        let hv = hypervolume(&pts, (1.0, 1.0)).unwrap();
        let mc = monte_carlo_hv(&pts, &mut rng);
        assert!((hv - mc).abs() <= 0.01 * mc, "{hv} vs {mc}");
        for _ in 0..5 {
            rand::seq::SliceRandom::shuffle(pts.as_mut_slice(), &mut rng);
            assert_eq!(hypervolume(&pts, (1.0, 1.0)).unwrap(), hv);
        }
    }
}

fn fixture_15() -> Vec<Trial> {
    let rows = [
        (0.60, 100),
        (0.70, 500),
        (0.66, 300),
        (0.68, 300),
        (0.72, 900),
        (0.64, 50),
        (0.70, 600),
        (0.75, 2000),
        (0.65, 200),
        (0.74, 2500),
        (0.69, 450),
        (0.71, 800),
        (0.66, 250),
        (0.73, 1000),
        (0.67, 280),
    ];
    rows.iter().enumerate().map(|(i, &(a, f))| trial(i as u64, a, f)).collect()
}

#[test]
fn hv_at_matches_manual_front() {
    let trials = fixture_15();
    let front = pareto_front(&trials);
    let ids: Vec<u64> = front.iter().map(|t| t.id).collect();
    assert_eq!(ids, vec![8, 12, 14, 3, 10, 1, 11, 4, 13, 7]);

    let norm = Normalization::from_trials(&trials).unwrap();
    assert_eq!(norm.accuracy, (0.60, 0.75));
    assert_eq!(norm.flops, (50.0, 2500.0));
    // vertical slabs between consecutive front points, by falling accuracy
    let mut pts: Vec<(f64, f64)> = [(0.75, 2000), (0.73, 1000), (0.72, 900), (0.71, 800), (0.70, 500), (0.69, 450), (0.68, 300), (0.67, 280), (0.66, 250), (0.65, 200)]
        .iter()
        .map(|&(a, f)| ((0.75 - a) / 0.15, (f as f64 - 50.0) / 2450.0))
        .collect();
    pts.push((1.0, 0.0));
    let manual: f64 = pts.windows(2).map(|w| (w[1].0 - w[0].0) * (1.0 - w[0].1)).sum();
    assert!((hv_at(&trials, 15, &norm).unwrap() - manual).abs() < 1e-12);
}

#[test]
fn hv_at_is_monotone_and_zero_when_infeasible() {
    let trials = fixture_15();
    let norm = Normalization::from_trials(&trials).unwrap();
    let curve: Vec<f64> = (0..=15).map(|n| hv_at(&trials, n, &norm).unwrap()).collect();
    assert!(curve.windows(2).all(|w| w[1] >= w[0]));
    assert_eq!(curve[1], 0.0);
    assert!(hv_at(&trials, 16, &norm).is_err());
    let infeasible: Vec<Trial> = (0..5).map(|i| trial(i, 0.5 + 0.01 * i as f64, 10 * i + 10)).collect();
    let n2 = Normalization::from_trials(&infeasible).unwrap();
    assert_eq!(hv_at(&infeasible, 5, &n2).unwrap(), 0.0);
}

#[test]
fn tell_rejects_unknown_ids() {
    let mut s = NsgaState::new(SearchSpace::default(), NsgaConfig::default(), 0);
    let (id, p) = s.ask();
    let t = Trial::complete(id + 7, p, obj(0.7, 10), 0.0);
    assert!(s.tell(&t).unwrap_err().to_string().contains("unknown trial id"));
    s.tell(&Trial::complete(id, p, obj(0.7, 10), 0.0)).unwrap();
    // a second tell for the same id is unknown too
    assert!(s.tell(&Trial::complete(id, p, obj(0.7, 10), 0.0)).is_err());
    let mut r = RandomSampler::new(SearchSpace::default(), 0);
    assert!(r.tell(&t).is_err());
}

#[test]
fn population_size_is_constant() {
    let eval = SyntheticObjective::default();
    let mut s = NsgaState::new(SearchSpace::default(), NsgaConfig::default(), 4);
    for k in 0..120 {
        let (id, p) = s.ask();
        s.tell(&Trial::complete(id, p, eval.evaluate(&p, 0).unwrap(), 0.0)).unwrap();
        if k >= 19 {
            assert_eq!(s.population().len(), 20);
        }
    }
    assert_eq!(s.generation, 6);
}

#[test]
fn nsga_recovers_the_brute_force_front() {
    let synth = SyntheticObjective::default();
    let wide = WideObjective(SyntheticObjective::default());
    for (eval, seeds) in [(&synth as &dyn Evaluator, 0..10), (&wide as &dyn Evaluator, 0..10)] {
        let truth = objective_set(&brute_force_front(eval));
        for seed in seeds {
            let rep = study(SamplerKind::Nsga2, 200, seed, eval);
            assert_eq!(objective_set(&rep.front), truth, "seed {seed}");
        }
    }
}

#[test]
fn front_is_sound_and_table_sorted() {
    let eval = WideObjective(SyntheticObjective::default());
    let rep = study(SamplerKind::Nsga2, 80, 9, &eval);
    for f in &rep.front {
        assert!(f.accuracy().unwrap() >= FEASIBLE_ACCURACY);
        let o = f.objectives.unwrap();
        assert!(!rep.trials.iter().filter(|t| t.is_feasible()).any(|t| dominates(&t.objectives.unwrap(), &o)));
    }
    assert!(rep.front.windows(2).all(|w| w[0].flops() <= w[1].flops() && w[0].accuracy() <= w[1].accuracy()));
    let table = front_table(&rep.front);
    assert_eq!(table.lines().count(), rep.front.len() + 1);
    assert!(table.starts_with("Index"));
}

#[test]
fn resumed_study_matches_single_run() {
    let eval = WideObjective(SyntheticObjective::default());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.jsonl");
    let cfg = |n| StudyConfig {
        n_trials: n,
        seed: 5,
        ..Default::default()
    };
    let space = SearchSpace::default();
    {
        let store = TrialStore::open(&path).unwrap();
        assert_eq!(run_study(&space, &cfg(40), &eval, &store).unwrap().trials.len(), 40);
    }
    let store = TrialStore::open(&path).unwrap();
    let resumed = run_study(&space, &cfg(80), &eval, &store).unwrap();
    let single = study(SamplerKind::Nsga2, 80, 5, &eval);
    let key = |r: &StudyReport| r.trials.iter().map(|t| (t.id, t.point)).collect::<Vec<_>>();
    assert_eq!(key(&resumed), key(&single));
    assert_eq!(objective_set(&resumed.front), objective_set(&single.front));
    assert_eq!(read_trials(&path).unwrap().len(), 80);
}

fn median_hv_at_80(eval: &dyn Evaluator) -> (f64, f64) {
    let runs = |kind| (0..10).map(|s| study(kind, 80, s, eval).trials).collect::<Vec<_>>();
    let (nsga, random) = (runs(SamplerKind::Nsga2), runs(SamplerKind::Random));
    // one scale for both samplers, so the comparison is not a scaling artefact
    let all: Vec<Trial> = nsga.iter().chain(&random).flatten().cloned().collect();
    let norm = Normalization::from_trials(&all).unwrap();
    let median = |studies: &[Vec<Trial>]| {
        let mut v: Vec<f64> = studies.iter().map(|t| hv_at(t, 80, &norm).unwrap()).collect();
        v.sort_by(f64::total_cmp);
        (v[4] + v[5]) / 2.0
    };
    (median(&nsga), median(&random))
}

#[test]
fn nsga_beats_random_at_80() {
    let (n, r) = median_hv_at_80(&SyntheticObjective::default());
    assert!(n >= r, "nsga2 {n} random {r}");
    let (n, r) = median_hv_at_80(&WideObjective(SyntheticObjective::default()));
    assert!(n > r, "nsga2 {n} random {r}");
}

fn reference_study() -> Vec<Trial> {
    let rows: [(u64, f64, usize, usize, usize, f64); 13] = [
        (26_168, 0.6525, 4, 8, 2, 0.00),
        (32_648, 0.6564, 5, 8, 2, 0.00),
        (39_128, 0.6564, 6, 8, 2, 0.00),
        (89_200, 0.6625, 4, 16, 2, 0.00),
        (111_376, 0.6653, 5, 16, 2, 0.00),
        (244_640, 0.6671, 3, 32, 2, 0.00),
        (325_856, 0.6685, 4, 32, 2, 0.00),
        (407_072, 0.6700, 5, 32, 2, 0.00),
        (931_654, 0.6705, 3, 64, 4, 0.00),
        (1_241_544, 0.6715, 4, 64, 2, 0.00),
        (1_861_324, 0.6718, 6, 64, 4, 0.05),
        (3_632_780, 0.6724, 3, 128, 8, 0.00),
        (4_842_384, 0.6732, 4, 128, 8, 0.05),
    ];
    rows.iter()
        .enumerate()
        .map(|(i, &(flops, acc, n, d, h, p))| {
            let pt = ConfigPoint {
                num_transformers: n,
                embed_dim: d,
                num_heads: h,
                dropout: p,
            };
            Trial::complete(i as u64, pt, obj(acc, flops), 0.0)
        })
        .collect()
}

#[test]
fn select_tiny_on_table_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t4.jsonl");
    {
        let store = TrialStore::open(&path).unwrap();
        for t in reference_study() {
            store.append(&t).unwrap();
        }
    }
    let front = pareto_front(&read_trials(&path).unwrap());
    // the 39,128-FLOP row has the same accuracy as a cheaper one
    assert_eq!(front.len(), 12);
    assert!(front.iter().all(|t| t.id != 2));
    let tiny = select_tiny(&front).unwrap();
    assert_eq!(
        (tiny.point.num_transformers, tiny.point.embed_dim, tiny.point.num_heads, tiny.point.dropout),
        (4, 8, 2, 0.0)
    );
    assert_eq!(tiny.flops(), Some(26_168));

    assert_eq!(select_tiny(&front[5..6]).unwrap(), front[5]);
    let tie = [trial(0, 0.66, 100), trial(1, 0.70, 100), trial(2, 0.90, 101)];
    assert_eq!(select_tiny(&tie).unwrap().id, 1);
    assert!(select_tiny(&[]).is_err());
    assert!(select_tiny(&[trial(0, 0.5, 1)]).is_err());
}

#[test]
fn store_lock_and_failed_trials() {
    struct Flaky;
    impl Evaluator for Flaky {
        fn evaluate(&self, p: &ConfigPoint, s: u64) -> crate::Result<Objectives> {
            if p.embed_dim == 8 {
                return Err(crate::Error::Divergence {
                    epoch: 0,
                    reason: "nan".into(),
                });
            }
            SyntheticObjective::default().evaluate(p, s)
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.jsonl");
    let store = TrialStore::open(&path).unwrap();
    assert!(TrialStore::open(&path).unwrap_err().to_string().contains("locked"));
    let cfg = StudyConfig {
        sampler: SamplerKind::Random,
        n_trials: 60,
        ..Default::default()
    };
    let rep = run_study(&SearchSpace::default(), &cfg, &Flaky, &store).unwrap();
    let failed = rep.trials.iter().filter(|t| t.status == TrialStatus::Failed).count();
    assert!(failed > 0);
    assert!(rep.front.iter().all(|t| t.point.embed_dim != 8));
    drop(store);
    let again = read_trials(&path).unwrap();
    assert_eq!(again, rep.trials);
    TrialStore::open(&path).unwrap();
}

#[test]
fn parallel_workers_run_every_trial() {
    let dir = tempfile::tempdir().unwrap();
    let store = TrialStore::open(dir.path().join("p.jsonl")).unwrap();
    let cfg = StudyConfig {
        n_trials: 50,
        workers: 4,
        ..Default::default()
    };
    let rep = run_study(&SearchSpace::default(), &cfg, &SyntheticObjective::default(), &store).unwrap();
    let ids: Vec<u64> = rep.trials.iter().map(|t| t.id).collect();
    assert_eq!(ids, (0..50).collect::<Vec<_>>());
}

#[test]
fn trial_json_round_trip() {
    let t = trial(3, 0.7, 1234);
    let s = serde_json::to_string(&t).unwrap();
    assert_eq!(serde_json::from_str::<Trial>(&s).unwrap(), t);
    assert!(serde_json::from_str::<Trial>(&s.replace("\"id\"", "\"extra\":1,\"id\"")).is_err());
    let mut bad = t.clone();
    bad.feasible = false;
    assert!(bad.validate().is_err());
}

