use aspis_core::aggregation::aspis_aggregate;
use aspis_core::analysis::{epsilon_aspis_optimal, measure_epsilon};
use aspis_core::attacks::{optimal_plan, weak_plan};
use aspis_core::combinatorics::binomial;
use aspis_core::detection::{build_agreement_graph, detect, enumerate_maximum_cliques};
use aspis_core::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ws(ids: &[usize]) -> WorkerSet {
    WorkerSet::from_one_based(ids).unwrap()
}

fn random_truths(files: usize, dim: usize, seed: u64) -> Vec<Gradient> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..files).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

#[test]
fn weak_attack_on_seven_workers_is_detected() {
    let params = ClusterParams::new(7, 3, 3).unwrap();
    let a = build_assignment(params).unwrap();
    let truths = random_truths(a.file_count(), 3, 11);
    let plan = weak_plan(params, ws(&[1, 2, 3]), DistortionMethod::default()).unwrap();
    // each adversary distorts all C(6,2) = 15 of its files
    let distorted = plan.distorted_files(&a);
    for adv in 0..3 {
        assert_eq!(a.files_of_worker(adv).iter().filter(|f| distorted.contains(f)).count(), 15);
    }
    let report = apply_attack(&plan, &WorkerReport::honest(&a, 0, &truths).unwrap(), &a).unwrap();
    let graph = build_agreement_graph(&report, &a).unwrap();
    for adv in 0..3 {
        for h in 3..7 {
            assert!(!graph.has_edge(adv, h));
        }
    }
    let outcome = detect(&report, &a).unwrap();
    assert_eq!(outcome.honest(), Some(ws(&[4, 5, 6, 7])));
    // only the all-adversary file {U1,U2,U3} is lost
    let agg = aspis_aggregate(&report, &a, &outcome, &truths).unwrap();
    assert_eq!(agg.corrupted_files.len(), 1);
    assert_eq!(agg.used_files.len(), 34);
}

#[test]
fn optimal_attack_on_seven_workers_is_ambiguous() {
    let params = ClusterParams::new(7, 3, 3).unwrap();
    let a = build_assignment(params).unwrap();
    let truths = random_truths(a.file_count(), 3, 12);
    let plan = optimal_plan(params, ws(&[1, 2, 3]), ws(&[4, 5, 6]), DistortionMethod::default()).unwrap();
    let report = apply_attack(&plan, &WorkerReport::honest(&a, 0, &truths).unwrap(), &a).unwrap();
    let outcome = detect(&report, &a).unwrap();
    match &outcome {
        DetectionOutcome::Ambiguous { maximum_cliques } => {
            assert_eq!(maximum_cliques, &vec![ws(&[1, 2, 3, 7]), ws(&[4, 5, 6, 7])]);
        }
        other => panic!("expected ambiguity, got {other:?}"),
    }
    let agg = aspis_aggregate(&report, &a, &outcome, &truths).unwrap();
    assert_eq!(agg.corrupted_files.len(), 10);
}

/// Counts files with at least `r'` adversaries whose remaining members all
/// lie in the target, by explicit enumeration of member lists.
fn count_by_hand(k: usize, r: usize, q: usize) -> usize {
    let majority = (r + 1) / 2;
    let mut count = 0;
    aspis_core::combinatorics::for_each_subset(k, r, |file| {
        let adv = file.iter().filter(|&&w| w < q).count();
        let in_target = file.iter().filter(|&&w| (q..2 * q).contains(&w)).count();
        if adv >= majority && adv + in_target == r {
            count += 1;
        }
    });
    count
}

#[test]
fn optimal_plan_corrupts_half_of_two_q_choose_r() {
    for (k, r) in [(7, 3), (9, 3), (15, 3), (21, 3), (11, 5), (15, 5)] {
        for q in 0..=(k - 1) / 2 {
            let params = ClusterParams::new(k, r, q).unwrap();
            let a = build_assignment(params).unwrap();
            let plan = optimal_plan(
                params,
                WorkerSet::first(q),
                WorkerSet::first(2 * q).difference(WorkerSet::first(q)),
                DistortionMethod::default(),
            )
            .unwrap();
            let n = plan.distorted_files(&a).len();
            assert_eq!(n as u64, binomial(2 * q as u64, r as u64) / 2, "K={k} r={r} q={q}");
            assert_eq!(n, count_by_hand(k, r, q));
            assert_eq!(n as u64, epsilon_aspis_optimal(params).corrupted);
        }
    }
}

#[test]
fn weak_adversaries_fall_below_degree_threshold() {
    for (k, q) in [(7, 3), (15, 7), (21, 5)] {
        let params = ClusterParams::new(k, 3, q).unwrap();
        let plan = weak_plan(params, WorkerSet::first(q), DistortionMethod::default()).unwrap();
        let graph = plan.induced_agreement_graph(params);
        for adv in 0..q {
            assert_eq!(graph.degree(adv), q - 1);
            assert!(graph.degree(adv) < k - q - 1);
        }
        assert_eq!(enumerate_maximum_cliques(&graph, q), vec![WorkerSet::first(k).difference(WorkerSet::first(q))]);
    }
}

#[test]
fn measurement_is_deterministic() {
    let params = ClusterParams::new(15, 3, 5).unwrap();
    let spec = AttackSpec::new(AttackMode::Optimal, DistortionMethod::Alie { z: 1.5 });
    for kind in [AggregatorKind::Aspis, AggregatorKind::DetoxMom, AggregatorKind::BaselineMedian] {
        assert_eq!(
            measure_epsilon(params, &spec, kind, 99).unwrap(),
            measure_epsilon(params, &spec, kind, 99).unwrap()
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// When detection finds exactly the honest set, the update is the mean
    /// of the true gradients of the files it kept.
    #[test]
    fn case_one_uses_true_gradients(seed in any::<u64>(), q in 0usize..4) {
        let params = ClusterParams::new(9, 3, q).unwrap();
        let a = build_assignment(params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut adversaries = WorkerSet::EMPTY;
        while adversaries.len() < q {
            adversaries.insert(rng.gen_range(0..9));
        }
        let truths = random_truths(a.file_count(), 2, seed);
        let plan = weak_plan(params, adversaries, DistortionMethod::Reversed { c: 2.0 }).unwrap();
        let report = apply_attack(&plan, &WorkerReport::honest(&a, 0, &truths).unwrap(), &a).unwrap();
        let outcome = detect(&report, &a).unwrap();
        let honest = WorkerSet::first(9).difference(adversaries);
        prop_assert_eq!(outcome.honest(), Some(honest));
        let agg = aspis_aggregate(&report, &a, &outcome, &truths).unwrap();
        let kept: Vec<usize> = (0..a.file_count())
            .filter(|&f| !a.file_members(f).is_subset(adversaries))
            .collect();
        prop_assert_eq!(agg.used_files.iter().copied().collect::<Vec<_>>(), kept.clone());
        for d in 0..2 {
            let mean = kept.iter().map(|&f| truths[f][d]).sum::<f64>() / kept.len() as f64;
            prop_assert!((agg.gradient[d] - mean).abs() < 1e-12);
        }
    }
}
