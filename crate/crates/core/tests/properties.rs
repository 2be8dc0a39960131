use phylovar::invariants::{Bases, ProbeConfig};
use phylovar::membership::{
    decompose_edge, edge_rank_test, membership, quartet_splits, split_support, MembershipMode,
    ScoreKind, Verdict,
};
use phylovar::model::{sample_params, sample_stochastic, simulate_sequences, SampleMode};
use phylovar::{parse_newick, AnyTensor, Exec, Tree};
use proptest::prelude::*;

const BINARY: [&str; 4] = [
    "((a,b),(c,d));",
    "((a,c),(b,d));",
    "((a1,a2),a3,(a4,a5));",
    "(((a,b),c),(d,e));",
];

fn tree(i: usize) -> Tree {
    parse_newick(BINARY[i % BINARY.len()]).unwrap()
}

fn mode(general: bool) -> SampleMode {
    if general {
        SampleMode::General
    } else {
        SampleMode::Stochastic
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn model_points_pass_every_membership_test(i in 0usize..4, seed in any::<u64>(), general in any::<bool>()) {
        let t = tree(i);
        let p = sample_params(&t, 2, seed, mode(general)).joint(&t).unwrap();
        prop_assert_eq!(edge_rank_test(&p, &t, 2, Exec::Sequential).unwrap().verdict, Verdict::Accept);
        let exact = membership(&p, &t, 2, &Bases::new(), MembershipMode::Exact, Exec::Parallel).unwrap();
        prop_assert_eq!(exact.verdict, Verdict::Accept);
        let cfg = ProbeConfig { seed, ..ProbeConfig::default() };
        let probe = membership(&p, &t, 2, &Bases::new(), MembershipMode::Probe(cfg), Exec::Parallel).unwrap();
        prop_assert_eq!(probe.verdict, Verdict::ProbabilisticAccept);
    }

    #[test]
    fn edge_decomposition_recomposes(i in 0usize..4, seed in any::<u64>(), kappa in 2usize..4) {
        let t = tree(i);
        let p = sample_params(&t, kappa, seed, SampleMode::General).joint(&t).unwrap();
        for e in t.internal_edges().collect::<Vec<_>>() {
            let d = decompose_edge(&p, &t, e, kappa).unwrap();
            prop_assert!(d.rank <= kappa);
            prop_assert_eq!(d.recompose().unwrap().permute_to(t.taxa()).unwrap(), p.clone());
        }
    }

    #[test]
    fn simulation_ignores_execution_policy(seed in any::<u64>(), sites in 1usize..400) {
        let t = tree(2);
        let params = sample_stochastic(&t, 2, seed, 3);
        let a = simulate_sequences(&t, &params, sites, seed, Exec::Sequential).unwrap();
        let b = simulate_sequences(&t, &params, sites, seed, Exec::Parallel).unwrap();
        prop_assert_eq!(a.sum(), phylovar::Q::from_integer((sites as i64).into()));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn exact_model_scores_its_own_split_zero(seed in any::<u64>(), i in 0usize..2) {
        let t = tree(i);
        let p = sample_params(&t, 2, seed, SampleMode::Stochastic).joint(&t).unwrap();
        let splits = quartet_splits(t.taxa()).unwrap();
        let truth = t.edge_split(t.internal_edges().next().unwrap()).unwrap();
        let scores = split_support(&AnyTensor::Exact(p), &splits, 2, ScoreKind::SingularRatio, Exec::Sequential).unwrap();
        let own = scores.iter().find(|s| s.split == truth).unwrap();
        prop_assert_eq!(own.score, 0.0);
    }

    #[test]
    fn newick_round_trip_keeps_topology(i in 0usize..4) {
        let t = tree(i);
        let back = parse_newick(&t.to_newick()).unwrap();
        prop_assert!(back.same_topology(&t));
    }
}
