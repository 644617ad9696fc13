mod common;

use search2vec::eval::{
    evaluate, export_grade_score_distribution, macro_ndcg, ndcg, ndcg_curve, oauc,
    read_judgments, score_dataset, ScoreMode, ScoredPair, ScoringModel,
};
use search2vec::rng::SplitMix64;
use search2vec::VectorSetF64;

use common::*;

#[test]
fn oauc_matches_pairwise_oracle() {
    let mut rng = SplitMix64::new(1);
    for _ in 0..2_000 {
        let list = random_judged_list(&mut rng, 8);
        match oracle_oauc(&list) {
            Some(want) => assert!((oauc(&list).unwrap() - want).abs() < 1e-12, "{:?}", list),
            None => assert!(oauc(&list).is_err()),
        }
    }
}

#[test]
fn ndcg_matches_permutation_oracle() {
    let mut rng = SplitMix64::new(2);
    for _ in 0..300 {
        let list = random_judged_list(&mut rng, 8);
        let want = oracle_ndcg(&list, None);
        assert!((ndcg(&list, None).unwrap() - want).abs() < 1e-12, "{:?}", list);
        let k = 1 + rng.below(9);
        let want = oracle_ndcg(&list, Some(k));
        assert!((ndcg(&list, Some(k)).unwrap() - want).abs() < 1e-12, "{:?} @{}", list, k);
    }
}

#[test]
fn macro_ndcg_matches_oracle() {
    let mut rng = SplitMix64::new(3);
    for _ in 0..30 {
        let queries: Vec<Vec<(u8, f64)>> = (0..1 + rng.below(5)).map(|_| random_judged_list(&mut rng, 7)).collect();
        let got = macro_ndcg(&queries, None).unwrap();
        assert!((got - oracle_macro_ndcg(&queries, None)).abs() < 1e-12);
        for (k, v) in ndcg_curve(&queries).unwrap() {
            assert!((v - oracle_macro_ndcg(&queries, Some(k))).abs() < 1e-12);
        }
    }
}

#[test]
fn perfect_ordering_scores_one() {
    let list = [(5, 0.9), (4, 0.7), (3, 0.5), (2, 0.3), (1, 0.1)];
    assert_eq!(oauc(&list).unwrap(), 1.0);
    assert!((ndcg(&list, None).unwrap() - 1.0).abs() < 1e-15);
}

#[test]
fn hand_computed_ndcg() {
    let got = ndcg(&[(5, 0.2), (1, 0.8)], None).unwrap();
    assert!((got - 0.6499).abs() < 1e-4, "{}", got);
}

#[test]
fn oauc_invariant_under_monotone_transform() {
    let mut rng = SplitMix64::new(4);
    for _ in 0..100 {
        let list = random_judged_list(&mut rng, 8);
        let squashed: Vec<(u8, f64)> = list.iter().map(|&(g, s)| (g, (3.0 * s).exp() - 7.0)).collect();
        if let Ok(a) = oauc(&list) {
            assert!((a - oauc(&squashed).unwrap()).abs() < 1e-12);
        }
    }
}

#[test]
fn metrics_ignore_record_order() {
    let mut rng = SplitMix64::new(5);
    let mut pairs: Vec<ScoredPair> = (0..40)
        .map(|i| ScoredPair {
            query: format!("q{}", i % 6),
            ad: format!("ad{}", i),
            grade: 1 + rng.below(5) as u8,
            score: rng.next_f64(),
        })
        .collect();
    let before = evaluate(&pairs).unwrap();
    rng.shuffle(&mut pairs);
    assert_eq!(evaluate(&pairs).unwrap(), before);
}

#[test]
fn quartiles_use_nearest_rank() {
    let pairs: Vec<ScoredPair> = [0.1, 0.2, 0.3, 0.4, 0.5]
        .iter()
        .map(|&s| ScoredPair {
            query: "q".into(),
            ad: "a".into(),
            grade: 3,
            score: s,
        })
        .collect();
    let rows = export_grade_score_distribution(&pairs);
    assert_eq!(rows.len(), 1);
    let r = &rows[0];
    assert_eq!((r.min, r.q1, r.median, r.q3, r.max), (0.1, 0.2, 0.3, 0.4, 0.5));
    assert!((r.mean - 0.3).abs() < 1e-15);
}

#[test]
fn coverage_accounts_for_every_pair() {
    let judgments = read_judgments(&b"red shoes\tad1\t5\nred shoes\tad2\t1\nblue hat\tad1\t3\nred shoes\tad9\t2\n"[..]).unwrap();
    let mut queries = VectorSetF64::empty(2);
    queries.push("q:red shoes".into(), &[1.0, 0.0]).unwrap();
    let mut ads = VectorSetF64::empty(2);
    ads.push("a:ad1".into(), &[1.0, 0.0]).unwrap();
    ads.push("a:ad2".into(), &[0.0, 1.0]).unwrap();
    let model = ScoringModel {
        queries: &queries,
        ads: &ads,
        index: None,
    };
    let (scored, coverage) = score_dataset(&judgments, ScoreMode::Context, &model).unwrap();
    assert_eq!(coverage.total, 4);
    assert_eq!(coverage.scored + coverage.missing_query + coverage.missing_ad, coverage.total);
    assert_eq!(scored.len(), 2);
    assert_eq!(scored[0].score, 1.0);
}
