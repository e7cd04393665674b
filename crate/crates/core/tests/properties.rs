use digmn_core::lda::{subsample_documents, Document};
use digmn_core::metrics::{auroc, macro_f1};
use digmn_core::nn::{adam_step, ortho_penalty, AdamConfig, AdamState, HasParams, Param};
use digmn_core::pca::Pca;
use digmn_core::train::split_indices;
use proptest::prelude::*;

struct Params(Vec<Param>);

impl HasParams for Params {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.0.iter().for_each(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.0.iter_mut().for_each(f);
    }
}

fn param(name: &str, values: &[f64], grads: &[f64], exempt: bool) -> Param {
    let mut p = Param::zeros(name, &[values.len()]);
    p.value.copy_from_slice(values);
    p.grad.copy_from_slice(grads);
    p.decay_exempt = exempt;
    p
}

fn pairwise_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut half_units, mut pairs) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1;
                half_units += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    half_units as f64 / (2 * pairs) as f64
}

fn labelled_scores() -> impl Strategy<Value = (Vec<i32>, Vec<bool>)> {
    (2usize..60).prop_flat_map(|n| {
        (prop::collection::vec(-15i32..15, n), prop::collection::vec(any::<bool>(), n))
            .prop_filter("both classes", |(_, l)| l.iter().any(|&b| b) && l.iter().any(|&b| !b))
    })
}

proptest! {
    #[test]
    fn auroc_matches_pair_counting((raw, labels) in labelled_scores()) {
        let scores: Vec<f64> = raw.iter().map(|&s| s as f64 * 0.25).collect();
        prop_assert_eq!(auroc(&scores, &labels).unwrap(), pairwise_auroc(&scores, &labels));
    }

    #[test]
    fn auroc_ignores_monotone_rescaling((raw, labels) in labelled_scores(), scale in 0.01f64..50.0) {
        let base: Vec<f64> = raw.iter().map(|&s| s as f64).collect();
        let warped: Vec<f64> = raw.iter().map(|&s| (s as f64 / 4.0).exp() * scale - 7.0).collect();
        let flipped: Vec<f64> = base.iter().map(|s| -s).collect();
        let a = auroc(&base, &labels).unwrap();
        prop_assert_eq!(a, auroc(&warped, &labels).unwrap());
        prop_assert!((a + auroc(&flipped, &labels).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn macro_f1_matches_counting_oracle(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..80)) {
        let (pred, truth): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let mut total = 0.0;
        for c in 0..4 {
            let tp = pred.iter().zip(&truth).filter(|&(&p, &t)| p == c && t == c).count() as f64;
            let fp = pred.iter().zip(&truth).filter(|&(&p, &t)| p == c && t != c).count() as f64;
            let fn_ = pred.iter().zip(&truth).filter(|&(&p, &t)| p != c && t == c).count() as f64;
            if tp > 0.0 {
                total += 2.0 * tp / (2.0 * tp + fp + fn_);
            }
        }
        prop_assert!((macro_f1(&pred, &truth, 4).unwrap() - total / 4.0).abs() <= 1e-12);
    }

    #[test]
    fn adam_updates_each_parameter_independently(
        a in prop::collection::vec(-2.0f64..2.0, 1..6),
        b in prop::collection::vec(-2.0f64..2.0, 1..6),
        ga in prop::collection::vec(-1.0f64..1.0, 6),
        gb in prop::collection::vec(-1.0f64..1.0, 6),
        steps in 1u64..4,
    ) {
        let cfg = AdamConfig::default();
        let mut joint = Params(vec![param("a", &a, &ga[..a.len()], false), param("b", &b, &gb[..b.len()], true)]);
        let mut only_a = Params(vec![param("a", &a, &ga[..a.len()], false)]);
        let mut only_b = Params(vec![param("b", &b, &gb[..b.len()], true)]);
        let (mut s1, mut s2, mut s3) = (AdamState::new(), AdamState::new(), AdamState::new());
        for t in 1..=steps {
            adam_step(&mut joint, &mut s1, &cfg, 1e-2, t).unwrap();
            adam_step(&mut only_a, &mut s2, &cfg, 1e-2, t).unwrap();
            adam_step(&mut only_b, &mut s3, &cfg, 1e-2, t).unwrap();
        }
        prop_assert_eq!(&joint.0[0].value, &only_a.0[0].value);
        prop_assert_eq!(&joint.0[1].value, &only_b.0[0].value);
    }

    #[test]
    fn ortho_penalty_is_invariant_to_row_signs_and_order(
        w in prop::collection::vec(-1.0f64..1.0, 12),
        flip in 0usize..3,
    ) {
        let base = ortho_penalty(&w, 3, 4);
        prop_assert!(base >= 0.0);
        let mut signed = w.clone();
        signed[flip * 4..flip * 4 + 4].iter_mut().for_each(|v| *v = -*v);
        prop_assert!((ortho_penalty(&signed, 3, 4) - base).abs() <= 1e-12 * (1.0 + base));
        let mut swapped = w[4..8].to_vec();
        swapped.extend_from_slice(&w[..4]);
        swapped.extend_from_slice(&w[8..]);
        prop_assert!((ortho_penalty(&swapped, 3, 4) - base).abs() <= 1e-12 * (1.0 + base));
    }

    #[test]
    fn pca_variances_descend_and_full_rank_reconstructs(
        pts in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 5..25),
    ) {
        let pca = Pca::fit(&pts).unwrap();
        prop_assert!(pca.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(pca.eigenvalues.iter().all(|&v| v >= -1e-12));
        for p in &pts {
            let back = pca.reconstruct(&pca.project(p, 4));
            for (x, y) in p.iter().zip(&back) {
                prop_assert!((x - y).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn split_is_a_seeded_partition(n in 3usize..400, seed in any::<u64>()) {
        let parts = split_indices(n, [0.8, 0.1, 0.1], seed).unwrap();
        let mut all: Vec<usize> = parts.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(parts, split_indices(n, [0.8, 0.1, 0.1], seed).unwrap());
    }

    #[test]
    fn subsample_keeps_order_and_size(n in 0usize..200, max in 1usize..250, seed in any::<u64>()) {
        let docs: Vec<Document> = (0..n).map(|i| vec![(i / 10) as u8, (i % 10) as u8]).collect();
        let picked = subsample_documents(&docs, max, seed);
        prop_assert_eq!(picked.len(), n.min(max));
        let positions: Vec<usize> = picked.iter().map(|d| docs.iter().position(|x| x == d).unwrap()).collect();
        prop_assert!(positions.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(picked, subsample_documents(&docs, max, seed));
    }
}
