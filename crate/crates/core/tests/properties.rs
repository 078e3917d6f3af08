use nalgebra::DMatrix;
use proptest::prelude::*;

use sumtransfer::corpus::{gen_synthetic, load_corpus, save_corpus, SynthConfig};
use sumtransfer::dpp::{
    condition_on, map_exact, map_greedy, subset_log_prob, KernelMatrix, SubsetSelection,
};
use sumtransfer::evaluation::{match_pairs, maximum_matching, score, MatchConfig};
use sumtransfer::learning::{ascend, LearnConfig, Problem};
use sumtransfer::segments::Segmentation;
use sumtransfer::similarity::{
    frame_sim, shot_max_similarity_matrix, similarity_matrix, FeatureSequence, Metric, Similarity,
};
use sumtransfer::transfer::{
    idealized_kernel_for, synthesize_kernel, Exemplar, ModelParams, Query, TransferModel, Weights,
};

fn psd(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (1..=n + 2).prop_flat_map(move |m| {
        prop::collection::vec(-1.0..1.0f64, n * m).prop_map(move |v| {
            let a = DMatrix::from_vec(n, m, v);
            let l = &a * a.transpose();
            (&l + l.transpose()) * 0.5
        })
    })
}

fn sized_psd(max: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (1..=max).prop_flat_map(psd)
}

fn unit_rows(n: usize, dim: usize) -> impl Strategy<Value = FeatureSequence> {
    prop::collection::vec(-1.0..1.0f64, n * dim)
        .prop_filter_map("zero frame", move |v| FeatureSequence::normalized(v, n, dim).ok())
}

fn mask_subset(n: usize, mask: u32) -> SubsetSelection {
    SubsetSelection::new((0..n).filter(|i| mask >> i & 1 == 1).collect(), n).unwrap()
}

fn exemplar(seq: FeatureSequence, mask: u32, id: &str) -> Exemplar {
    let n = seq.len();
    let mut y = mask_subset(n, mask);
    if y.is_empty() {
        y = SubsetSelection::new(vec![0], n).unwrap();
    }
    Exemplar::new(id, seq, y, None, None).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn probabilities_are_bounded(l in sized_psd(7), mask in any::<u32>()) {
        let n = l.nrows();
        let k = KernelMatrix::new(l).unwrap();
        let p = subset_log_prob(&k, &mask_subset(n, mask)).unwrap().exp();
        prop_assert!((0.0..=1.0 + 1e-9).contains(&p));
    }

    #[test]
    fn greedy_never_beats_exact(l in sized_psd(10)) {
        let k = KernelMatrix::new(l).unwrap();
        let g = subset_log_prob(&k, &map_greedy(&k)).unwrap();
        let e = subset_log_prob(&k, &map_exact(&k).unwrap()).unwrap();
        prop_assert!(e >= g - 1e-12);
    }

    #[test]
    fn exact_map_is_the_brute_force_argmax(l in sized_psd(8)) {
        let n = l.nrows();
        let k = KernelMatrix::new(l).unwrap();
        let best = map_exact(&k).unwrap();
        let best_lp = subset_log_prob(&k, &best).unwrap();
        for mask in 0u32..1 << n {
            let lp = subset_log_prob(&k, &mask_subset(n, mask)).unwrap();
            prop_assert!(lp <= best_lp + 1e-12);
        }
    }

    #[test]
    fn duplicate_items_are_never_both_selected(l in sized_psd(6), i in 0usize..6) {
        let n = l.nrows();
        let i = i % n;
        // append a copy of item i
        let mut big = DMatrix::zeros(n + 1, n + 1);
        big.view_mut((0, 0), (n, n)).copy_from(&l);
        for j in 0..n {
            big[(n, j)] = l[(i, j)];
            big[(j, n)] = l[(j, i)];
        }
        big[(n, n)] = l[(i, i)];
        let y = map_exact(&KernelMatrix::new(big).unwrap()).unwrap();
        prop_assert!(!(y.contains(i) && y.contains(n)));
    }

    #[test]
    fn conditioning_matches_closed_form(l in (2usize..=7).prop_flat_map(psd), mask in any::<u32>()) {
        let n = l.nrows();
        let l = l + DMatrix::identity(n, n) * 0.1;
        let mut forced = mask_subset(n, mask);
        if forced.len() == n {
            forced = SubsetSelection::new(forced.indices()[..n - 1].to_vec(), n).unwrap();
        }
        let cond = condition_on(&KernelMatrix::new(l.clone()).unwrap(), &forced).unwrap();
        let rest = forced.complement();
        prop_assert_eq!(&cond.remaining, &rest);
        // ([(L + I_rest)^-1]_rest)^-1 - I
        let mut shifted = l.clone();
        for &j in &rest {
            shifted[(j, j)] += 1.0;
        }
        let inv = shifted.try_inverse().unwrap();
        let block = inv.select_rows(&rest).select_columns(&rest);
        let closed = block.try_inverse().unwrap() - DMatrix::identity(rest.len(), rest.len());
        let scale = closed.abs().max().max(1.0);
        prop_assert!((cond.kernel.matrix() - &closed).abs().max() <= 1e-8 * scale);
    }

    #[test]
    fn similarity_is_symmetric(u in unit_rows(1, 4), v in unit_rows(1, 4), sigma in 0.1..3.0f64,
                               w in prop::collection::vec(0.1..3.0f64, 4)) {
        for sim in [Similarity::Dot, Similarity::Rbf { sigma }, Similarity::Mahalanobis(Metric::Diagonal(w.clone()))] {
            let a = frame_sim(u.frame(0), v.frame(0), &sim).unwrap();
            let b = frame_sim(v.frame(0), u.frame(0), &sim).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn rbf_decreases_with_distance(t1 in 0.0..3.0f64, dt in 1e-3..1.0f64, sigma in 0.1..3.0f64) {
        let at = |t: f64| [t.cos(), t.sin()];
        let origin = at(0.0);
        let near = frame_sim(&origin, &at(t1), &Similarity::Rbf { sigma }).unwrap();
        let far = frame_sim(&origin, &at((t1 + dt).min(std::f64::consts::PI)), &Similarity::Rbf { sigma }).unwrap();
        if t1 + dt <= std::f64::consts::PI {
            prop_assert!(far < near);
        }
    }

    #[test]
    fn similarity_entries_in_range(a in unit_rows(4, 3), b in unit_rows(3, 3)) {
        let dot = similarity_matrix(&a, &b, &Similarity::Dot).unwrap();
        prop_assert!(dot.iter().all(|x| (-1.0 - 1e-12..=1.0 + 1e-12).contains(x)));
        let rbf = similarity_matrix(&a, &b, &Similarity::default()).unwrap();
        prop_assert!(rbf.iter().all(|x| *x > 0.0 && *x <= 1.0));
    }

    #[test]
    fn shot_max_is_block_max(a in unit_rows(7, 3), b in unit_rows(5, 3), la in 1usize..4, lb in 1usize..4) {
        let sa = Segmentation::uniform(7, la).unwrap();
        let sb = Segmentation::uniform(5, lb).unwrap();
        let sim = Similarity::default();
        let full = similarity_matrix(&a, &b, &sim).unwrap();
        let shots = shot_max_similarity_matrix(&a, &b, &sa, &sb, &sim).unwrap();
        for (p, ra) in sa.ranges().enumerate() {
            for (q, rb) in sb.ranges().enumerate() {
                let mut m = f64::NEG_INFINITY;
                for i in ra.clone() {
                    for k in rb.clone() {
                        m = m.max(full[(i, k)]);
                    }
                }
                prop_assert_eq!(shots[(p, q)], m);
            }
        }
    }

    #[test]
    fn synthesized_kernels_are_psd_and_order_invariant(
        seqs in prop::collection::vec((1usize..6).prop_flat_map(|n| unit_rows(n, 3)), 1..4),
        masks in prop::collection::vec(any::<u32>(), 4),
        alphas in prop::collection::vec(0.0..4.0f64, 4),
        test in (1usize..7).prop_flat_map(|n| unit_rows(n, 3)),
    ) {
        let exemplars: Vec<Exemplar> = seqs
            .into_iter()
            .enumerate()
            .map(|(i, s)| exemplar(s, masks[i], &format!("e{i}")))
            .collect();
        let r = exemplars.len();
        let a = alphas[..r].to_vec();
        let params = |a: Vec<f64>| ModelParams { weights: Weights::Shared(a), ..ModelParams::uniform(r, 1.0, Similarity::Dot) };
        let model = TransferModel::new(exemplars.clone(), params(a.clone())).unwrap();
        let l = synthesize_kernel(Query::new(&test), &model).unwrap();
        // dot similarities can be negative; the result must still validate as PSD
        prop_assert!(KernelMatrix::new(l.matrix().clone()).is_ok());

        let rev_ex: Vec<Exemplar> = exemplars.iter().rev().cloned().collect();
        let rev_a: Vec<f64> = a.iter().rev().copied().collect();
        let rev = synthesize_kernel(Query::new(&test), &TransferModel::new(rev_ex, params(rev_a)).unwrap()).unwrap();
        let scale = l.matrix().abs().max().max(1e-300);
        prop_assert!((l.matrix() - rev.matrix()).abs().max() <= 1e-12 * scale);

        // doubling alpha_0 adds exactly one more S_0 L_0 S_0^T
        let mut doubled = a.clone();
        doubled[0] *= 2.0;
        let l2 = synthesize_kernel(Query::new(&test), &TransferModel::new(exemplars.clone(), params(doubled)).unwrap()).unwrap();
        let single = {
            let mut only = vec![0.0; r];
            only[0] = a[0];
            synthesize_kernel(Query::new(&test), &TransferModel::new(exemplars, params(only)).unwrap()).unwrap()
        };
        let expected = l.matrix() + single.matrix();
        prop_assert!((l2.matrix() - expected).abs().max() <= 1e-12 * l2.matrix().abs().max().max(1.0));
    }

    #[test]
    fn peaked_similarity_embeds_exemplar_kernel(perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle(), mask in 1u32..32, alpha in 0.5..5.0f64) {
        // exemplar frames are basis vectors; test frames are the same vectors in another order
        let basis = |i: usize| (0..5).map(|d| if d == i { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
        let ex_seq = FeatureSequence::from_rows(&(0..5).map(basis).collect::<Vec<_>>()).unwrap();
        let test = FeatureSequence::from_rows(&perm.iter().map(|&k| basis(k)).collect::<Vec<_>>()).unwrap();
        let ex = exemplar(ex_seq, mask, "r");
        let y = ex.summary.clone();
        let model = TransferModel::new(vec![ex], ModelParams::uniform(1, alpha, Similarity::Dot)).unwrap();
        let l = synthesize_kernel(Query::new(&test), &model).unwrap();
        let lr = idealized_kernel_for(&y, alpha).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                prop_assert_eq!(l.get(i, j), lr.get(perm[i], perm[j]));
            }
        }
    }

    #[test]
    fn maximum_matching_is_optimal(n_left in 0usize..=8, n_right in 1usize..=8, edges in any::<u64>()) {
        let adj: Vec<Vec<usize>> = (0..n_left)
            .map(|i| (0..n_right).filter(|j| edges >> ((i * 8 + j) % 64) & 1 == 1).collect())
            .collect();
        // brute force: best over assignments of each left vertex to an unused neighbour or nothing
        fn brute(i: usize, adj: &[Vec<usize>], used: &mut Vec<bool>) -> usize {
            if i == adj.len() {
                return 0;
            }
            let mut best = brute(i + 1, adj, used);
            for &j in &adj[i] {
                if !used[j] {
                    used[j] = true;
                    best = best.max(1 + brute(i + 1, adj, used));
                    used[j] = false;
                }
            }
            best
        }
        prop_assert_eq!(maximum_matching(&adj, n_right), brute(0, &adj, &mut vec![false; n_right]));
    }

    #[test]
    fn scores_are_symmetric_monotone_and_bounded(f in unit_rows(8, 3), ma in any::<u32>(), mb in any::<u32>(),
                                                 t in 0.0..2.0f64, dt in 0.0..1.0f64) {
        let a = mask_subset(8, ma);
        let b = mask_subset(8, mb);
        let c = MatchConfig::new(t).unwrap();
        let ab = score(&a, &f, &b, &f, &c).unwrap();
        let ba = score(&b, &f, &a, &f, &c).unwrap();
        prop_assert_eq!(ab.f_score, ba.f_score);
        prop_assert_eq!(ab.precision, ba.recall);
        for x in [ab.precision, ab.recall, ab.f_score] {
            prop_assert!((0.0..=100.0).contains(&x));
        }
        let m1 = match_pairs(&a, &f, &b, &f, &c).unwrap();
        let m2 = match_pairs(&a, &f, &b, &f, &MatchConfig::new(t + dt).unwrap()).unwrap();
        prop_assert!(m1 <= m2 && m1 <= a.len().min(b.len()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn ascent_is_monotone_and_positive(seqs in prop::collection::vec((2usize..6).prop_flat_map(|n| unit_rows(n, 3)), 2..4),
                                       masks in prop::collection::vec(any::<u32>(), 4)) {
        let corpus: Vec<Exemplar> = seqs
            .into_iter()
            .enumerate()
            .map(|(i, s)| exemplar(s, masks[i], &format!("e{i}")))
            .collect();
        let cfg = LearnConfig {
            similarity: Similarity::Mahalanobis(Metric::identity(3)),
            learn_metric: true,
            ..LearnConfig::default()
        };
        let problem = Problem::full(&corpus, cfg).unwrap();
        let report = ascend(&problem, 15, 1.0).unwrap();
        let trace = &report.state.objective_trace;
        prop_assert!(trace.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!(report.state.alphas().iter().all(|a| *a > 0.0));
        prop_assert!(report.state.metric().unwrap().iter().all(|w| *w > 0.0));
    }

    #[test]
    fn corpus_files_round_trip_byte_for_byte(seed in any::<u64>(), noise in 0.0..0.5f64, n_videos in 1usize..5) {
        let cfg = SynthConfig { n_videos, n_frames: 9, dim: 4, keyframes_per_video: 2, noise_level: noise, seed, segment_len: 3, n_categories: 2 };
        let videos = gen_synthetic(&cfg).unwrap();
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let (manifest, sha) = save_corpus(dir1.path(), &videos, true).unwrap();
        let loaded = load_corpus(&manifest).unwrap();
        prop_assert_eq!(&loaded.videos, &videos);
        prop_assert_eq!(&loaded.manifest_sha256, &sha);
        let (_, sha2) = save_corpus(dir2.path(), &loaded.videos, true).unwrap();
        prop_assert_eq!(sha, sha2);
        for v in &videos {
            let name = format!("features/{}.vstf", v.id);
            prop_assert_eq!(std::fs::read(dir1.path().join(&name)).unwrap(), std::fs::read(dir2.path().join(&name)).unwrap());
        }
    }
}
