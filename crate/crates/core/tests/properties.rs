//! Property tests for the invariants each module promises.

mod common;

use std::collections::BTreeMap;

use common::*;
use pagelens::eval::{evaluate_collection, ndcg_at_k, recall_at_k, EvalOptions, Judgments, QrelSet, Scope};
use pagelens::hygiene::strip_nonvisual;
use pagelens::leb;
use pagelens::pooling::{
    bin_rows, conv1d_extend, row_mean_pool, tile_mean_pool, weighted_smooth, KernelKind, SmoothingKernel,
};
use pagelens::preprocess::{crop_empty_regions, CropConfig};
use pagelens::retrieval::search;
use pagelens::{
    maxsim, search_1stage, search_2stage, search_3stage, Collection, Dtype, GridLayout, Matrix, Matrix16,
    ModelProfile, QueryEmbedding, RawModelOutput, SearchConfig, VectorName,
};
use proptest::prelude::*;
use rand::Rng;

fn matrix(rows: usize, dim: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-1.0f32..1.0, rows * dim).prop_map(move |v| Matrix::from_vec(rows, dim, v).unwrap())
}

fn sized_matrix(rows: std::ops::Range<usize>, dim: std::ops::Range<usize>) -> impl Strategy<Value = Matrix> {
    (rows, dim).prop_flat_map(|(r, d)| matrix(r, d))
}

fn lincomb(a: f32, x: &Matrix, b: f32, y: &Matrix) -> Matrix {
    let data = x.as_slice().iter().zip(y.as_slice()).map(|(p, q)| a * p + b * q).collect();
    Matrix::from_vec(x.rows(), x.dim(), data).unwrap()
}

fn close(a: &Matrix, b: &Matrix, tol: f32) -> bool {
    a.rows() == b.rows()
        && a.as_slice()
            .iter()
            .zip(b.as_slice())
            .all(|(p, q)| (p - q).abs() <= tol * (1.0 + q.abs()))
}

fn hull_ok(out: &Matrix, input: &Matrix) -> bool {
    (0..input.dim()).all(|c| {
        let lo = input.iter_rows().map(|r| r[c]).fold(f32::INFINITY, f32::min);
        let hi = input.iter_rows().map(|r| r[c]).fold(f32::NEG_INFINITY, f32::max);
        let slack = 1e-6 * (1.0 + lo.abs().max(hi.abs()));
        out.iter_rows().all(|r| r[c] >= lo - slack && r[c] <= hi + slack)
    })
}

fn constant(rows: usize, v: &[f32]) -> Matrix {
    Matrix::from_vec(rows, v.len(), v.iter().cycle().take(rows * v.len()).copied().collect()).unwrap()
}

fn all_rows_equal(m: &Matrix, v: &[f32]) -> bool {
    m.iter_rows()
        .all(|r| r.iter().zip(v).all(|(a, b)| (a - b).abs() <= 1e-6 * (1.0 + b.abs())))
}

fn kernel_strategy() -> impl Strategy<Value = SmoothingKernel> {
    (prop::bool::ANY, 0usize..4, prop::option::of(0.1f64..4.0)).prop_map(|(gauss, r, sigma)| {
        let kind = if gauss { KernelKind::Gaussian } else { KernelKind::Triangular };
        SmoothingKernel::new(kind, 2 * r + 1, sigma).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Pooling.

    #[test]
    fn row_mean_is_linear(h in 1usize..6, w in 1usize..6, d in 1usize..5, a in -3.0f32..3.0, b in -3.0f32..3.0, seed in any::<u64>()) {
        let mut g = rng(seed);
        let x = random_matrix(&mut g, h * w, d);
        let y = random_matrix(&mut g, h * w, d);
        let layout = GridLayout::FixedGrid { height: h, width: w };
        let pool = |m: Matrix| row_mean_pool(&set(m, layout)).unwrap().vectors;
        let lhs = pool(lincomb(a, &x, b, &y));
        let rhs = lincomb(a, &pool(x), b, &pool(y));
        prop_assert!(close(&lhs, &rhs, 1e-5));
    }

    #[test]
    fn tile_mean_is_linear_and_permutation_invariant(
        rows in 1usize..3, cols in 1usize..3, p in 1usize..5, global in any::<bool>(), d in 1usize..4,
        a in -3.0f32..3.0, b in -3.0f32..3.0, seed in any::<u64>(),
    ) {
        let layout = GridLayout::TileGrid { n_rows: rows, n_cols: cols, patches_per_tile: p, has_global_tile: global };
        let n = layout.token_count();
        let mut g = rng(seed);
        let x = random_matrix(&mut g, n, d);
        let y = random_matrix(&mut g, n, d);
        let pool = |m: Matrix| tile_mean_pool(&set(m, layout)).unwrap().vectors;
        let base = pool(x.clone());
        prop_assert_eq!(base.rows(), layout.tile_count().unwrap());
        prop_assert!(close(&pool(lincomb(a, &x, b, &y)), &lincomb(a, &base, b, &pool(y)), 1e-5));
        // Reverse the tokens inside the first tile.
        let mut order: Vec<usize> = (0..n).collect();
        order[..p].reverse();
        prop_assert!(close(&pool(x.select_rows(&order)), &base, 1e-6));
    }

    #[test]
    fn bin_rows_is_linear_with_expected_count(n in 1usize..70, t in 1usize..40, d in 1usize..4, a in -3.0f32..3.0, b in -3.0f32..3.0, seed in any::<u64>()) {
        let mut g = rng(seed);
        let x = random_matrix(&mut g, n, d);
        let y = random_matrix(&mut g, n, d);
        let bx = bin_rows(&x, t).unwrap();
        prop_assert_eq!(bx.rows(), n.min(t));
        prop_assert!(close(&bin_rows(&lincomb(a, &x, b, &y), t).unwrap(), &lincomb(a, &bx, b, &bin_rows(&y, t).unwrap()), 1e-5));
    }

    #[test]
    fn kernels_fix_constant_fields(v in prop::collection::vec(-5.0f32..5.0, 1..6), n in 1usize..12, k in 0usize..4, kernel in kernel_strategy()) {
        let m = constant(n, &v);
        prop_assert!(all_rows_equal(&conv1d_extend(&m, 2 * k + 1).unwrap(), &v));
        prop_assert!(all_rows_equal(&weighted_smooth(&m, &kernel), &v));
        prop_assert!(all_rows_equal(&bin_rows(&m, 1 + k).unwrap(), &v));
        let grid = set(constant(n * 2, &v), GridLayout::FixedGrid { height: n, width: 2 });
        prop_assert!(all_rows_equal(&row_mean_pool(&grid).unwrap().vectors, &v));
        let tiles = set(constant(n * 2, &v), GridLayout::TileGrid { n_rows: 1, n_cols: n, patches_per_tile: 2, has_global_tile: false });
        prop_assert!(all_rows_equal(&tile_mean_pool(&tiles).unwrap().vectors, &v));
    }

    #[test]
    fn smoothing_counts_and_convex_hull(m in sized_matrix(1..15, 1..5), k in 0usize..4, kernel in kernel_strategy()) {
        let conv = conv1d_extend(&m, 2 * k + 1).unwrap();
        prop_assert_eq!(conv.rows(), m.rows() + 2 * k);
        prop_assert!(hull_ok(&conv, &m));
        let smooth = weighted_smooth(&m, &kernel);
        prop_assert_eq!(smooth.rows(), m.rows());
        prop_assert!(hull_ok(&smooth, &m));
        let bins = bin_rows(&m, 1 + k).unwrap();
        prop_assert!(hull_ok(&bins, &m));
    }

    #[test]
    fn zero_off_centre_weights_give_identity(m in sized_matrix(1..15, 1..5), r in 1usize..4) {
        // exp(-1 / (2 * 0.01^2)) underflows to exactly 0.
        let kernel = SmoothingKernel::new(KernelKind::Gaussian, 2 * r + 1, Some(0.01)).unwrap();
        prop_assert_eq!(kernel.weight(1), 0.0);
        prop_assert_eq!(weighted_smooth(&m, &kernel), m);
    }

    // Hygiene.

    #[test]
    fn hygiene_recovers_planted_tokens(
        prefix in 0usize..5, suffix in 0usize..8, pad in 0usize..10, h in 1usize..6, w in 1usize..6, seed in any::<u64>(),
    ) {
        let d = 4;
        let mut g = rng(seed);
        let visual = random_matrix(&mut g, h * w, d);
        // Non-visual tokens stay away from zero so they are never mistaken for padding.
        let special = Matrix::from_vec(prefix + suffix, d, (0..(prefix + suffix) * d).map(|_| g.random_range(0.5f32..1.0)).collect()).ok();
        let mut rows: Vec<Vec<f32>> = Vec::new();
        if let Some(s) = &special { rows.extend(s.iter_rows().take(prefix).map(|r| r.to_vec())); }
        rows.extend(visual.iter_rows().map(|r| r.to_vec()));
        if let Some(s) = &special { rows.extend(s.iter_rows().skip(prefix).map(|r| r.to_vec())); }
        rows.extend((0..pad).map(|_| vec![0.0; d]));
        let raw = RawModelOutput {
            page_id: "p".into(),
            dataset_id: "ds".into(),
            layout: GridLayout::FixedGrid { height: h, width: w },
            vectors: Matrix::from_rows(&rows).unwrap(),
            visual_mask: None,
            dtype: Dtype::F32,
        };
        let profile = ModelProfile::colpali().with_dim(d).with_nonvisual(prefix, suffix);
        let clean = strip_nonvisual(&raw, &profile).unwrap();
        prop_assert!(clean.len() <= raw.total_tokens());
        prop_assert_eq!(clean.vectors(), &visual);
        // A clean set passes through unchanged.
        let again = RawModelOutput { vectors: visual.clone(), visual_mask: Some(vec![true; h * w]), ..raw };
        let clean_again = strip_nonvisual(&again, &profile).unwrap();
        prop_assert_eq!(clean_again.vectors(), &visual);
    }

    // Cropping.

    #[test]
    fn crop_is_idempotent_and_monotone(seed in any::<u64>(), strip in any::<bool>(), bump in 0.0f64..20.0) {
        let img = random_page_image(&mut rng(seed));
        let cfg = CropConfig { strip_enabled: strip, ..CropConfig::default() };
        let (rect, out) = crop_empty_regions(&img, &cfg);
        prop_assert!(out.height() <= img.height() && out.width() <= img.width());
        let (again, _) = crop_empty_regions(&out, &cfg);
        prop_assert_eq!(again, out.full_rect());
        let stricter = CropConfig { row_std_thresh: cfg.row_std_thresh + bump, col_std_thresh: cfg.col_std_thresh + bump, ..cfg };
        let (inner, _) = crop_empty_regions(&img, &stricter);
        let fallback = inner == img.full_rect();
        prop_assert!(fallback || rect.contains(&inner), "{rect:?} vs {inner:?}");
    }

    // Storage.

    #[test]
    fn fp16_error_is_bounded(v in prop::collection::vec(-8.0f32..8.0, 1..64)) {
        let m = Matrix::from_vec(1, v.len(), v.clone()).unwrap();
        let back = Matrix16::from_f32(&m).to_f32();
        for (x, y) in v.iter().zip(back.as_slice()) {
            prop_assert!((x - y).abs() <= 2f32.powi(-8) * x.abs().max(1.0));
        }
    }

    #[test]
    fn embedding_files_round_trip(pages in prop::collection::vec((1usize..4, 1usize..4, any::<bool>(), any::<bool>()), 0..5), d in 1usize..6, seed in any::<u64>()) {
        let mut g = rng(seed);
        let raws: Vec<RawModelOutput> = pages.iter().enumerate().map(|(i, &(h, w, half, masked))| {
            let mut vectors = random_matrix(&mut g, h * w + 1, d);
            let dtype = if half { Dtype::F16 } else { Dtype::F32 };
            if half { vectors = Matrix16::from_f32(&vectors).to_f32(); }
            let visual_mask = masked.then(|| (0..=h * w).map(|t| t < h * w).collect());
            RawModelOutput { page_id: format!("p{i}"), dataset_id: "ds".into(), layout: GridLayout::FixedGrid { height: h, width: w }, vectors, visual_mask, dtype }
        }).collect();
        let bytes = leb::encode(d, &raws).unwrap();
        let back = leb::decode(&bytes).unwrap();
        prop_assert_eq!(back.d, d);
        prop_assert_eq!(&back.pages, &raws);
        prop_assert_eq!(leb::encode(d, &back.pages).unwrap(), bytes);
    }

    #[test]
    fn index_files_round_trip(n in 1usize..8, d in 1usize..6, seed in any::<u64>()) {
        let col = random_collection(&mut rng(seed), n, d, 1.0);
        let bytes = col.encode().unwrap();
        let back = Collection::decode("c", &bytes).unwrap();
        prop_assert_eq!(back.encode().unwrap(), bytes);
        prop_assert_eq!(back.records(), col.records());
    }

    // Scoring.

    #[test]
    fn maxsim_symmetries(q in sized_matrix(1..8, 1..9), extra in 1usize..6, seed in any::<u64>(), alpha in 0.1f32..10.0) {
        let d = q.dim();
        let mut g = rng(seed);
        let doc = random_matrix(&mut g, extra + 2, d);
        let query = QueryEmbedding::new("q", q.clone()).unwrap();
        let base = maxsim(&query, &doc).unwrap();

        let rev: Vec<usize> = (0..doc.rows()).rev().collect();
        prop_assert_eq!(maxsim(&query, &doc.select_rows(&rev)).unwrap(), base);
        let qrev: Vec<usize> = (0..q.rows()).rev().collect();
        let permuted = maxsim(&QueryEmbedding::new("q", q.select_rows(&qrev)).unwrap(), &doc).unwrap();
        prop_assert!((permuted - base).abs() <= 1e-5 * (1.0 + base.abs()));

        let dup: Vec<usize> = (0..doc.rows()).chain([0, doc.rows() - 1]).collect();
        prop_assert_eq!(maxsim(&query, &doc.select_rows(&dup)).unwrap(), base);

        let mut grown: Vec<Vec<f32>> = doc.iter_rows().map(|r| r.to_vec()).collect();
        grown.push(random_matrix(&mut g, 1, d).row(0).to_vec());
        prop_assert!(maxsim(&query, &Matrix::from_rows(&grown).unwrap()).unwrap() >= base);

        let mut scaled = doc.clone();
        scaled.scale(alpha);
        let s = maxsim(&query, &scaled).unwrap();
        prop_assert!((s - alpha * base).abs() <= 1e-5 * (1.0 + (alpha * base).abs()));
    }

    #[test]
    fn maxsim_is_bounded_on_unit_vectors(nq in 1usize..10, nd in 1usize..10, d in 1usize..16, seed in any::<u64>()) {
        let mut g = rng(seed);
        let query = QueryEmbedding::new("q", unit_matrix(&mut g, nq, d)).unwrap();
        let s = maxsim(&query, &unit_matrix(&mut g, nd, d)).unwrap();
        prop_assert!(s.abs() <= nq as f32 * (1.0 + 1e-5));
    }
}

/// Records with random `initial`, a pooled subset as `mean_pooling` and a
/// single `global_pooling` row, all scaled by `alpha`.
fn random_collection(g: &mut rand_chacha::ChaCha8Rng, n: usize, d: usize, alpha: f32) -> Collection {
    let mut col = Collection::new("c", d);
    for i in 0..n {
        let rows = g.random_range(2..12);
        let mut initial = random_matrix(g, rows, d);
        let pooled_rows = g.random_range(1..=rows);
        let mut pooled = random_matrix(g, pooled_rows, d);
        let mut global = random_matrix(g, 1, d);
        for m in [&mut initial, &mut pooled, &mut global] {
            m.scale(alpha);
        }
        let named = BTreeMap::from([
            (VectorName::Initial, initial),
            (VectorName::MeanPooling, pooled),
            (VectorName::GlobalPooling, global),
        ]);
        col.insert_named(format!("p{i:03}"), "ds", &named).unwrap();
    }
    col
}

fn random_query(g: &mut rand_chacha::ChaCha8Rng, d: usize) -> QueryEmbedding {
    let rows = g.random_range(1..8);
    QueryEmbedding::new("q", random_matrix(g, rows, d)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // Retrieval.

    #[test]
    fn full_prefetch_matches_exhaustive(n in 1usize..40, d in 1usize..12, k in 1usize..20, seed in any::<u64>()) {
        let mut g = rng(seed);
        let col = random_collection(&mut g, n, d, 1.0);
        let q = random_query(&mut g, d);
        let k = k.min(n);
        let exact = search_1stage(&col, &q, k, VectorName::Initial).unwrap();
        prop_assert_eq!(&search_2stage(&col, &q, &SearchConfig::two_stage(n, k)).unwrap(), &exact);
        prop_assert_eq!(&search_3stage(&col, &q, &SearchConfig::three_stage(n, n, k)).unwrap(), &exact);
    }

    #[test]
    fn rerank_scores_are_exact_and_candidates_nest(n in 1usize..40, d in 1usize..12, p in 1usize..20, gp in 1usize..40, seed in any::<u64>()) {
        let mut g = rng(seed);
        let col = random_collection(&mut g, n, d, 1.0);
        let q = random_query(&mut g, d);
        let gp = gp.max(p);
        let out = search(&col, &q, &SearchConfig::three_stage(gp, p, p.min(10))).unwrap();
        for hit in &out.list.hits {
            let doc = col.get(&hit.page_id).unwrap().initial().to_f32();
            let want = oracle_maxsim(&to_rows(&q.tokens), &to_rows(&doc));
            prop_assert!((hit.score as f64 - want).abs() <= 1e-5 * (1.0 + want.abs()));
            prop_assert_eq!(hit.score, maxsim(&q, col.get(&hit.page_id).unwrap().initial()).unwrap());
        }
        for pair in out.stages.windows(2) {
            prop_assert!(pair[1].kept.iter().all(|i| pair[0].kept.contains(i)));
            prop_assert_eq!(pair[1].scanned, pair[0].kept.len());
        }
    }

    #[test]
    fn ranking_ignores_power_of_two_scaling(n in 1usize..30, d in 1usize..10, e in 1i32..4, seed in any::<u64>()) {
        let alpha = 2f32.powi(e);
        let q = random_query(&mut rng(seed ^ 1), d);
        let base = random_collection(&mut rng(seed), n, d, 1.0);
        let scaled = random_collection(&mut rng(seed), n, d, alpha);
        for cfg in [SearchConfig::one_stage(10), SearchConfig::two_stage(5, 3), SearchConfig::three_stage(8, 4, 3)] {
            let a = search(&base, &q, &cfg).unwrap().list;
            let b = search(&scaled, &q, &cfg).unwrap().list;
            prop_assert!(a.ids().eq(b.ids()));
        }
    }

    #[test]
    fn search_is_deterministic_across_thread_counts(n in 1usize..60, d in 1usize..10, seed in any::<u64>()) {
        let mut g = rng(seed);
        let col = random_collection(&mut g, n, d, 1.0);
        let q = random_query(&mut g, d);
        let cfg = SearchConfig::two_stage(7, 5);
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| search(&col, &q, &cfg).unwrap().list)
        };
        let one = run(1);
        prop_assert_eq!(&run(3), &one);
        prop_assert_eq!(&search(&col, &q, &cfg).unwrap().list, &one);
    }

    #[test]
    fn evaluation_matches_at_full_prefetch(n in 2usize..30, d in 1usize..8, seed in any::<u64>()) {
        let mut g = rng(seed);
        let col = random_collection(&mut g, n, d, 1.0);
        let queries: Vec<QueryEmbedding> = (0..6).map(|j| {
            let mut q = random_query(&mut g, d);
            q.query_id = format!("q{j}");
            q.with_dataset("ds")
        }).collect();
        let mut qrels = QrelSet::default();
        for (j, q) in queries.iter().enumerate() {
            qrels.insert(q.query_id.clone(), format!("p{:03}", (j * 7) % n), 1);
            qrels.insert(q.query_id.clone(), format!("p{:03}", (j * 3 + 1) % n), 2);
        }
        let refs: Vec<&QueryEmbedding> = queries.iter().collect();
        let opts = EvalOptions::default();
        let one = evaluate_collection(&col, &refs, &qrels, &SearchConfig::one_stage(n), Scope::Union, &opts).unwrap();
        let two = evaluate_collection(&col, &refs, &qrels, &SearchConfig::two_stage(n, n), Scope::Union, &opts).unwrap();
        prop_assert_eq!(one.means, two.means);
        prop_assert_eq!(one.per_query, two.per_query);
    }

    // Metrics.

    #[test]
    fn metrics_are_bounded_and_recall_is_monotone(n in 1usize..30, rel in prop::collection::btree_map(0usize..40, 0u32..4, 0..6), seed in any::<u64>()) {
        let mut g = rng(seed);
        let mut ids: Vec<String> = (0..n).map(|i| format!("p{i}")).collect();
        for i in (1..ids.len()).rev() { ids.swap(i, g.random_range(0..=i)); }
        let qrel: Judgments = rel.iter().map(|(p, g)| (format!("p{p}"), *g)).collect();
        let mut last_recall = 0.0;
        for k in 1..=n + 2 {
            let r = recall_at_k(ids.iter().map(String::as_str), &qrel, k);
            let nd = ndcg_at_k(ids.iter().map(String::as_str), &qrel, k);
            if let (Some(r), Some(nd)) = (r, nd) {
                prop_assert!((0.0..=1.0).contains(&r) && (0.0..=1.0 + 1e-12).contains(&nd));
                prop_assert!(r >= last_recall);
                last_recall = r;
            } else {
                prop_assert!(qrel.values().all(|&g| g == 0));
            }
        }
    }

    #[test]
    fn ndcg_with_one_relevant_page_is_monotone(n in 1usize..30, target in 0usize..40) {
        let ids: Vec<String> = (0..n).map(|i| format!("p{i}")).collect();
        let qrel: Judgments = [(format!("p{target}"), 1)].into_iter().collect();
        let mut last = 0.0;
        for k in 1..=n + 2 {
            let v = ndcg_at_k(ids.iter().map(String::as_str), &qrel, k).unwrap();
            prop_assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn grade_sorted_ranking_has_unit_ndcg(grades in prop::collection::vec(0u32..4, 1..20), k in 1usize..25) {
        let qrel: Judgments = grades.iter().enumerate().map(|(i, g)| (format!("p{i}"), *g)).collect();
        prop_assume!(grades.iter().any(|&g| g > 0));
        let mut ideal: Vec<&String> = qrel.keys().collect();
        ideal.sort_by_key(|p| std::cmp::Reverse(qrel[*p]));
        let v = ndcg_at_k(ideal.iter().map(|s| s.as_str()), &qrel, k).unwrap();
        prop_assert!((v - 1.0).abs() < 1e-12);
        // Swapping a strictly better page below a worse one inside the cutoff loses gain.
        if let Some(i) = (0..ideal.len().min(k).saturating_sub(1)).find(|&i| qrel[ideal[i]] > qrel[ideal[i + 1]]) {
            ideal.swap(i, i + 1);
            prop_assert!(ndcg_at_k(ideal.iter().map(|s| s.as_str()), &qrel, k).unwrap() < 1.0);
        }
    }
}
