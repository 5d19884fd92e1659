use ghostalign::pruning::{
    block_influence_scores, contiguous_block_scores, select_by_removal_loss,
    select_by_removal_loss_with, select_contiguous_block, select_contiguous_block_with, CosineMode,
    Criterion, RemovalMetric, Selection,
};
use ghostalign::simulator::build_toy_model;
use ghostalign::{Matrix, ToyModel};

fn brute_states(model: &ToyModel, x: &Matrix) -> Vec<Matrix> {
    let mut out = vec![x.clone()];
    for l in 0..model.num_layers() {
        let h = out[l].clone();
        let f = model.layer_update(l, &h).unwrap();
        out.push(h.add(&f).unwrap());
    }
    out
}

fn row_cos(a: &[f64], b: &[f64]) -> f64 {
    let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let aa: f64 = a.iter().map(|x| x * x).sum();
    let bb: f64 = b.iter().map(|x| x * x).sum();
    ab / (aa.sqrt() * bb.sqrt())
}

fn mean_token_cos(a: &Matrix, b: &Matrix) -> f64 {
    (0..a.rows())
        .map(|t| row_cos(a.row(t), b.row(t)))
        .sum::<f64>()
        / a.rows() as f64
}

fn first_argmax(v: &[f64]) -> usize {
    let best = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    v.iter().position(|&s| s == best).unwrap()
}

fn n_smallest(v: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap().then(a.cmp(&b)));
    let mut out = idx[..n].to_vec();
    out.sort_unstable();
    out
}

fn brute_skip_one(model: &ToyModel, x: &Matrix, skip: usize) -> Matrix {
    let mut h = x.clone();
    for l in (0..model.num_layers()).filter(|&l| l != skip) {
        h = h.add(&model.layer_update(l, &h).unwrap()).unwrap();
    }
    h
}

#[test]
fn contiguous_block_matches_exhaustive_search() {
    for seed in 0..5 {
        let model = build_toy_model(6, 16, seed).unwrap();
        let x = model.sample_inputs(96, seed + 10);
        let states = brute_states(&model, &x);
        for n in 1..6 {
            let want: Vec<f64> = (0..=6 - n)
                .map(|s| mean_token_cos(&states[s], &states[s + n]))
                .collect();
            let got = select_contiguous_block(&model, &x, n).unwrap();
            assert_eq!(got.criterion, Criterion::StreamlineCosine);
            for (g, w) in got.scores.iter().zip(&want) {
                assert!((g - w).abs() <= 1e-12);
            }
            let Selection::Block(spec) = got.chosen else {
                panic!("expected a block")
            };
            assert_eq!(
                (spec.start(), spec.count()),
                (first_argmax(&want), n),
                "seed {seed} n {n}"
            );
        }
    }
}

#[test]
fn flattened_cosine_matches_exhaustive_search() {
    let model = build_toy_model(6, 16, 3).unwrap();
    let x = model.sample_inputs(64, 1);
    let states = brute_states(&model, &x);
    let want: Vec<f64> = (0..=4)
        .map(|s| row_cos(states[s].as_slice(), states[s + 2].as_slice()))
        .collect();
    let got = select_contiguous_block_with(&model, &x, 2, CosineMode::Flattened).unwrap();
    for (g, w) in got.scores.iter().zip(&want) {
        assert!((g - w).abs() <= 1e-12);
    }
    assert_eq!(got.cosine_mode, Some(CosineMode::Flattened));
}

#[test]
fn removal_loss_matches_exhaustive_search() {
    for seed in 0..5 {
        let model = build_toy_model(6, 16, seed).unwrap();
        let x = model.sample_inputs(96, seed + 20);
        let dense = brute_states(&model, &x).pop().unwrap();
        let want: Vec<f64> = (0..6)
            .map(|l| {
                let p = brute_skip_one(&model, &x, l);
                let d = dense.sub(&p).unwrap();
                d.as_slice().iter().map(|v| v * v).sum::<f64>() / d.as_slice().len() as f64
            })
            .collect();
        for n in 1..6 {
            let got = select_by_removal_loss(&model, &x, n).unwrap();
            for (g, w) in got.scores.iter().zip(&want) {
                assert!((g - w).abs() <= 1e-12 * w.max(1.0));
            }
            assert_eq!(
                got.chosen,
                Selection::Layers(n_smallest(&want, n)),
                "seed {seed} n {n}"
            );
        }
    }
}

#[test]
fn block_influence_matches_exhaustive_search() {
    for seed in 0..5 {
        let model = build_toy_model(6, 16, seed).unwrap();
        let x = model.sample_inputs(64, seed);
        let states = brute_states(&model, &x);
        let want: Vec<f64> = (0..6)
            .map(|l| 1.0 - mean_token_cos(&states[l], &states[l + 1]))
            .collect();
        let got = block_influence_scores(&model, &x, 2).unwrap();
        for (g, w) in got.scores.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-12);
        }
        assert_eq!(got.chosen, Selection::Layers(n_smallest(&want, 2)));
    }
}

#[test]
fn logit_kl_is_zero_only_for_inert_layers() {
    let model = build_toy_model(6, 16, 1).unwrap().with_zero_layers(4..5);
    let x = model.sample_inputs(64, 0);
    let got = select_by_removal_loss_with(&model, &x, 1, RemovalMetric::LogitKl).unwrap();
    assert_eq!(got.scores[4], 0.0);
    assert!(got
        .scores
        .iter()
        .enumerate()
        .all(|(l, &s)| l == 4 || s > 0.0));
    assert_eq!(got.chosen, Selection::Layers(vec![4]));
}

#[test]
fn ties_go_to_the_lowest_index() {
    let model = build_toy_model(6, 8, 0).unwrap().with_zero_layers(0..6);
    let x = model.sample_inputs(16, 0);
    let block = select_contiguous_block(&model, &x, 2).unwrap();
    assert!(block.scores.iter().all(|&s| s == 1.0));
    assert!(matches!(block.chosen, Selection::Block(s) if s.start() == 0));
    let removal = select_by_removal_loss(&model, &x, 3).unwrap();
    assert_eq!(removal.chosen, Selection::Layers(vec![0, 1, 2]));
}

#[test]
fn cosine_choice_ignores_positive_rescaling_of_states() {
    let model = build_toy_model(6, 16, 2).unwrap();
    let states = brute_states(&model, &model.sample_inputs(64, 3));
    for mode in [CosineMode::PerToken, CosineMode::Flattened] {
        let base = contiguous_block_scores(&states, 3, mode).unwrap();
        let scaled: Vec<Matrix> = states.iter().map(|s| s.scale(37.5)).collect();
        let again = contiguous_block_scores(&scaled, 3, mode).unwrap();
        assert_eq!(first_argmax(&base), first_argmax(&again));
        for (a, b) in base.iter().zip(&again) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn block_size_out_of_range_is_rejected() {
    let model = build_toy_model(6, 8, 0).unwrap();
    let x = model.sample_inputs(8, 0);
    for n in [0, 6, 7] {
        assert_eq!(
            select_contiguous_block(&model, &x, n)
                .unwrap_err()
                .exit_code(),
            3
        );
        assert!(select_by_removal_loss(&model, &x, n).is_err());
    }
}
