//! Straight-loop reference implementations checked against the library.
//!
//! The references below use plain nested `Vec`s and scalar loops and share
//! no code with the crate.

use attn_core::{
    attention_matrix, importance_vector, patch_centers, select_top_k, step_controller, weighted_output,
    Action, ActionSpec, AttentionParams, ControllerState, LstmParams, Matrix, PatchGrid,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Grid = Vec<Vec<f64>>;

fn rand_grid(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Grid {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(-scale..scale)).collect())
        .collect()
}

fn to_matrix(g: &Grid) -> Matrix<f64> {
    let rows = g.len();
    let cols = g[0].len();
    Matrix::from_vec(rows, cols, g.iter().flatten().copied().collect()).unwrap()
}

fn ref_attention(x: &Grid, wq: &Grid, bq: &[f64], wk: &Grid, bk: &[f64]) -> Grid {
    let n = x.len();
    let d_in = x[0].len();
    let d = bq.len();
    let mut keys = vec![vec![0.0; d]; n];
    let mut queries = vec![vec![0.0; d]; n];
    for i in 0..n {
        for e in 0..d {
            let mut k = bk[e];
            let mut q = bq[e];
            for t in 0..d_in {
                k += x[i][t] * wk[t][e];
                q += x[i][t] * wq[t][e];
            }
            keys[i][e] = k;
            queries[i][e] = q;
        }
    }
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        let mut logits = vec![0.0; n];
        for j in 0..n {
            let mut dot = 0.0;
            for e in 0..d {
                dot += keys[i][e] * queries[j][e];
            }
            logits[j] = dot / (d_in as f64).sqrt();
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        for j in 0..n {
            a[i][j] = (logits[j] - max).exp() / total;
        }
    }
    a
}

fn ref_matmul(a: &Grid, b: &Grid) -> Grid {
    let mut out = vec![vec![0.0; b[0].len()]; a.len()];
    for i in 0..a.len() {
        for j in 0..b[0].len() {
            for k in 0..b.len() {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

fn random_attention_case(rng: &mut ChaCha8Rng, n: usize, d_in: usize, d: usize) -> (Grid, Grid, Vec<f64>, Grid, Vec<f64>) {
    let x = rand_grid(rng, n, d_in, 1.0);
    let wq = rand_grid(rng, d_in, d, 2.0);
    let wk = rand_grid(rng, d_in, d, 2.0);
    let bq = rand_grid(rng, 1, d, 1.0).remove(0);
    let bk = rand_grid(rng, 1, d, 1.0).remove(0);
    (x, wq, bq, wk, bk)
}

fn params_of(wq: &Grid, bq: &[f64], wk: &Grid, bk: &[f64]) -> AttentionParams<f64> {
    AttentionParams::new(to_matrix(wq), bq.to_vec(), to_matrix(wk), bk.to_vec()).unwrap()
}

#[test]
fn attention_matches_loop_reference_3x2() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (x, wq, bq, wk, bk) = random_attention_case(&mut rng, 3, 2, 2);
    let a = attention_matrix(&to_matrix(&x), &params_of(&wq, &bq, &wk, &bk)).unwrap();
    let reference = ref_attention(&x, &wq, &bq, &wk, &bk);
    for i in 0..3 {
        for j in 0..3 {
            assert!((a[(i, j)] - reference[i][j]).abs() < 1e-10);
        }
    }
}

#[test]
fn attention_and_output_match_reference_on_small_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let n = rng.random_range(1..=8);
        let d_in = rng.random_range(1..=6);
        let d = rng.random_range(1..=4);
        let (x, wq, bq, wk, bk) = random_attention_case(&mut rng, n, d_in, d);
        let xm = to_matrix(&x);
        let a = attention_matrix(&xm, &params_of(&wq, &bq, &wk, &bk)).unwrap();
        let ra = ref_attention(&x, &wq, &bq, &wk, &bk);
        let y = weighted_output(&a, &xm).unwrap();
        let ry = ref_matmul(&ra, &x);
        for i in 0..n {
            for j in 0..n {
                assert!((a[(i, j)] - ra[i][j]).abs() < 1e-10);
            }
            for t in 0..d_in {
                assert!((y[(i, t)] - ry[i][t]).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn weighted_output_matches_loop_multiply_4x3() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let raw = rand_grid(&mut rng, 4, 4, 1.0);
    // make rows stochastic
    let a: Grid = raw
        .iter()
        .map(|r| {
            let e: Vec<f64> = r.iter().map(|v| v.exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|v| v / s).collect()
        })
        .collect();
    let x = rand_grid(&mut rng, 4, 3, 1.0);
    let y = weighted_output(&to_matrix(&a), &to_matrix(&x)).unwrap();
    let ry = ref_matmul(&a, &x);
    for i in 0..4 {
        for j in 0..3 {
            assert!((y[(i, j)] - ry[i][j]).abs() < 1e-12);
        }
    }
}

fn ref_sort_top_k(v: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    // full stable sort: descending value, index order kept on ties
    idx.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).unwrap());
    idx.truncate(k);
    idx
}

#[test]
fn top_k_matches_full_sort_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..1000 {
        let n = rng.random_range(1..=60);
        let k = rng.random_range(1..=n);
        // a coarse value set forces plenty of ties
        let v: Vec<f64> = if case % 2 == 0 {
            (0..n).map(|_| rng.random_range(0..6) as f64 * 0.5).collect()
        } else {
            (0..n).map(|_| rng.random::<f64>()).collect()
        };
        assert_eq!(select_top_k(&v, k).unwrap(), ref_sort_top_k(&v, k));
    }
}

#[test]
fn centers_match_exhaustive_enumeration() {
    let grid = PatchGrid::new(96, 7, 4).unwrap();
    // enumerate every window center in pixels, then normalize by the largest
    let mut centers = Vec::new();
    for top in (0..=96 - 7).step_by(4) {
        for left in (0..=96 - 7).step_by(4) {
            centers.push((top as f64 + 3.0, left as f64 + 3.0));
        }
    }
    assert_eq!(centers.len(), 529);
    let max = centers.iter().map(|c| c.0.max(c.1)).fold(0.0, f64::max);
    assert_eq!(max, 91.0);
    let all: Vec<usize> = (0..529).collect();
    let got: Vec<[f64; 2]> = patch_centers(&all, &grid).unwrap();
    for (g, c) in got.iter().zip(&centers) {
        assert_eq!(*g, [c.0 / max, c.1 / max]);
        assert!((0.0..=1.0).contains(&g[0]) && (0.0..=1.0).contains(&g[1]));
    }
    assert_eq!(got[0], [3.0 / 91.0, 3.0 / 91.0]);
    assert_eq!(got[528], [1.0, 1.0]);
}

struct RefLstm {
    w_ih: Grid,
    w_hh: Grid,
    b_ih: Vec<f64>,
    b_hh: Vec<f64>,
    w_out: Grid,
    b_out: Vec<f64>,
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Returns (logits, h', c') computed gate by gate.
fn ref_lstm_step(p: &RefLstm, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hs = h.len();
    let gate = |g: usize, j: usize| {
        let row = g * hs + j;
        let mut s = p.b_ih[row] + p.b_hh[row];
        for t in 0..x.len() {
            s += p.w_ih[row][t] * x[t];
        }
        for t in 0..hs {
            s += p.w_hh[row][t] * h[t];
        }
        s
    };
    let mut h2 = vec![0.0; hs];
    let mut c2 = vec![0.0; hs];
    for j in 0..hs {
        let i = sig(gate(0, j));
        let f = sig(gate(1, j));
        let g = gate(2, j).tanh();
        let o = sig(gate(3, j));
        c2[j] = f * c[j] + i * g;
        h2[j] = o * c2[j].tanh();
    }
    let logits = (0..p.b_out.len())
        .map(|a| p.b_out[a] + (0..hs).map(|t| p.w_out[a][t] * h2[t]).sum::<f64>())
        .collect();
    (logits, h2, c2)
}

fn random_lstm(rng: &mut ChaCha8Rng, input: usize, hidden: usize, actions: usize) -> (RefLstm, LstmParams<f64>) {
    let r = RefLstm {
        w_ih: rand_grid(rng, 4 * hidden, input, 1.5),
        w_hh: rand_grid(rng, 4 * hidden, hidden, 1.5),
        b_ih: rand_grid(rng, 1, 4 * hidden, 1.0).remove(0),
        b_hh: rand_grid(rng, 1, 4 * hidden, 1.0).remove(0),
        w_out: rand_grid(rng, actions, hidden, 1.5),
        b_out: rand_grid(rng, 1, actions, 1.0).remove(0),
    };
    let p = LstmParams {
        weight_ih: to_matrix(&r.w_ih),
        weight_hh: to_matrix(&r.w_hh),
        bias_ih: r.b_ih.clone(),
        bias_hh: r.b_hh.clone(),
        weight_out: to_matrix(&r.w_out),
        bias_out: r.b_out.clone(),
    };
    (r, p)
}

#[test]
fn lstm_matches_scalar_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let bounds = vec![(-1.0, 1.0), (0.0, 1.0), (0.0, 2.0)];
    let cont = ActionSpec::Continuous { bounds: bounds.clone() };
    let disc = ActionSpec::Discrete { n: 3 };
    for case in 0..100 {
        let (input, hidden) = if case == 0 { (4, 3) } else { (rng.random_range(1..=8), rng.random_range(1..=6)) };
        let (reference, params) = random_lstm(&mut rng, input, hidden, 3);
        let x = rand_grid(&mut rng, 1, input, 1.0).remove(0);
        let h0 = rand_grid(&mut rng, 1, hidden, 0.9).remove(0);
        let c0 = rand_grid(&mut rng, 1, hidden, 2.0).remove(0);
        let state = ControllerState {
            hidden: h0.clone(),
            cell: c0.clone(),
        };
        let (logits, h1, c1) = ref_lstm_step(&reference, &x, &h0, &c0);

        let (action, next) = step_controller(&x, &state, &params, &cont).unwrap();
        for j in 0..hidden {
            assert!((next.hidden[j] - h1[j]).abs() < 1e-12);
            assert!((next.cell[j] - c1[j]).abs() < 1e-12);
        }
        let Action::Continuous(values) = action else { panic!("continuous spec") };
        for ((v, z), (lo, hi)) in values.iter().zip(&logits).zip(&bounds) {
            let expected = lo + (z.tanh() + 1.0) / 2.0 * (hi - lo);
            assert!((v - expected).abs() < 1e-12);
        }

        let (action, _) = step_controller(&x, &state, &params, &disc).unwrap();
        let argmax = (0..3).fold(0, |b, i| if logits[i] > logits[b] { i } else { b });
        assert_eq!(action, Action::Discrete(argmax));
    }
}

proptest! {
    #[test]
    fn rows_stochastic_and_votes_conserved(
        seed in any::<u64>(),
        n in 1usize..=32,
        d_in in 1usize..=16,
        d in 1usize..=4,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, wq, bq, wk, bk) = random_attention_case(&mut rng, n, d_in, d);
        let a = attention_matrix(&to_matrix(&x), &params_of(&wq, &bq, &wk, &bk)).unwrap();
        for row in a.iter_rows() {
            let s: f64 = row.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
        let imp = importance_vector(&a).unwrap();
        prop_assert!((imp.iter().sum::<f64>() - n as f64).abs() < 1e-4);
    }

    #[test]
    fn importance_is_permutation_equivariant(seed in any::<u64>(), n in 2usize..=12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, wq, bq, wk, bk) = random_attention_case(&mut rng, n, 5, 3);
        let params = params_of(&wq, &bq, &wk, &bk);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let permuted: Grid = perm.iter().map(|&p| x[p].clone()).collect();
        let imp = importance_vector(&attention_matrix(&to_matrix(&x), &params).unwrap()).unwrap();
        let imp_p = importance_vector(&attention_matrix(&to_matrix(&permuted), &params).unwrap()).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            prop_assert!((imp_p[i] - imp[p]).abs() < 1e-10);
        }
    }

    #[test]
    fn top_k_invariant_under_positive_affine_maps(
        raw in proptest::collection::vec(0i32..64, 1..40),
        scale_pow in -3i32..4,
        shift in -50i32..50,
        k_frac in 0.0f64..1.0,
    ) {
        // dyadic values keep a·v + b exact, so ties are neither created nor broken
        let v: Vec<f64> = raw.iter().map(|&r| r as f64 / 8.0).collect();
        let a = 2f64.powi(scale_pow);
        let shifted: Vec<f64> = v.iter().map(|&x| a * x + shift as f64).collect();
        let k = 1 + ((v.len() - 1) as f64 * k_frac) as usize;
        prop_assert_eq!(select_top_k(&v, k).unwrap(), select_top_k(&shifted, k).unwrap());
    }
}
