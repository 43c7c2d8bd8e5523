use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::diff::grad_check_many;

fn logits_of(probs: &[f64]) -> Array {
    Array::new(vec![1, probs.len()], probs.iter().map(|p| (p / (1.0 - p)).ln()).collect()).unwrap()
}

#[test]
fn temperature_anneals_geometrically() {
    let cfg = GrangerConfig::default();
    assert_eq!(cfg.temperature(0, 10), 1.0);
    assert!((cfg.temperature(9, 10) - 0.1).abs() < 1e-15);
    let ts: Vec<f64> = (0..10).map(|e| cfg.temperature(e, 10)).collect();
    assert!(ts.windows(2).all(|w| w[1] <= w[0]));
    // constant ratio between epochs
    assert!((ts[1] / ts[0] - ts[5] / ts[4]).abs() < 1e-12);
    assert_eq!(cfg.temperature(0, 1), 1.0);
}

#[test]
fn config_validation() {
    assert!(GrangerConfig::default().validate().is_ok());
    let bad = GrangerConfig { lag: 0, ..GrangerConfig::default() };
    assert!(bad.validate().is_err());
    let bad = GrangerConfig { prior_p: 1.0, ..GrangerConfig::default() };
    assert!(bad.validate().is_err());
    let bad = GrangerConfig { temp_final: 2.0, ..GrangerConfig::default() };
    assert!(bad.validate().is_err());
}

fn encoder(m_in: usize) -> (ParamStore, GraphEncoder) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let enc = GraphEncoder::new(&mut store, "graph", m_in, &GrangerConfig::default(), &mut rng);
    (store, enc)
}

fn random_emb(g: &mut Graph, b: usize, n: usize, e: usize, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    g.constant(Array::new(vec![b, n, e], (0..b * n * e).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap())
}

#[test]
fn zero_score_gives_half_off_diagonal() {
    let (mut store, enc) = encoder(4);
    let (w, b) = enc.score_params();
    store.get_mut(w).data_mut().iter_mut().for_each(|x| *x = 0.0);
    store.get_mut(b).data_mut().iter_mut().for_each(|x| *x = 0.0);
    let mut ctx = Ctx::new(&store);
    let z: Vec<Var> = (0..3)
        .map(|k| {
            let e = random_emb(&mut ctx.g, 2, 5, 4, k);
            enc.readout(&mut ctx, e, &[5, 3]).unwrap()
        })
        .collect();
    let logits = enc.edge_logits(&mut ctx, &z).unwrap();
    assert_eq!(ctx.g.shape(logits), &[2, 9]);
    let p = edge_probs(&mut ctx.g, logits, 3).unwrap();
    for b in 0..2 {
        for i in 0..3 {
            for j in 0..3 {
                let v = ctx.g.value(p).data()[b * 9 + i * 3 + j];
                assert_eq!(v, if i == j { 1.0 } else { 0.5 });
            }
        }
    }
}

#[test]
fn pair_score_is_ordered() {
    let (store, enc) = encoder(4);
    let mut ctx = Ctx::new(&store);
    let e0 = random_emb(&mut ctx.g, 1, 6, 4, 1);
    let e1 = random_emb(&mut ctx.g, 1, 6, 4, 2);
    let z0 = enc.readout(&mut ctx, e0, &[6]).unwrap();
    let z1 = enc.readout(&mut ctx, e1, &[6]).unwrap();
    let l = enc.edge_logits(&mut ctx, &[z0, z1]).unwrap();
    let v = ctx.g.value(l).data().to_vec();
    assert_ne!(v[1], v[2]);
    // equal readouts give equal scores in both directions
    let l = enc.edge_logits(&mut ctx, &[z0, z0]).unwrap();
    let v = ctx.g.value(l).data().to_vec();
    assert_eq!(v[1], v[2]);
}

#[test]
fn readout_ignores_padding_and_handles_empty_rows() {
    let (store, enc) = encoder(3);
    let mut ctx = Ctx::new(&store);
    let e = random_emb(&mut ctx.g, 1, 7, 3, 3);
    let full = enc.readout(&mut ctx, e, &[4]).unwrap();
    // same first four rows, different tail
    let mut data = ctx.g.value(e).data().to_vec();
    data[4 * 3..].iter_mut().for_each(|x| *x = 9.0);
    let e2 = ctx.g.constant(Array::new(vec![1, 7, 3], data).unwrap());
    let other = enc.readout(&mut ctx, e2, &[4]).unwrap();
    assert_eq!(ctx.g.value(full).data(), ctx.g.value(other).data());
    let empty = enc.readout(&mut ctx, e, &[0]).unwrap();
    assert!(ctx.g.value(empty).is_finite());
}

#[test]
fn hard_limit_of_samples() {
    let mut g = Graph::new();
    let logits = g.constant(logits_of(&[0.5, 0.7, 0.2, 0.5]));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise = edge_noise(&mut rng, 4, false);
    let s = relaxed_sample(&mut g, logits, &noise, 1e-6, 2).unwrap();
    let v = g.value(s).data().to_vec();
    assert_eq!(v[0], 1.0);
    assert_eq!(v[3], 1.0);
    assert!(v.iter().all(|x| *x < 1e-12 || *x > 1.0 - 1e-12));
    assert!(relaxed_sample(&mut g, logits, &noise, 0.0, 2).is_err());
}

#[test]
fn hard_samples_match_probabilities() {
    let probs = [0.5, 0.83, 0.27, 0.5];
    let mut g = Graph::new();
    let logits = g.constant(logits_of(&probs));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let draws = 10_000;
    let mut hits = [0.0; 4];
    for _ in 0..draws {
        let noise = edge_noise(&mut rng, 4, false);
        let s = relaxed_sample(&mut g, logits, &noise, 0.5, 2).unwrap();
        let hard = harden(g.value(s), 0.5);
        hits.iter_mut().zip(hard.data()).for_each(|(h, v)| *h += v);
    }
    for (k, p) in [(1, 0.83), (2, 0.27)] {
        let mean = hits[k] / draws as f64;
        assert!((mean - p).abs() < 0.02, "entry {k}: {mean} vs {p}");
    }
    assert_eq!(hits[0], draws as f64);
}

#[test]
fn literal_gumbel_limit_is_not_the_edge_probability() {
    // P(logit + G > 0) = 1 − exp(−exp(logit)), which differs from sigmoid(logit)
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let noise = edge_noise(&mut rng, 20_000, true);
    let frac = noise.iter().filter(|&&v| v > 0.0).count() as f64 / noise.len() as f64;
    let expect = 1.0 - (-1f64).exp();
    assert!((frac - expect).abs() < 0.015, "{frac}");
    assert!((frac - 0.5).abs() > 0.1);
}

#[test]
fn kl_examples() {
    let mut g = Graph::new();
    let half = g.constant(logits_of(&[0.5, 0.5, 0.5, 0.5]));
    let kl = bernoulli_kl(&mut g, half, 0.5, 2).unwrap();
    assert_eq!(g.value(kl).item(), 0.0);
    let sure = g.constant(Array::new(vec![1, 4], vec![0.0, 40.0, -40.0, 0.0]).unwrap());
    let kl = bernoulli_kl(&mut g, sure, 0.5, 2).unwrap();
    assert!((g.value(kl).item() - 2.0 * 2f64.ln()).abs() < 1e-12);
    // single type: only a diagonal, so nothing to penalize
    let one = g.constant(Array::new(vec![3, 1], vec![5.0, -3.0, 0.2]).unwrap());
    let kl = bernoulli_kl(&mut g, one, 0.3, 1).unwrap();
    assert_eq!(g.value(kl).item(), 0.0);
}

#[test]
fn kl_and_sample_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let noise = edge_noise(&mut rng, 9, false);
    let point = Array::new(vec![1, 9], (0..9).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
    let err = grad_check_many(
        |g, v| {
            let kl = bernoulli_kl(g, v[0], 0.3, 3)?;
            let s = relaxed_sample(g, v[0], &noise, 0.7, 3)?;
            let w = g.constant(Array::new(vec![1, 9], (1..=9).map(|k| k as f64 * 0.1).collect())?);
            let s = g.mul(s, w)?;
            let s = g.sum(s)?;
            g.add(kl, s)
        },
        &[point],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

proptest! {
    #[test]
    fn kl_is_non_negative(xs in prop::collection::vec(-30.0f64..30.0, 4), prior in 0.01f64..0.99) {
        let mut g = Graph::new();
        let l = g.constant(Array::new(vec![1, 4], xs).unwrap());
        let kl = bernoulli_kl(&mut g, l, prior, 2).unwrap();
        prop_assert!(g.value(kl).item() >= -1e-12);
    }

    #[test]
    fn sample_is_monotone(x in -5.0f64..5.0, n in -5.0f64..5.0, d in 0.01f64..2.0, eps in 0.05f64..2.0) {
        let mut g = Graph::new();
        let base = g.constant(Array::new(vec![1, 4], vec![0.0, x, 0.0, 0.0]).unwrap());
        let up = g.constant(Array::new(vec![1, 4], vec![0.0, x + d, 0.0, 0.0]).unwrap());
        let a = relaxed_sample(&mut g, base, &[0.0, n, 0.0, 0.0], eps, 2).unwrap();
        let b = relaxed_sample(&mut g, up, &[0.0, n, 0.0, 0.0], eps, 2).unwrap();
        let c = relaxed_sample(&mut g, base, &[0.0, n + d, 0.0, 0.0], eps, 2).unwrap();
        let (a, b, c) = (g.value(a).data()[1], g.value(b).data()[1], g.value(c).data()[1]);
        prop_assert!(b >= a && c >= a);
    }
}

#[test]
fn graph_means_and_thresholds() {
    let a = Array::new(vec![2, 2], vec![1.0, 0.2, 0.8, 1.0]).unwrap();
    let b = Array::new(vec![2, 2], vec![1.0, 0.8, 0.2, 1.0]).unwrap();
    let m = mean_graph(&[a.clone(), b]).unwrap();
    assert_eq!(m.data(), &[1.0, 0.5, 0.5, 1.0]);
    assert_eq!(mean_graph(std::slice::from_ref(&a)).unwrap(), a);
    assert_eq!(harden(&a, 0.5).data(), &[1.0, 0.0, 1.0, 1.0]);
    assert!(mean_graph(&[]).is_err());
}

#[test]
fn graph_csv_round_trip() {
    let a = Array::new(vec![3, 3], vec![1.0, 0.123456789012345, 0.0, 0.5, 1.0, 1e-17, 0.25, 0.75, 1.0]).unwrap();
    let mut buf = Vec::new();
    write_graph_csv(&mut buf, &a).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("1,2,3\n"));
    assert_eq!(read_graph_csv(&buf[..]).unwrap(), a);
    assert!(read_graph_csv(&b"1,2\n0.5\n"[..]).is_err());
    assert!(read_graph_csv(&b"a,b\n1,2\n3,4\n"[..]).is_err());
}

fn pool_setup(lag: usize) -> (ParamStore, LagAggregator) {
    let mut store = ParamStore::new();
    let agg = LagAggregator::new(&mut store, "lag", lag);
    (store, agg)
}

#[test]
fn lag_pool_mask_algebra() {
    // four states of width 2; two events; M = 2
    let (store, agg) = pool_setup(3);
    let rho = store.get(agg.rho).data().to_vec();
    let states = Array::new(vec![4, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
    // event 0 sees states 2, 1 and nothing; event 1 sees 3, 0, 1
    let plan = LagPlan {
        src: vec![2, 1, -1, 3, 0, 1],
        edge: {
            // source types: rows 0..3 of `states` have types 1, 2, 1, 2
            let ty = [0, 1, 0, 1];
            let mut e = Vec::new();
            for src in [[2isize, 1, -1], [3, 0, 1]] {
                for target in 0..2 {
                    for s in src {
                        e.push(if s < 0 { -1 } else { (target * 2 + ty[s as usize]) as isize });
                    }
                }
            }
            e
        },
    };
    let run = |a: Vec<f64>| {
        let mut ctx = Ctx::new(&store);
        let s = ctx.g.constant(states.clone());
        let gph = ctx.g.constant(Array::new(vec![1, 4], a).unwrap());
        let (gated, plain) = agg.pool(&mut ctx, s, gph, &plan, 2).unwrap();
        (ctx.g.value(gated).clone(), ctx.g.value(plain).clone())
    };
    let (gated, plain) = run(vec![1.0; 4]);
    let expect0 = [rho[0] * 5.0 + rho[1] * 3.0, rho[0] * 6.0 + rho[1] * 4.0];
    assert!((plain.data()[0] - expect0[0]).abs() < 1e-12 && (plain.data()[1] - expect0[1]).abs() < 1e-12);
    // all edges open: every target sees the plain pool
    for r in 0..2 {
        for t in 0..2 {
            for c in 0..2 {
                assert!((gated.data()[(r * 2 + t) * 2 + c] - plain.data()[r * 2 + c]).abs() < 1e-12);
            }
        }
    }
    let (gated, _) = run(vec![0.0; 4]);
    assert!(gated.data().iter().all(|v| *v == 0.0));
    // only 1 → 2 open: target 2 sees type-1 states only, target 1 sees nothing
    let (gated, _) = run(vec![0.0, 0.0, 1.0, 0.0]);
    assert_eq!(&gated.data()[0..2], &[0.0, 0.0]);
    assert!((gated.data()[2] - rho[0] * 5.0).abs() < 1e-12);
}
