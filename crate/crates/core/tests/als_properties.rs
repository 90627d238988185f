mod common;

use bove::als::{self, ESolver};
use bove::encoding::SentenceTensors;
use bove::linalg::{kron, vec_row};
use bove::model::{Hyperparams, TypeEmbeddings};
use bove::synth::{generate, SynthConfig};
use common::{gd_oracle_ls, random_tensors, relative_frobenius, uniform};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Instance {
    corpus: Vec<SentenceTensors>,
    es: Vec<DMatrix<f64>>,
    c: usize,
    d: usize,
    r: usize,
}

fn instance(rng: &mut ChaCha8Rng) -> Instance {
    let (c, d, r) = (rng.random_range(2..=7), rng.random_range(1..=3), rng.random_range(1..=4));
    let sentences = rng.random_range(2..=5);
    let mut corpus = Vec::new();
    let mut es = Vec::new();
    for _ in 0..sentences {
        let n = rng.random_range(1..=5);
        corpus.push(random_tensors(c, d, n, 0.5, false, rng));
        es.push(uniform(n, r, rng));
    }
    Instance { corpus, es, c, d, r }
}

#[test]
fn gram_updates_match_the_concatenated_problem() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..30 {
        let inst = instance(&mut rng);
        let lambda = rng.random_range(0.01..1.0);
        let alpha = rng.random_range(0.5..2.0);

        // P over the token-concatenated corpus: W_cat·E_cat·(E_catᵀE_cat + λI)⁻¹.
        let total: usize = inst.es.iter().map(|e| e.nrows()).sum();
        let mut w_cat = DMatrix::zeros(inst.c, total);
        let mut e_cat = DMatrix::zeros(total, inst.r);
        let mut offset = 0;
        for (t, e) in inst.corpus.iter().zip(&inst.es) {
            let n = e.nrows();
            w_cat.view_mut((0, offset), (inst.c, n)).copy_from(&t.w.to_dense());
            e_cat.view_mut((offset, 0), (n, inst.r)).copy_from(e);
            offset += n;
        }
        let system = e_cat.transpose() * &e_cat + DMatrix::identity(inst.r, inst.r) * lambda;
        let expected_p = &w_cat * &e_cat * system.try_inverse().unwrap();

        let mut model = TypeEmbeddings {
            p: DMatrix::zeros(inst.c, inst.r),
            r: vec![DMatrix::zeros(inst.r, inst.r); inst.d],
            frozen: vec![false; inst.c],
        };
        als::update_p(&inst.corpus, &inst.es, lambda, &mut model).unwrap();
        assert!(relative_frobenius(&[model.p.clone()], &[expected_p]) <= 1e-9);

        // R from the stacked Kronecker design, one slice at a time.
        let hyper = Hyperparams { r: inst.r, alpha, lambda_r: lambda, ..Default::default() };
        als::update_r(&inst.corpus, &inst.es, &hyper, &mut model).unwrap();
        let r2 = inst.r * inst.r;
        for k in 0..inst.d {
            let mut lhs = DMatrix::identity(r2, r2) * lambda;
            let mut rhs = DVector::zeros(r2);
            for (t, e) in inst.corpus.iter().zip(&inst.es) {
                let a = kron(e, e);
                lhs += a.transpose() * &a * alpha;
                rhs += a.transpose() * vec_row(&t.x.to_dense()[k]) * alpha;
            }
            let solution = lhs.lu().solve(&rhs).unwrap();
            let got = vec_row(&model.r[k]);
            assert!((got - &solution).norm() <= 1e-9 * solution.norm().max(1e-12));
        }
    }
}

#[test]
fn e_update_matches_gradient_descent_on_the_stacked_problem() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..20 {
        let inst = instance(&mut rng);
        let alpha = rng.random_range(0.5..2.0);
        let lambda_e = rng.random_range(0.05..1.0);
        let model = TypeEmbeddings {
            p: uniform(inst.c, inst.r, &mut rng),
            r: (0..inst.d).map(|_| uniform(inst.r, inst.r, &mut rng)).collect(),
            frozen: vec![false; inst.c],
        };
        let t = &inst.corpus[0];
        let e_prev = &inst.es[0];
        let n = t.num_tokens();

        // Y = [Wᵀ | αX_k | αX_kᵀ], F = [Pᵀ | αR_kE_prevᵀ | αR_kᵀE_prevᵀ].
        let blocks = 1 + 2 * inst.d;
        let mut y = DMatrix::zeros(n, inst.c + (blocks - 1) * n);
        let mut f = DMatrix::zeros(inst.r, inst.c + (blocks - 1) * n);
        y.view_mut((0, 0), (n, inst.c)).copy_from(&t.w.to_dense().transpose());
        f.view_mut((0, 0), (inst.r, inst.c)).copy_from(&model.p.transpose());
        for (k, xk) in t.x.to_dense().iter().enumerate() {
            let rk = &model.r[k];
            let col = inst.c + 2 * k * n;
            y.view_mut((0, col), (n, n)).copy_from(&(xk * alpha));
            f.view_mut((0, col), (inst.r, n)).copy_from(&(rk * e_prev.transpose() * alpha));
            y.view_mut((0, col + n), (n, n)).copy_from(&(xk.transpose() * alpha));
            f.view_mut((0, col + n), (inst.r, n)).copy_from(&(rk.transpose() * e_prev.transpose() * alpha));
        }
        let expected = gd_oracle_ls(&y, &f, lambda_e);
        let got = ESolver::new(&model, alpha, lambda_e).update(t, e_prev).unwrap();
        assert!(relative_frobenius(&[got], &[expected]) <= 1e-6);
    }
}

fn objectives(corpus: &[SentenceTensors], hyper: &Hyperparams, seed: u64) -> Vec<f64> {
    let model = TypeEmbeddings::init(12, 3, 6, seed);
    als::train(corpus, model, hyper).unwrap().trace.iter().map(|l| l.objective).collect()
}

#[test]
fn training_is_invariant_to_token_and_sentence_order() {
    let syn = generate(&SynthConfig { seed: 33, ..Default::default() }).unwrap();
    let hyper = Hyperparams { r: 6, max_rounds: 30, rel_improvement_stop: 0.0, ..Default::default() };
    let base = objectives(&syn.corpus.sentences, &hyper, 5);

    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let mut shuffled: Vec<SentenceTensors> = syn
        .corpus
        .sentences
        .iter()
        .map(|t| {
            let mut perm: Vec<usize> = (0..t.num_tokens()).collect();
            perm.shuffle(&mut rng);
            t.permute_tokens(&perm)
        })
        .collect();
    shuffled.shuffle(&mut rng);
    let other = objectives(&shuffled, &hyper, 5);
    assert_eq!(base.len(), other.len());
    for (a, b) in base.iter().zip(&other) {
        assert!((a - b).abs() <= 1e-8 * a.abs(), "{a} vs {b}");
    }
}

#[test]
fn frozen_rows_survive_training() {
    let syn = generate(&SynthConfig { seed: 35, ..Default::default() }).unwrap();
    let hyper = Hyperparams { r: 6, max_rounds: 25, ..Default::default() };
    let mut model = TypeEmbeddings::init(12, 3, 6, 9);
    for i in [0, 4, 7] {
        model.frozen[i] = true;
    }
    let before = model.clone();
    let after = als::train(&syn.corpus.sentences, model, &hyper).unwrap().model;
    for i in 0..12 {
        let same = before.p.row(i) == after.p.row(i);
        assert_eq!(same, before.frozen[i], "row {i}");
    }
    assert_eq!(before.frozen_fingerprint(), after.frozen_fingerprint());
}

#[test]
fn objective_does_not_grow_over_five_round_windows() {
    for seed in 0..3 {
        let syn = generate(&SynthConfig { seed: 36 + seed, ..Default::default() }).unwrap();
        let hyper =
            Hyperparams { r: 6, max_rounds: 60, rel_improvement_stop: 0.0, e_reinit_period: 0, ..Default::default() };
        let objs = objectives(&syn.corpus.sentences, &hyper, seed);
        for i in 1..objs.len().saturating_sub(5) {
            assert!(objs[i + 5] <= objs[i] * (1.0 + 1e-9), "seed {seed} round {i}: {} -> {}", objs[i], objs[i + 5]);
        }
    }
}
