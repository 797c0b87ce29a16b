//! Randomised invariants.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crsfl::data::{synth_classification, Partition};
use crsfl::engine::{fedavg_aggregate, Simulation, TrainingParams};
use crsfl::model::Architecture;
use crsfl::privacy;
use crsfl::sampler::{self, SamplerState};
use crsfl::{CodecId, SamplerConfig, SamplerKind, SparseUpdate};

fn sparse(d: usize, entries: &[(usize, f64)]) -> SparseUpdate {
    let mut dense = vec![0.0; d];
    for &(j, v) in entries {
        dense[j % d] = v;
    }
    SparseUpdate::from_dense_nonzeros(&dense, CodecId::Crs).unwrap()
}

fn gradient() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![1 => Just(0.0), 4 => -1e3f64..1e3], 2..40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn aggregation_is_linear(
        d in 1usize..30,
        a in prop::collection::vec((0usize..30, -1e3f64..1e3), 0..10),
        b in prop::collection::vec((0usize..30, -1e3f64..1e3), 0..10),
        s in -10.0f64..10.0,
    ) {
        let (ua, ub) = (sparse(d, &a), sparse(d, &b));
        let ab = fedavg_aggregate(&[ua.clone(), ub.clone()], 2).unwrap();
        let aa = fedavg_aggregate(&[ua.clone(), ua.clone()], 2).unwrap();
        let bb = fedavg_aggregate(&[ub.clone(), ub.clone()], 2).unwrap();
        let scaled_vals: Vec<f64> = ua.values().iter().map(|v| s * v).collect();
        let scaled = SparseUpdate::new(d, ua.indices().to_vec(), scaled_vals, 0.0, CodecId::Crs).unwrap();
        let sa = fedavg_aggregate(&[scaled], 1).unwrap();
        let a1 = fedavg_aggregate(&[ua], 1).unwrap();
        for j in 0..d {
            let tol = 1e-15 * (aa[j].abs() + bb[j].abs()).max(1e-300) * 4.0;
            prop_assert!((ab[j] - 0.5 * (aa[j] + bb[j])).abs() <= tol);
            prop_assert!((sa[j] - s * a1[j]).abs() <= 1e-15 * (s * a1[j]).abs() * 4.0);
        }
    }

    #[test]
    fn k_capped_samplers_respect_k(g in gradient(), k_frac in 0.0f64..1.0, p in 0.05f64..1.0, seed: u64) {
        let d = g.len();
        let k = 1 + ((d - 2) as f64 * k_frac) as usize;
        let nnz = g.iter().filter(|x| **x != 0.0).count();
        for kind in [SamplerKind::Crs, SamplerKind::MinMax, SamplerKind::TopK] {
            let cfg = SamplerConfig { epsilon: Some(1.0), ..SamplerConfig::new(kind, k, p) };
            let mut state = SamplerState::new(d);
            let u = sampler::compress(&cfg, &g, &mut state, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert!(u.len() <= k.min(nnz));
            prop_assert!(u.payload_bytes() <= 21 + 8 * k);
            prop_assert!(u.indices().windows(2).all(|w| w[0] < w[1]));
            for (j, v) in u.entries() {
                prop_assert!(g[j] != 0.0);
                prop_assert_eq!(v.signum(), g[j].signum());
                if kind != SamplerKind::TopK {
                    prop_assert!(v.abs() >= g[j].abs());
                }
            }
        }
    }

    #[test]
    fn compressed_output_is_finite_and_decodes(g in gradient(), seed: u64) {
        let d = g.len();
        for kind in [SamplerKind::Poisson, SamplerKind::GSpar, SamplerKind::Identity] {
            let cfg = SamplerConfig::new(kind, (d / 2).max(1), 0.5);
            let u = sampler::compress(&cfg, &g, &mut SamplerState::new(d), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert!(u.values().iter().all(|v| v.is_finite()));
            let bytes = u.to_bytes();
            prop_assert_eq!(bytes.len(), u.payload_bytes());
            let back = SparseUpdate::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.indices(), u.indices());
        }
    }

    #[test]
    fn issued_certificates_are_admissible(
        eps in 0.01f64..5.0,
        p_frac in 0.0f64..=1.0,
        d in 1usize..5000,
        k_frac in 0.0f64..=1.0,
    ) {
        let p_max = privacy::max_sampling_probability(eps).unwrap();
        let p = p_frac * p_max;
        let k = (k_frac * d as f64) as usize;
        let cert = privacy::issue_certificate(eps, p, k, d);
        if cert.issued {
            prop_assert!(p <= p_max);
            prop_assert!(privacy::ratio_admissible(eps, p, d, k));
            let k_max = privacy::max_sampling_size(eps, p, d).unwrap();
            prop_assert!(k <= k_max);
            if k_max < d {
                prop_assert!(!privacy::issue_certificate(eps, p, k_max + 1, d).issued);
            }
        }
        prop_assert!(!privacy::issue_certificate(eps, p_max * 1.0001 + 1e-9, k, d).issued);
    }

    #[test]
    fn logreg_gradient_matches_finite_differences(
        f in 1usize..5,
        c in 2usize..4,
        seed in 0u64..1000,
        w in prop::collection::vec(-1.0f64..1.0, 20),
    ) {
        let arch = Architecture::logreg(f, c);
        let ds = synth_classification(6 * c, f, c, 1.0, seed).unwrap();
        let batch: Vec<usize> = (0..ds.len()).collect();
        let w: Vec<f64> = w.iter().cycle().take(arch.num_weights()).copied().collect();
        let (_, g) = arch.loss_and_grad(&w, &ds, &batch).unwrap();
        let h = 1e-5;
        for j in 0..w.len() {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[j] += h;
            wm[j] -= h;
            let fd = (arch.loss_and_grad(&wp, &ds, &batch).unwrap().0 - arch.loss_and_grad(&wm, &ds, &batch).unwrap().0) / (2.0 * h);
            prop_assert!((fd - g[j]).abs() <= 1e-4 * fd.abs().max(g[j].abs()).max(1e-6));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn round_upload_bytes_are_capped(m in 1usize..6, k in 1usize..9, rounds in 1usize..4, seed: u64) {
        let ds = synth_classification(12 * m, 3, 3, 1.0, seed).unwrap();
        let arch = Architecture::logreg(3, 3);
        let per = ds.len() / m;
        let partition = Partition { assignments: (0..m).map(|c| (c * per..(c + 1) * per).collect()).collect() };
        let params = TrainingParams {
            seed,
            rounds,
            lr: 0.1,
            lr_decay: 0.0,
            local_batch: 0,
            local_epochs: 1,
            eval_every: rounds,
            update_rule: Default::default(),
            broadcast: Default::default(),
            laplace_scale: None,
        };
        for kind in [SamplerKind::Crs, SamplerKind::MinMax, SamplerKind::TopK] {
            let cfg = SamplerConfig { epsilon: Some(1.0), ..SamplerConfig::new(kind, k, 0.6) };
            let mut sim = Simulation::new(params.clone(), cfg, arch, arch.init_weights(seed), &ds, &ds, &partition, Some(2)).unwrap();
            for r in sim.run().unwrap() {
                prop_assert!(r.upload_bytes_total as usize <= m * (21 + 8 * k));
            }
        }
    }
}
