mod common;

use igd::denoiser::Denoiser;
use igd::detector::{
    argmax, extract_feature, record_trajectory, train_mlp_classifier, Classifier, ClassifierConfig, Verdict,
};
use igd::eval::{auroc, fpr_at_tpr95, pca_project, roc_area, roc_curve, EvalReport};
use igd::gate::{generate_unguarded, generate_with_gate, GateConfig, GateStatus};
use igd::nn::{softmax, Adam, AdamConfig, Mlp};
use igd::rng::SeedStream;
use igd::sampler::CountingPredictor;
use igd::schedule::{build_schedule, make_inference_map, NoiseSchedule, ScheduleConfig};
use igd::world::{build_world, Variant, WorldConfig};
use igd::Exec;
use proptest::prelude::*;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn alpha_bars_strictly_decrease(betas in prop::collection::vec(1e-6f64..0.5, 1..300)) {
        let s = NoiseSchedule::from_betas(betas).unwrap();
        let ab = s.alpha_bars();
        prop_assert!(ab[0] < 1.0);
        prop_assert!(ab.windows(2).all(|w| w[1] < w[0]));
        prop_assert!(ab.iter().all(|a| *a > 0.0));
    }

    #[test]
    fn reverse_inverts_forward_at_t0(
        beta0 in 1e-5f64..0.05,
        x0 in prop::collection::vec(-3.0f64..3.0, 1..12),
        seed in any::<u64>(),
    ) {
        let s = build_schedule(10, beta0, beta0 + 0.01).unwrap();
        let eps = SeedStream::new(seed).normal_vec(x0.len());
        let xt = s.forward_diffuse(&x0, 0, &eps).unwrap();
        let back = s.reverse_step(&xt, &eps, 0, &vec![0.0; x0.len()]).unwrap();
        for (a, b) in back.iter().zip(&x0) {
            prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-50.0f64..50.0, 1..10)) {
        let p = softmax(&logits);
        prop_assert!(p.iter().all(|v| *v > 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn argmax_label_survives_positive_rescaling(
        logits in prop::collection::vec(-20.0f64..20.0, 2..9),
        scale in 0.01f64..100.0,
    ) {
        let scaled: Vec<f64> = logits.iter().map(|z| z * scale).collect();
        prop_assert_eq!(argmax(&logits), argmax(&scaled));
        let a = Verdict::from_logits(logits.clone(), 0.5);
        let b = Verdict::from_logits(scaled, 0.5);
        prop_assert_eq!(a.label, b.label);
    }

    #[test]
    fn metrics_match_oracles_and_stay_in_range(seed in any::<u64>()) {
        let (labels, scores) = common::random_scored_set(&mut SeedStream::new(seed), 200);
        let samples = common::to_samples(&labels, &scores);
        let auc = auroc(&samples).unwrap();
        prop_assert!((auc - common::brute_auroc(&labels, &scores)).abs() < 1e-9);
        let fpr = fpr_at_tpr95(&samples).unwrap();
        prop_assert_eq!(fpr, common::scan_fpr_at_tpr95(&labels, &scores));
        prop_assert!((roc_area(&roc_curve(&samples).unwrap()) - auc).abs() < 1e-12);
        let r = EvalReport::compute(&samples, 0.5).unwrap();
        for m in [r.accuracy, r.auroc, r.fpr_at_tpr95] {
            prop_assert!((0.0..=1.0).contains(&m));
        }
    }

    #[test]
    fn pca_with_full_rank_preserves_distances(
        n in 2usize..20,
        d in 1usize..6,
        seed in any::<u64>(),
    ) {
        let mut rng = SeedStream::new(seed);
        let v: Vec<Vec<f64>> = (0..n).map(|_| rng.normal_vec(d)).collect();
        let p = pca_project(&v, d).unwrap();
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (dist(&v[i], &v[j]), dist(&p.points[i], &p.points[j]));
                prop_assert!((a - b).abs() < 1e-9 * (1.0 + a), "{a} vs {b}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gradients_match_finite_differences(seed in any::<u64>(), out in 1usize..6) {
        let mut rng = SeedStream::new(seed);
        let net = common::random_net(&mut rng, 4, 8, out.max(2));
        let x = rng.normal_vec(net.input_dim());
        let y = rng.normal_vec(net.output_dim());
        let label = rng.below(0, net.output_dim());
        let (_, g) = net.mse_loss_grad(&x, &y).unwrap();
        let e = common::fd_max_rel_err(&net, &g, 1e-5, |n: &Mlp| n.mse_loss_grad(&x, &y).unwrap().0);
        prop_assert!(e < 1e-4, "mse rel err {e}");
        let (_, g) = net.xent_loss_grad(&x, label).unwrap();
        let e = common::fd_max_rel_err(&net, &g, 1e-5, |n: &Mlp| n.xent_loss_grad(&x, label).unwrap().0);
        prop_assert!(e < 1e-4, "xent rel err {e}");
    }

    #[test]
    fn adam_training_is_deterministic(seed in any::<u64>()) {
        let run = || {
            let mut rng = SeedStream::new(seed);
            let mut net = Mlp::glorot(&[3, 5, 2], seed).unwrap();
            let mut opt = Adam::new(&net, AdamConfig::default()).unwrap();
            for _ in 0..10 {
                let x = rng.normal_vec(3);
                let (_, g) = net.xent_loss_grad(&x, rng.below(0, 2)).unwrap();
                opt.step(&mut net, &g).unwrap();
            }
            net
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn world_variants_separate_but_share_images(seed in 0u64..500, sigma in 0.02f64..0.2) {
        let cfg = WorldConfig {
            dim: 6,
            embed_dim: 5,
            embed_sigma: sigma,
            separation: 6.0 * sigma,
            ..WorldConfig::default()
        };
        let w = build_world(&cfg, seed).unwrap();
        for id in w.nsfw_ids().collect::<Vec<_>>() {
            let c = &w.concepts[id];
            let gap = dist(c.center(Variant::Naive).unwrap(), c.center(Variant::Adversarial).unwrap());
            prop_assert!(gap > 3.0 * sigma);
            let mut r1 = SeedStream::new(seed);
            let mut r2 = SeedStream::new(seed);
            let naive = w.sample_prompt(id, Variant::Naive, 0, &mut SeedStream::new(1)).unwrap();
            let adv = w.sample_prompt(id, Variant::Adversarial, 0, &mut SeedStream::new(1)).unwrap();
            prop_assert_eq!(w.sample_pair(naive, &mut r1).unwrap().x0, w.sample_pair(adv, &mut r2).unwrap().x0);
        }
    }
}

fn toy_denoiser(seed: u64) -> (Denoiser, NoiseSchedule) {
    let sc = ScheduleConfig {
        t_max: 100,
        ..ScheduleConfig::default()
    };
    let dn = Denoiser::init(3, 2, 4, &[6], sc, seed).unwrap();
    (dn, sc.build().unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn features_are_pure_and_prefix_consistent(seed in any::<u64>(), k in 1usize..10) {
        let (dn, sched) = toy_denoiser(seed);
        let map = make_inference_map(100, 10).unwrap();
        let cond = [0.3, -0.7];
        let a = extract_feature(&dn, &sched, &map, &cond, &[k], seed ^ 1).unwrap();
        let b = extract_feature(&dn, &sched, &map, &cond, &[k], seed ^ 1).unwrap();
        prop_assert_eq!(&a, &b);
        let traj = record_trajectory(&dn, &sched, &map, &cond, 10, seed ^ 1).unwrap();
        prop_assert_eq!(&a.vector, &traj[k - 1]);
    }

    #[test]
    fn gate_blocks_early_or_matches_unguarded(seed in any::<u64>(), k in 1usize..10, threshold in 0.05f64..0.95) {
        let (dn, sched) = toy_denoiser(seed);
        let map = make_inference_map(100, 10).unwrap();
        let judge = Classifier::new(Mlp::glorot(&[3, 4, 2], seed ^ 7).unwrap(), vec![k], threshold, 3).unwrap();
        let cfg = GateConfig { gate_steps: vec![k], threshold, num_inference_steps: 10 };
        let cond = [1.0, 0.5];
        let counter = CountingPredictor::new(&dn);
        let res = generate_with_gate(&counter, &judge, &sched, &map, &cfg, &cond, seed).unwrap();
        match res.status {
            GateStatus::Blocked => {
                prop_assert_eq!(counter.calls(), k);
                prop_assert!(res.final_latent.is_none());
            }
            GateStatus::Completed => {
                prop_assert_eq!(counter.calls(), 10);
                let plain = generate_unguarded(&dn, &sched, &map, &cond, seed).unwrap();
                prop_assert_eq!(res.final_latent.unwrap(), plain);
            }
        }
    }

    #[test]
    fn classifier_training_is_bitwise_reproducible_across_executors(seed in any::<u64>()) {
        let mut rng = SeedStream::new(seed);
        let feats: Vec<Vec<f64>> = (0..40).map(|_| rng.normal_vec(4)).collect();
        let labels: Vec<usize> = feats.iter().map(|f| usize::from(f[0] > 0.0)).collect();
        let labels = if labels.iter().all(|l| *l == labels[0]) {
            (0..40).map(|i| i % 2).collect()
        } else {
            labels
        };
        let cfg = ClassifierConfig { hidden: vec![8, 4], epochs: 3, batch_size: 20, ..ClassifierConfig::default() };
        let (a, _) = train_mlp_classifier(&feats, &labels, 2, &cfg, seed, Exec::Sequential).unwrap();
        let (b, _) = train_mlp_classifier(&feats, &labels, 2, &cfg, seed, Exec::Parallel).unwrap();
        let (c, _) = train_mlp_classifier(&feats, &labels, 2, &cfg, seed, Exec::Parallel).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&b, &c);
    }
}
