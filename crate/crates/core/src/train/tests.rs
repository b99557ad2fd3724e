use super::*;
use crate::body::capsule_person;
use crate::gaussian::GaussianSet;
use crate::linalg::quat_identity;
use crate::loss::{ConvPyramid, NullExtractor};
use crate::orbit::make_static_orbit;
use crate::scalar::sigmoid;

fn model() -> ModelConfig {
    ModelConfig { samples: 64, uv_resolution: 16, feature_channels: 4, hidden_widths: vec![8], sample_seed: 3 }
}

fn subject() -> Subject<f64> {
    let t = capsule_person::<f64>();
    let beta = vec![0.0; t.shape_dim()];
    Subject::new(t, beta, &model()).unwrap()
}

/// Targets rendered from a differently seeded model.
fn frames(subject: &Subject<f64>, n: usize, size: usize) -> Vec<TrainFrame<f64>> {
    let truth = TrainState::new(subject, &model(), n, 99).unwrap();
    let cams = make_static_orbit(n, 10.0, 2.7, 40.0, size, size).unwrap();
    let rest = BodyState::rest(&subject.template);
    let canonical = canonical_gaussians(subject, &truth.features, &truth.net).unwrap();
    let posed = posed_gaussians(subject, &canonical, &rest).unwrap();
    let images = cams.iter().map(|c| render_image(&posed, c, [1.0; 3])).collect();
    TrainFrame::zip(images, cams, vec![rest; n]).unwrap()
}

fn smooth_weights() -> TrainConfig {
    TrainConfig { weights: LossWeights { rgb: 0.0, ssim: 1.0, lpips: 0.0, offset: 10.0, scale: 1.0, feature: 1.0 }, ..TrainConfig::default() }
}

#[test]
fn refine_motion_adds_corrections() {
    let s = subject();
    let rest = BodyState::rest(&s.template);
    let (theta, t) = refine_motion(&rest);
    assert_eq!(theta, rest.theta);
    assert_eq!(t, rest.translation);
    let mut moved = BodyState { translation: [0.2, -0.1, 0.3], ..rest.clone() };
    moved.delta_translation = [0.1, 0.0, 0.0];
    assert_eq!(refine_motion(&moved).1, [0.2 + 0.1, -0.1, 0.3]);
}

#[test]
fn translation_gradient_matches_finite_differences() {
    let s = subject();
    let fr = frames(&s, 2, 24);
    let mut state = TrainState::new(&s, &model(), 2, 5).unwrap();
    state.corrections[1].1 = [0.01, -0.02, 0.0];
    let cfg = smooth_weights();
    let (_, g) = objective(&s, &state, &fr, &[1], &cfg, &NullExtractor).unwrap();
    let analytic = g.motion[0].2;
    let h = 1e-6;
    for k in 0..3 {
        let eval = |d: f64| {
            let mut st = state.clone();
            st.corrections[1].1[k] += d;
            objective(&s, &st, &fr, &[1], &cfg, &NullExtractor).unwrap().0.total
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        assert!((fd - analytic[k]).abs() <= 1e-3 * fd.abs().max(1e-4), "axis {k}: fd {fd} vs {}", analytic[k]);
    }
}

#[test]
fn breakdown_total_is_the_weighted_sum() {
    let s = subject();
    let fr = frames(&s, 3, 16);
    let mut state = TrainState::new(&s, &model(), 3, 1).unwrap();
    let cfg = TrainConfig::default();
    let ext = ConvPyramid::<f64>::random(0);
    for b in [[0, 1], [2, 0], [1, 2]] {
        let l = train_step(&s, &mut state, &fr, &b, &cfg, &ext).unwrap();
        let w = cfg.weights;
        let t = l.terms;
        let want = w.rgb * t.rgb + w.ssim * t.ssim + w.lpips * t.lpips + w.offset * t.offset + w.scale * t.scale + w.feature * t.feature;
        assert!((l.total - want).abs() < 1e-12);
    }
    assert_eq!(state.step, 3);
    assert_eq!(state.history.len(), 3);
}

#[test]
fn zero_gradient_steps_change_nothing() {
    let s = subject();
    let fr = frames(&s, 2, 16);
    let mut state = TrainState::new(&s, &model(), 2, 1).unwrap();
    let before = state.clone();
    let cfg = TrainConfig { weights: LossWeights { rgb: 0.0, ssim: 0.0, lpips: 0.0, offset: 0.0, scale: 0.0, feature: 0.0 }, ..TrainConfig::default() };
    for _ in 0..2 {
        train_step(&s, &mut state, &fr, &[0, 1], &cfg, &NullExtractor).unwrap();
    }
    assert_eq!(state.features, before.features);
    assert_eq!(state.net, before.net);
    assert_eq!(state.corrections, before.corrections);
}

/// One Gaussian in front of a 1×1 camera, raw colour optimized under L1.
struct Toy {
    camera: CameraPose<f64>,
    target: Image<f64>,
    bg: Vec3<f64>,
}

impl Toy {
    fn new() -> Self {
        let camera = CameraPose::look_at_origin(0.0, 0.0, 3.0, 30.0, 1, 1).unwrap();
        Toy { camera, target: Image::filled(1, 1, [0.9, 0.2, 0.6]), bg: [1.0, 1.0, 1.0] }
    }

    fn gaussians(&self, raw: Vec3<f64>) -> GaussianSet<f64> {
        let mut g = GaussianSet::default();
        g.push([0.0; 3], raw.map(sigmoid), 1.0, [0.3; 3], quat_identity());
        g
    }

    /// L1 loss and its gradient with respect to the raw colour.
    fn loss_and_grad(&self, raw: Vec3<f64>) -> (f64, Vec3<f64>) {
        let g = self.gaussians(raw);
        let out = rasterize(&g, &self.camera, self.bg);
        let (l, d_img) = crate::loss::l1_rgb_with_grad(&out.image, &self.target).unwrap();
        let gg = render_backward(&out, &d_img).unwrap();
        let c = g.colors[0];
        (l, [0, 1, 2].map(|k| gg.colors[0][k] * c[k] * (1.0 - c[k])))
    }
}

#[test]
fn toy_trajectory_matches_a_scalar_adam_oracle() {
    let toy = Toy::new();
    let lr = 0.05;
    let mut raw = [0.0f64; 3];
    let mut m = MomentBuffers::zeros(3);
    let mut oracle = [(0.0f64, 0.0f64, 0.0f64); 3];
    for t in 1..=10 {
        let (_, g) = toy.loss_and_grad(raw);
        let prev = raw;
        adam_step(&mut raw, &g, &mut m, lr);
        // Hand-rolled: the pixel is 0.99·c + 0.01·bg (alpha clamp), so
        // dL/draw = sign(p − y)/3 · 0.99 · c(1 − c).
        for k in 0..3 {
            let (x, m1, m2) = &mut oracle[k];
            if t == 1 {
                *x = 0.0;
            }
            assert!((*x - prev[k]).abs() < 1e-10);
            let c = 1.0 / (1.0 + (-*x).exp());
            let p = 0.99 * c + 0.01 * toy.bg[k];
            let d = p - toy.target.data[k];
            let sign = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            let g = sign / 3.0 * 0.99 * c * (1.0 - c);
            *m1 = 0.9 * *m1 + 0.1 * g;
            *m2 = 0.999 * *m2 + 0.001 * g * g;
            let mh = *m1 / (1.0 - 0.9f64.powi(t));
            let vh = *m2 / (1.0 - 0.999f64.powi(t));
            *x -= lr * mh / (vh.sqrt() + 1e-8);
            assert!((*x - raw[k]).abs() < 1e-10, "step {t} channel {k}: {} vs {}", *x, raw[k]);
        }
    }
}

#[test]
fn toy_loss_is_non_increasing_after_warmup() {
    let toy = Toy::new();
    let mut raw = [0.0f64; 3];
    let mut m = MomentBuffers::zeros(3);
    let mut losses = Vec::new();
    for _ in 0..60 {
        let (l, g) = toy.loss_and_grad(raw);
        losses.push(l);
        adam_step(&mut raw, &g, &mut m, 0.01);
    }
    for w in losses[10..].windows(2) {
        assert!(w[1] <= w[0] + 1e-15, "{} then {}", w[0], w[1]);
    }
}

#[test]
fn every_tensor_receives_gradient() {
    let s = subject();
    let fr = frames(&s, 2, 24);
    let cfg = TrainConfig::default();
    let ext = ConvPyramid::<f64>::random(1);
    for seed in 0..5 {
        let state = TrainState::new(&s, &model(), 2, 100 + seed).unwrap();
        let (_, g) = objective(&s, &state, &fr, &[0, 1], &cfg, &ext).unwrap();
        let nonzero = |v: &[f64]| v.iter().any(|x| *x != 0.0);
        assert!(nonzero(&g.features));
        for l in 0..g.net.weights.len() {
            assert!(nonzero(&g.net.weights[l]) && nonzero(&g.net.bias[l]), "seed {seed} layer {l}");
        }
        for (_, dth, dt) in &g.motion {
            assert!(dth.iter().flatten().any(|x| *x != 0.0));
            assert!(dt.iter().any(|x| *x != 0.0));
        }
    }
}

#[test]
fn parameters_stay_valid_after_updates() {
    let s = subject();
    let fr = frames(&s, 2, 16);
    let mut state = TrainState::new(&s, &model(), 2, 4).unwrap();
    let cfg = TrainConfig { learning_rate: 0.1, ..TrainConfig::default() };
    for _ in 0..5 {
        train_step(&s, &mut state, &fr, &[0, 1], &cfg, &NullExtractor).unwrap();
        let g = canonical_gaussians(&s, &state.features, &state.net).unwrap();
        g.validate().unwrap();
        let posed = posed_gaussians(&s, &g, &with_correction(&fr[0].body, &state.corrections[0])).unwrap();
        posed.validate().unwrap();
    }
}

#[test]
fn schedule_covers_every_frame_each_epoch() {
    let cfg = TrainConfig { epochs: 3, batch_size: 2, ..TrainConfig::default() };
    let sched = schedule(5, &cfg);
    assert_eq!(sched.len() as u64, cfg.total_steps(5));
    assert_eq!(sched.len(), 9);
    for epoch in sched.chunks(3) {
        let mut seen: Vec<usize> = epoch.iter().flatten().copied().collect();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
    }
    assert_eq!(sched, schedule(5, &cfg));
    assert_eq!(TrainConfig::default().total_steps(81), 41_000);
}

#[test]
fn fit_is_reproducible_and_resumable() {
    let s = subject();
    let fr = frames(&s, 3, 16);
    let cfg = TrainConfig { epochs: 2, seed: 11, ..TrainConfig::default() };
    let ext = ConvPyramid::<f64>::random(0);
    let init = TrainState::new(&s, &model(), 3, 11).unwrap();
    let a = fit(&s, &fr, &cfg, &ext, init.clone(), &mut ()).unwrap();
    let b = fit(&s, &fr, &cfg, &ext, init.clone(), &mut ()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.step, 4);

    let half = fit(&s, &fr, &TrainConfig { epochs: 1, ..cfg.clone() }, &ext, init, &mut ()).unwrap();
    let resumed = TrainState::from_checkpoint(half.to_checkpoint(&s)).unwrap();
    let c = fit(&s, &fr, &cfg, &ext, resumed, &mut ()).unwrap();
    assert_eq!(c.features, a.features);
    assert_eq!(c.net, a.net);
    assert_eq!(c.corrections, a.corrections);
    assert_eq!(c.history[..], a.history[2..]);
}

#[test]
fn fit_rejects_count_mismatch() {
    let s = subject();
    let fr = frames(&s, 3, 16);
    let state = TrainState::new(&s, &model(), 2, 0).unwrap();
    assert!(fit(&s, &fr, &TrainConfig::default(), &NullExtractor, state, &mut ()).is_err());
    let cams = make_static_orbit(2, 0.0, 2.7, 40.0, 16, 16).unwrap();
    assert!(TrainFrame::zip(vec![Image::<f64>::new(16, 16); 3], cams, vec![BodyState::rest(&s.template); 3]).is_err());
}

#[test]
fn checkpoints_fire_at_the_interval() {
    struct Count(Vec<u64>);
    impl FitObserver<f64> for Count {
        fn checkpoint(&mut self, state: &TrainState<f64>) -> Result<()> {
            self.0.push(state.step);
            Ok(())
        }
    }
    let s = subject();
    let fr = frames(&s, 2, 16);
    let cfg = TrainConfig { epochs: 5, batch_size: 1, checkpoint_interval: 4, ..TrainConfig::default() };
    let mut obs = Count(Vec::new());
    fit(&s, &fr, &cfg, &NullExtractor, TrainState::new(&s, &model(), 2, 0).unwrap(), &mut obs).unwrap();
    assert_eq!(obs.0, vec![4, 8]);
}

#[test]
fn loss_csv_round_trip() {
    let terms = LossTerms { rgb: 0.1, ssim: 0.2, lpips: 1.0 / 3.0, offset: 1e-7, scale: 0.0, feature: 2.5 };
    let h = vec![LossRecord { step: 1, loss: LossBreakdown { terms, total: 0.7 } }, LossRecord { step: 2, loss: LossBreakdown::default() }];
    let text = format_loss_csv(&h);
    assert!(text.starts_with("step,rgb,ssim,lpips,offset,scale,feature,total\n"));
    assert_eq!(parse_loss_csv(&text).unwrap(), h);
}

#[test]
fn manifest_echoes_the_defaults() {
    let m = run_manifest(&ModelConfig::default(), &TrainConfig::default(), &[("body".into(), "ab12".into())]).unwrap();
    assert!(m.contains("epochs = 1000"));
    assert!(m.contains("batch_size = 2"));
    assert!(m.contains("learning_rate = 0.003"));
    assert!(m.contains("body = \"ab12\""));
}
