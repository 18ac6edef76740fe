use walldiff_core::diffusion::{training_loss, Denoiser, Parameterization};
use walldiff_core::drawing::synth::synth_layout;
use walldiff_core::drawing::{training_pair, GroupTag};
use walldiff_core::net::{is_inert_parameter, DenoiserModel, UNetConfig};
use walldiff_core::suite::randomize_head;
use walldiff_core::tensor::{seeded_gaussian, Graph, Tensor};
use walldiff_core::NoiseSchedule;

fn small() -> UNetConfig {
    UNetConfig {
        height: 16,
        width: 32,
        depth: 2,
        base_width: 8,
        time_enc_dim: 8,
        cond_enc_dim: 8,
        ..UNetConfig::default()
    }
}

fn inputs(cfg: &UNetConfig) -> (Tensor, Tensor) {
    let d = synth_layout(cfg.width.max(24), cfg.height.max(16), 3, GroupTag::Group8)
        .unwrap()
        .resample(cfg.width, cfg.height)
        .unwrap();
    let (x0, y) = training_pair(&d);
    (x0.to_tensor(), y.to_tensor())
}

#[test]
fn output_matches_input_shape_and_starts_at_zero() {
    let cfg = small();
    let m = DenoiserModel::new(cfg).unwrap();
    let (_, y) = inputs(&cfg);
    let x = seeded_gaussian(&[1, 16, 32], 1);
    let out = m.predict(&x, 10, &y, 1.0).unwrap();
    assert_eq!(out.shape(), &[1, 16, 32]);
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn wrong_resolution_is_rejected() {
    let m = DenoiserModel::new(small()).unwrap();
    let x = Tensor::zeros(&[1, 8, 8]);
    assert!(m.predict(&x, 1, &x, 1.0).is_err());
}

#[test]
fn initialization_is_seeded() {
    let a = DenoiserModel::new(small()).unwrap();
    let b = DenoiserModel::new(small()).unwrap();
    let c = DenoiserModel::new(UNetConfig {
        init_seed: 9,
        ..small()
    })
    .unwrap();
    assert_eq!(a.params().tensors(), b.params().tensors());
    assert_ne!(a.params().tensors(), c.params().tensors());
}

#[test]
fn every_live_parameter_receives_gradient() {
    let cfg = small();
    let mut m = DenoiserModel::new(cfg).unwrap();
    randomize_head(&mut m, 2).unwrap();
    let sched = NoiseSchedule::build(100, 0.008).unwrap();
    let (x0, y) = inputs(&cfg);
    let eps = seeded_gaussian(&[1, 16, 32], 4);
    let tape = training_loss(
        &m,
        &x0,
        &y,
        2.5,
        40,
        &eps,
        &sched,
        Parameterization::PredictX0,
    )
    .unwrap();
    let mut store = m.params().clone();
    tape.backward_into(&mut store).unwrap();
    let mut inert = 0;
    for (name, t) in store.iter() {
        let g = t.grad().expect("gradient written");
        let peak = g.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if is_inert_parameter(name) {
            inert += 1;
            assert_eq!(peak, 0.0, "{name} should be inert");
        } else {
            assert!(peak > 0.0, "{name} received no gradient");
        }
    }
    assert!(inert > 0);
}

#[test]
fn cross_attention_broadcasts_a_single_key() {
    let cfg = small();
    let m = DenoiserModel::new(cfg).unwrap();
    let (_, y) = inputs(&cfg);
    let mut g = Graph::new();
    let p = g.bind(m.params());
    let xi = g.input(seeded_gaussian(&[1, 16, 32], 5));
    let yi = g.input(y);
    let (_, ab) = m.forward_traced(&mut g, &p, xi, 33, yi, 1.5).unwrap();
    for a in [ab.cab_t, ab.cab_d] {
        assert!(g.value(a.probs).data().iter().all(|&v| v == 1.0));
        let v = g.value(a.pre_conv);
        let hw = v.shape()[1] * v.shape()[2];
        for ch in v.data().chunks(hw) {
            assert!(ch.iter().all(|x| x.to_bits() == ch[0].to_bits()));
        }
    }
    let sab = g.value(ab.sab.probs);
    let keys = sab.shape()[1];
    assert_eq!(keys, sab.shape()[0]);
    for row in sab.data().chunks(keys) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn condition_changes_the_prediction() {
    let cfg = small();
    let mut m = DenoiserModel::new(cfg).unwrap();
    randomize_head(&mut m, 6).unwrap();
    let (_, y) = inputs(&cfg);
    let x = seeded_gaussian(&[1, 16, 32], 7);
    let a = m.predict(&x, 20, &y, 1.0).unwrap();
    let b = m.predict(&x, 20, &y, 2.5).unwrap();
    let c = m.predict(&x, 60, &y, 1.0).unwrap();
    assert!(a.max_abs_diff(&b) > 0.0);
    assert!(a.max_abs_diff(&c) > 0.0);
}
