use std::fs;

use fuseformer::data::{generate_sample, ClipSample, SyntheticSpec};
use fuseformer::layers::Params;
use fuseformer::model::{ClipTensor, ModelConfig, Variant};
use fuseformer::tensor::checkpoint;
use fuseformer::training::{disc_loss, gen_adv_loss, recon_loss, CheckpointPaths, Precision, TrainConfig, Trainer};
use fuseformer::{no_grad, Element, Error, Tensor};
use proptest::prelude::*;

fn micro_data(clips: usize) -> Vec<ClipSample> {
    let spec = SyntheticSpec {
        clips,
        t: 4,
        height: 16,
        width: 16,
        objects: 2,
        speed: (0.5, 1.0),
        ..SyntheticSpec::toy()
    };
    (0..clips)
        .map(|i| {
            let g = generate_sample(&spec, i as u64).unwrap();
            ClipSample {
                id: format!("clip_{i}"),
                clip: ClipTensor::new(g.frames, g.masks).unwrap(),
            }
        })
        .collect()
}

fn micro_train(iters: u64, precision: Precision) -> TrainConfig {
    TrainConfig {
        total_iters: iters,
        clip_len: 3,
        precision,
        log_wall_time: false,
        ..TrainConfig::toy()
    }
}

fn snapshot<T: Element, M: Params<T>>(m: &M) -> Vec<Vec<T>> {
    m.named_params().iter().map(|(_, t)| t.to_vec()).collect()
}

fn log_of<T: Element>(mcfg: &ModelConfig, tcfg: &TrainConfig, data: &[ClipSample]) -> String {
    let mut trainer = Trainer::<T>::new(mcfg, tcfg).unwrap();
    let mut log = Vec::new();
    trainer.run(data, None, &mut log).unwrap();
    String::from_utf8(log).unwrap()
}

#[test]
fn fixed_seed_gives_identical_f64_logs() {
    let data = micro_data(2);
    let mcfg = ModelConfig::micro(Variant::Vif);
    let tcfg = micro_train(3, Precision::F64);
    let a = log_of::<f64>(&mcfg, &tcfg, &data);
    assert_eq!(a, log_of::<f64>(&mcfg, &tcfg, &data));
    assert_eq!(a.lines().count(), 3);
    for (i, line) in a.lines().enumerate() {
        assert!(line.starts_with(&format!("iter={} l_r=", i + 1)), "{line}");
        assert!(line.ends_with(" ms=0"), "{line}");
    }
    let other = TrainConfig { seed: 7, ..tcfg };
    assert_ne!(a, log_of::<f64>(&mcfg, &other, &data));
}

#[test]
fn learning_rate_drops_after_each_milestone() {
    let tcfg = TrainConfig {
        lr_drop_iters: vec![2],
        ..micro_train(3, Precision::F64)
    };
    let log = log_of::<f64>(&ModelConfig::micro(Variant::VibT), &tcfg, &micro_data(1));
    let lrs: Vec<&str> = log
        .lines()
        .map(|l| l.split(" lr=").nth(1).unwrap().split(' ').next().unwrap())
        .collect();
    let lr = tcfg.lr;
    assert_eq!(lrs, [lr.to_string(), lr.to_string(), (lr * 0.1).to_string()]);
}

#[test]
fn generator_and_discriminator_steps_touch_only_their_own_weights() {
    let data = micro_data(1);
    let mcfg = ModelConfig::micro(Variant::Vif);
    let mut trainer = Trainer::<f64>::new(&mcfg, &micro_train(1, Precision::F64)).unwrap();
    let (_, clip) = trainer.sample(&data, 0).unwrap();
    let clips = [clip];

    let gen0 = snapshot(&trainer.gen);
    let disc0 = snapshot(trainer.disc.as_ref().unwrap());
    let (l_r, l_adv, fakes) = trainer.gen_step(&clips, 1e-3).unwrap();
    assert!(l_r >= 0.0 && l_adv >= 0.0);
    assert_ne!(snapshot(&trainer.gen), gen0);
    assert_eq!(snapshot(trainer.disc.as_ref().unwrap()), disc0);

    let gen1 = snapshot(&trainer.gen);
    let l_d = trainer.disc_step(&clips, &fakes, 1e-3).unwrap();
    assert!(l_d >= 0.0);
    assert_eq!(snapshot(&trainer.gen), gen1);
    assert_ne!(snapshot(trainer.disc.as_ref().unwrap()), disc0);
}

#[test]
fn resuming_matches_an_uninterrupted_run() {
    let data = micro_data(2);
    let mcfg = ModelConfig::micro(Variant::Vif);
    let full_cfg = micro_train(4, Precision::F32);
    let dir = tempfile::tempdir().unwrap();

    let mut full = Trainer::<f32>::new(&mcfg, &full_cfg).unwrap();
    let mut full_log = Vec::new();
    full.run(&data, None, &mut full_log).unwrap();

    let mut first = Trainer::<f32>::new(&mcfg, &micro_train(2, Precision::F32)).unwrap();
    first.run(&data, Some(dir.path()), &mut Vec::new()).unwrap();
    let stem = dir.path().join("checkpoint");
    let paths = CheckpointPaths::new(&stem);
    for p in [&paths.gen, &paths.disc, &paths.gen_adam, &paths.disc_adam, &paths.state] {
        assert!(p.exists(), "{}", p.display());
    }

    let mut resumed = Trainer::<f32>::new(&mcfg, &full_cfg).unwrap();
    resumed.resume(&stem).unwrap();
    assert_eq!(resumed.iter, 2);
    let mut tail = Vec::new();
    resumed.run(&data, None, &mut tail).unwrap();
    let tail = String::from_utf8(tail).unwrap();
    assert!(tail.starts_with("iter=3 "));
    let full_log = String::from_utf8(full_log).unwrap();
    assert_eq!(
        tail,
        full_log.lines().skip(2).map(|l| format!("{l}\n")).collect::<String>()
    );
    assert_eq!(snapshot(&resumed.gen), snapshot(&full.gen));
}

#[test]
fn checkpoints_reproduce_outputs_bit_for_bit() {
    let data = micro_data(1);
    let mcfg = ModelConfig::micro(Variant::VibS);
    let mut trainer = Trainer::<f32>::new(&mcfg, &micro_train(2, Precision::F32)).unwrap();
    trainer.run(&data, None, &mut Vec::new()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.gen");
    checkpoint::save(&path, &trainer.gen.named_params()).unwrap();

    let fresh = fuseformer::model::Generator::<f32>::new(&ModelConfig { seed: 99, ..mcfg }).unwrap();
    checkpoint::load_into(&path, &fresh.named_params()).unwrap();
    let clip = data[0].clip.cast::<f32>();
    let a = no_grad(|| trainer.gen.forward(&clip).unwrap().to_vec());
    let b = no_grad(|| fresh.forward(&clip).unwrap().to_vec());
    assert_eq!(
        a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn mismatched_checkpoints_name_the_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.gen");
    let small = fuseformer::model::Generator::<f32>::new(&ModelConfig::micro(Variant::Vif)).unwrap();
    checkpoint::save(&path, &small.named_params()).unwrap();
    let wide = fuseformer::model::Generator::<f32>::new(&ModelConfig {
        d: 32,
        ..ModelConfig::micro(Variant::Vif)
    })
    .unwrap();
    let err = checkpoint::load_into(&path, &wide.named_params()).unwrap_err();
    assert!(
        matches!(&err, Error::Checkpoint { name, .. } if name == "embed.weight"),
        "{err}"
    );
}

#[test]
fn without_adversarial_term_no_discriminator_is_saved() {
    let data = micro_data(1);
    let dir = tempfile::tempdir().unwrap();
    let tcfg = TrainConfig {
        lambda_adv: 0.0,
        ..micro_train(1, Precision::F32)
    };
    let mut trainer = Trainer::<f32>::new(&ModelConfig::micro(Variant::VibT), &tcfg).unwrap();
    assert!(trainer.disc.is_none());
    let log = {
        let mut log = Vec::new();
        trainer.run(&data, Some(dir.path()), &mut log).unwrap();
        String::from_utf8(log).unwrap()
    };
    assert!(log.contains(" l_adv=0 l_d=0 "), "{log}");
    let paths = CheckpointPaths::new(&dir.path().join("checkpoint"));
    assert!(paths.gen.exists() && !paths.disc.exists());
    let state = fs::read_to_string(&paths.state).unwrap();
    assert!(state.contains("iter = 1"), "{state}");
}

#[test]
fn short_clips_are_reported_by_id() {
    let mut data = micro_data(1);
    data[0].id = "tiny".into();
    let tcfg = TrainConfig {
        clip_len: 9,
        ..micro_train(1, Precision::F32)
    };
    let mut trainer = Trainer::<f32>::new(&ModelConfig::micro(Variant::Vif), &tcfg).unwrap();
    let err = trainer.run(&data, None, &mut Vec::new()).unwrap_err();
    assert!(matches!(&err, Error::Dataset { clip, .. } if clip == "tiny"), "{err}");
}

proptest! {
    #[test]
    fn losses_are_never_negative(p in prop::collection::vec(-2.0f64..2.0, 6), t in prop::collection::vec(-2.0f64..2.0, 6), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (p, t) = (Tensor::from_vec(&[6], p).unwrap(), Tensor::from_vec(&[6], t).unwrap());
        prop_assert!(recon_loss(&p, &t).unwrap().item() >= 0.0);
        let (a, b) = (Tensor::scalar(a), Tensor::scalar(b));
        let d = disc_loss(&a, &b).unwrap().item();
        let g = gen_adv_loss(&b).unwrap().item();
        prop_assert!(d >= 0.0 && d.is_finite());
        prop_assert!(g >= 0.0 && g.is_finite());
    }
}
