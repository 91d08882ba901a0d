use std::collections::BTreeMap;

use fuseformer::gradcheck::project;
use fuseformer::layers::Params;
use fuseformer::model::{ClipTensor, Discriminator, Generator, ModelConfig, Variant};
use fuseformer::{no_grad, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_clip(t: usize, h: usize, w: usize, seed: u64) -> ClipTensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames: Vec<f64> = (0..t * h * w * 3).map(|_| rng.gen()).collect();
    let masks: Vec<f64> = (0..t * h * w)
        .map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 })
        .collect();
    ClipTensor::new(
        Tensor::from_vec(&[t, h, w, 3], frames).unwrap(),
        Tensor::from_vec(&[t, h, w, 1], masks).unwrap(),
    )
    .unwrap()
}

fn shapes<M: Params<f64>>(m: &M) -> BTreeMap<String, Vec<usize>> {
    m.named_params()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect()
}

#[test]
fn output_shape_and_range() {
    for v in Variant::ALL {
        let cfg = ModelConfig::micro(v);
        let g = Generator::<f64>::new(&cfg).unwrap();
        let clip = random_clip(3, 16, 16, 1);
        let feat = g.encode(&clip).unwrap();
        assert_eq!(feat.shape(), [3, 4, 4, cfg.channels]);
        let z = g.tokenize(&feat).unwrap();
        assert_eq!(z.tokens.shape(), [3 * cfg.tokens_per_frame().unwrap(), cfg.d]);
        assert_eq!(g.detokenize(&z).unwrap().shape(), feat.shape());
        let out = g.forward(&clip).unwrap();
        assert_eq!(out.shape(), [3, 16, 16, 3]);
        assert!(out.to_vec().iter().all(|&x| (0.0..=1.0).contains(&x)), "{v}");
    }
}

#[test]
fn every_layer_decodes_to_frames_and_the_last_is_the_output() {
    let mut cfg = ModelConfig::micro(Variant::Vif);
    cfg.depth = 3;
    let g = Generator::<f64>::new(&cfg).unwrap();
    let clip = random_clip(2, 16, 16, 2);
    let layers = g.forward_layers(&clip).unwrap();
    assert_eq!(layers.len(), 3);
    for z in &layers {
        let frames = g.decode_intermediate(z).unwrap();
        assert_eq!(frames.shape(), [2, 16, 16, 3]);
        assert!(frames.to_vec().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }
    let last = g.decode_intermediate(&layers[2]).unwrap().to_vec();
    assert_eq!(last, g.forward(&clip).unwrap().to_vec());
}

#[test]
fn zero_input_encodes_to_zero() {
    let g = Generator::<f64>::new(&ModelConfig::micro(Variant::Vif)).unwrap();
    let clip = ClipTensor::new(Tensor::zeros(&[2, 16, 16, 3]), Tensor::zeros(&[2, 16, 16, 1])).unwrap();
    assert!(g.encode(&clip).unwrap().to_vec().iter().all(|&v| v == 0.0));
}

#[test]
fn hard_split_tiles_the_feature_map() {
    let cfg = ModelConfig {
        height: 24,
        width: 24,
        k: 3,
        s: 3,
        p: 0,
        ..ModelConfig::micro(Variant::VibT)
    };
    assert_eq!(cfg.tokens_per_frame().unwrap(), 4);
    let g = Generator::<f64>::new(&cfg).unwrap();
    let z = g.tokenize(&g.encode(&random_clip(5, 24, 24, 3)).unwrap()).unwrap();
    assert_eq!(z.tokens.shape()[0], 20);
}

#[test]
fn identity_maps_round_trip_through_hard_tokens() {
    // k²c = 2·2·8 = d, so embed and unembed can both be identities.
    let cfg = ModelConfig {
        d: 32,
        ..ModelConfig::micro(Variant::VibT)
    };
    let g = Generator::<f64>::new(&cfg).unwrap();
    let eye = |w: &Tensor<f64>| {
        w.update_data(|d| {
            d.fill(0.0);
            (0..32).for_each(|i| d[i * 32 + i] = 1.0);
        })
    };
    eye(&g.embed.weight);
    eye(&g.unembed.weight);
    let feat = Tensor::randn(&[2, 4, 4, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(4));
    let back = g.detokenize(&g.tokenize(&feat).unwrap()).unwrap();
    assert_eq!(back.to_vec(), feat.to_vec());
}

#[test]
fn variants_differ_only_in_geometry_and_feed_forward() {
    let t = shapes(&Generator::<f64>::new(&ModelConfig::micro(Variant::VibT)).unwrap());
    let s = shapes(&Generator::<f64>::new(&ModelConfig::micro(Variant::VibS)).unwrap());
    let f = shapes(&Generator::<f64>::new(&ModelConfig::micro(Variant::Vif)).unwrap());
    assert!(t.keys().eq(s.keys()) && s.keys().eq(f.keys()));
    for name in t.keys() {
        let tokens = name.starts_with("embed") || name.starts_with("unembed");
        let ffn = name.contains(".ffn.");
        if !tokens {
            assert_eq!(t[name], s[name], "{name}");
        }
        if !ffn {
            assert_eq!(s[name], f[name], "{name}");
        }
        if !tokens && !ffn {
            assert_eq!(t[name], f[name], "{name}");
        }
    }
}

#[test]
fn fusion_never_adds_parameters() {
    for make in [ModelConfig::micro, ModelConfig::toy] {
        let s = Generator::<f32>::new(&make(Variant::VibS)).unwrap().param_count();
        let f = Generator::<f32>::new(&make(Variant::Vif)).unwrap().param_count();
        assert!(f <= s, "{f} > {s}");
    }
    let s = Generator::<f32>::new(&ModelConfig::full(Variant::VibS)).unwrap();
    let f = Generator::<f32>::new(&ModelConfig::full(Variant::Vif)).unwrap();
    // Eight blocks, each 2048 → 1960 hidden units.
    let per_block = (2 * 512 * 2048 + 2048 + 512) - (2 * 512 * 1960 + 1960 + 512);
    assert_eq!(s.param_count() - f.param_count(), 8 * per_block);
}

#[test]
fn known_pixels_pass_through_bit_exactly() {
    for v in [Variant::VibT, Variant::Vif] {
        let g = Generator::<f64>::new(&ModelConfig::micro(v)).unwrap();
        let clip = random_clip(2, 16, 16, 5);
        let raw = g.forward(&clip).unwrap().to_vec();
        let out = g.inpaint(&clip).unwrap().to_vec();
        let (frames, masks) = (clip.frames.to_vec(), clip.masks.to_vec());
        for (i, &m) in masks.iter().enumerate() {
            for c in 0..3 {
                let j = i * 3 + c;
                let want = if m == 1.0 { raw[j] } else { frames[j] };
                assert_eq!(out[j].to_bits(), want.to_bits());
            }
        }
    }
}

#[test]
fn every_parameter_receives_gradient() {
    for v in Variant::ALL {
        let mut cfg = ModelConfig::micro(v);
        cfg.pos_embed = true;
        let g = Generator::<f64>::new(&cfg).unwrap();
        let clip = random_clip(2, 16, 16, 6);
        project(&g.forward(&clip).unwrap(), 7).unwrap().backward().unwrap();
        for (name, p) in g.named_params() {
            let grad = p.grad().unwrap_or_default();
            assert!(grad.iter().any(|&x| x != 0.0), "{v}: {name} is dead");
        }
    }
    let d = Discriminator::<f64>::new(&ModelConfig::micro(Variant::Vif));
    d.forward(&random_clip(3, 16, 16, 8).frames)
        .unwrap()
        .backward()
        .unwrap();
    for (name, p) in d.named_params() {
        assert!(p.grad().unwrap_or_default().iter().any(|&x| x != 0.0), "{name} is dead");
    }
}

#[test]
fn discriminator_scores_are_probabilities() {
    let cfg = ModelConfig::micro(Variant::Vif);
    let d = Discriminator::<f64>::new(&cfg);
    for seed in 0..3 {
        let p = d.forward(&random_clip(3, 16, 16, seed).frames).unwrap().item();
        assert!(p > 0.0 && p < 1.0);
    }
    for (_, p) in d.named_params() {
        p.update_data(|x| x.fill(0.0));
    }
    assert_eq!(d.forward(&random_clip(3, 16, 16, 9).frames).unwrap().item(), 0.5);
}

#[test]
fn initialisation_follows_the_seed() {
    let clip = random_clip(2, 16, 16, 10);
    let run = |seed| {
        let cfg = ModelConfig {
            seed,
            ..ModelConfig::micro(Variant::Vif)
        };
        no_grad(|| Generator::<f64>::new(&cfg).unwrap().forward(&clip).unwrap().to_vec())
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
}

#[test]
fn one_sided_variants_keep_the_soft_grid() {
    let cfg = ModelConfig::full(Variant::VibSSsOnly);
    let split = cfg.split_geometry().unwrap();
    let comp = cfg.composite_geometry().unwrap();
    assert_eq!((split.k, split.s, split.p), (7, 3, 3));
    assert_eq!((comp.k, comp.s, comp.p), (3, 3, 1));
    assert_eq!(split.grid(), comp.grid());
    let cfg = ModelConfig::full(Variant::VibSScOnly);
    let (split, comp) = (cfg.split_geometry().unwrap(), cfg.composite_geometry().unwrap());
    assert_eq!((split.k, split.s), (3, 3));
    assert_eq!((comp.k, comp.s), (7, 3));
    assert_eq!(split.grid(), comp.grid());

    let odd = ModelConfig {
        k: 6,
        ..ModelConfig::full(Variant::VibSSsOnly)
    };
    assert!(odd.validate().is_err());
}

#[test]
fn invalid_configurations_are_rejected() {
    let soft_t = ModelConfig {
        k: 3,
        s: 2,
        p: 1,
        ..ModelConfig::micro(Variant::VibT)
    };
    assert!(Generator::<f64>::new(&soft_t).is_err());
    let hard_s = ModelConfig {
        k: 2,
        s: 2,
        p: 0,
        ..ModelConfig::micro(Variant::VibS)
    };
    assert!(Generator::<f64>::new(&hard_s).is_err());
    let bad_extent = ModelConfig {
        height: 18,
        ..ModelConfig::micro(Variant::Vif)
    };
    assert!(bad_extent.validate().is_err());
    let bad_heads = ModelConfig {
        heads: 3,
        ..ModelConfig::micro(Variant::Vif)
    };
    assert!(bad_heads.validate().is_err());
}
