//! Bundled toy checkpoint and golden forward pass.
//!
//! Regenerate with
//! `cargo test -p animate-core --test fixtures -- --ignored regenerate`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;

use animate_core::container::{read_tensor, write_tensor, DType, RawTensor};
use animate_core::data::generate_dataset;
use animate_core::nn::{load_checkpoint, save_checkpoint, Conditioning, DenoiserModel};
use animate_core::train::train;
use animate_core::{MotionMask, Resolution, Rng, TrainConfig, VideoTensor};

/// Dataset used for the bundled checkpoint and the acceptance runs.
pub const TRAIN_COUNT: usize = 256;
pub const TRAIN_SEED: u64 = 1;

fn dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn golden_input() -> (VideoTensor, MotionMask, usize, Conditioning) {
    let z = Rng::new(2024).gaussian_like([9, 1, 16, 16]);
    let mask = MotionMask::from_fn(16, 16, Resolution::Latent, |y, x| (4..12).contains(&y) && (2..9).contains(&x));
    (z, mask, 500, Conditioning { value: 0.01, class_id: 3 })
}

fn golden_output(model: &DenoiserModel) -> VideoTensor {
    let (z, mask, t, cond) = golden_input();
    model.forward(&z, &mask, t, &cond).unwrap()
}

#[test]
#[ignore = "retrains the bundled checkpoint (about two minutes)"]
fn regenerate() {
    let data = generate_dataset(TRAIN_COUNT, 32, 24, &Rng::new(TRAIN_SEED)).unwrap();
    let outcome = train(&TrainConfig::default(), &data, &mut |_, _| {}).unwrap();
    std::fs::create_dir_all(dir()).unwrap();
    save_checkpoint(dir().join("toy.ckpt"), &outcome.model).unwrap();
    let out = golden_output(&outcome.model);
    let mut w = BufWriter::new(File::create(dir().join("golden_forward.aav")).unwrap());
    write_tensor(&mut w, &RawTensor::from(&out), DType::F64).unwrap();
    std::fs::write(dir().join("golden_kernel.txt"), kernel_class()).unwrap();
}

/// The matrix-kernel family the BLAS backend dispatches to on this CPU.
/// Results are bit-reproducible only within one family.
fn kernel_class() -> String {
    #[cfg(target_arch = "x86_64")]
    {
        if is_x86_feature_detected!("avx512f") {
            return "x86_64-avx512".into();
        }
        if is_x86_feature_detected!("fma") && is_x86_feature_detected!("avx2") {
            return "x86_64-fma-avx2".into();
        }
        if is_x86_feature_detected!("avx") {
            return "x86_64-avx".into();
        }
    }
    std::env::consts::ARCH.to_string()
}

#[test]
fn bundled_checkpoint_replays_golden_forward() {
    let model = load_checkpoint(dir().join("toy.ckpt")).unwrap();
    assert_eq!(model.config(), &TrainConfig::default().model);
    let raw = read_tensor(&mut BufReader::new(File::open(dir().join("golden_forward.aav")).unwrap())).unwrap();
    let expected = VideoTensor::try_from(raw).unwrap();
    let got = golden_output(&model);
    let recorded = std::fs::read_to_string(dir().join("golden_kernel.txt")).unwrap();
    if recorded.trim() == kernel_class() {
        assert_eq!(got, expected, "bit-identical replay");
    } else {
        // A different kernel family rounds differently in the last bits.
        let scale = expected.data().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        assert!(got.max_abs_diff(&expected).unwrap() <= 1e-9 * scale);
    }
}
