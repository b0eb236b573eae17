use animate_core::strength::strength;
use animate_core::{Rng, VideoTensor};
use proptest::prelude::*;

fn video(seed: u64, n: usize) -> VideoTensor {
    Rng::new(seed).gaussian_like([n, 1, 5, 7])
}

#[test]
fn static_video_has_zero_strength() {
    for seed in 0..10 {
        let frame = video(seed, 1);
        let still = frame.repeat_frame(6).unwrap();
        assert_eq!(strength(&still).unwrap().0, 0.0);
    }
}

#[test]
fn hand_examples() {
    // Frames 0, 1, 3 over one position: (1 + 2) / 2.
    let v = VideoTensor::from_vec([3, 1, 1, 1], vec![0.0, 1.0, 3.0]).unwrap();
    assert_eq!(strength(&v).unwrap().0, 1.5);
    // Two positions, one moves by 4.
    let v = VideoTensor::from_vec([2, 1, 1, 2], vec![0.0, 0.0, 4.0, 0.0]).unwrap();
    assert_eq!(strength(&v).unwrap().0, 2.0);
}

proptest! {
    #[test]
    fn scales_with_absolute_factor(seed in any::<u64>(), c in -10.0f64..10.0, n in 2usize..9) {
        let v = video(seed, n);
        let s = strength(&v).unwrap().0;
        let scaled = strength(&v.map(|x| c * x)).unwrap().0;
        prop_assert!((scaled - c.abs() * s).abs() <= 1e-6 * s.max(1.0));
    }

    #[test]
    fn invariant_under_reversal_and_offset(seed in any::<u64>(), k in -5.0f64..5.0, n in 2usize..9) {
        let v = video(seed, n);
        let s = strength(&v).unwrap().0;
        let frames: Vec<VideoTensor> = (0..n).rev().map(|f| v.frame_tensor(f)).collect();
        let mut rev = frames[0].clone();
        for f in &frames[1..] {
            rev = rev.concat_frames(f).unwrap();
        }
        prop_assert!((strength(&rev).unwrap().0 - s).abs() <= 1e-12 * s.max(1.0));
        prop_assert!((strength(&v.map(|x| x + k)).unwrap().0 - s).abs() <= 1e-9 * s.max(1.0));
    }
}
