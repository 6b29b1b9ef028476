//! Global and part-level cross-granularity fusion on random feature maps,
//! with the averaging and division identities checked on the way.

use ndarray::{Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xgait::fusion::{
    concat_strips, learnable_division, split_silhouette_strips, CaGate, DivisionMode, GateScope, Gcm, Pcm,
};

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // Two sequences of 3 frames, 16 channels, 16x11 maps.
    let dims = (6, 16, 16, 11);
    let fs = Array4::from_shape_fn(dims, |_| rng.random_range(0.0..1.0));
    let fp = Array4::from_shape_fn(dims, |_| rng.random_range(0.0..1.0));
    let lengths = [3, 3];

    let mut gcm = Gcm {
        ca: CaGate::new(16, 4, &mut rng)?,
        scope: GateScope::Frame,
    };
    let (fga, _) = gcm.forward(&fs, &fp, &lengths, false)?;
    println!("GCM output {:?}, mean {:.4}", fga.dim(), fga.mean().unwrap_or(0.0));
    gcm.ca.zero_second_layer();
    let (avg, _) = gcm.forward(&fs, &fp, &lengths, false)?;
    println!("zeroed second layer gives the plain average: {}", avg == (&fs + &fp) / 2.0);

    let masks: [Array3<f64>; 3] =
        std::array::from_fn(|_| Array3::from_shape_fn((6, 16, 11), |_| f64::from(rng.random_bool(0.3))));
    println!("gamma 0.5 ignores the mask: {}", learnable_division(&fp, &masks[0], 0.5)? == &fp * 0.5);

    let pcm = Pcm::new(16, 4, DivisionMode::Learnable, 1.0, GateScope::Frame, &mut rng)?;
    let (fpa, _) = pcm.forward(&fs, &fp, &masks, &lengths, false)?;
    println!("PCM output {:?}, gamma {:?}", fpa.dim(), pcm.gamma.value);

    let strips = split_silhouette_strips(&fs)?;
    let heights: Vec<usize> = strips.iter().map(|s| s.dim().2).collect();
    println!("strip heights {heights:?}, round trip exact: {}", concat_strips(&strips) == fs);
    Ok(())
}
