//! Region masks, cross-modality intersection and mask downsampling on one
//! rendered frame.

use xgait::representations::{downsample_mask, intersect, region_masks};
use xgait::synthgait::{render_sequence, sample_identity, RenderSpec};

fn main() -> anyhow::Result<()> {
    let id = sample_identity(3);
    let spec = RenderSpec {
        n_frames: 8,
        noise: 0.4,
        rng_seed: 9,
        ..Default::default()
    };
    let (sils, pars) = render_sequence(&id, &spec)?;
    let (sil, par) = (&sils[0], &pars[0]);
    println!("silhouette foreground: {}", sil.foreground_count());
    println!("parsing support:       {}", par.support().foreground_count());

    let (sil_star, par_star) = intersect(sil, par)?;
    println!("common support:        {}", sil_star.foreground_count());
    assert_eq!(sil_star.foreground_count(), par_star.support().foreground_count());

    let masks = region_masks(&par_star);
    for (name, m) in ["upper", "middle", "lower"].iter().zip(masks.as_array()) {
        let small = downsample_mask(m, (16, 11))?;
        println!("{name:6} {:5} px -> {:3} cells at 16x11", m.iter().filter(|&&v| v != 0).count(), small.iter().filter(|&&v| v != 0).count());
    }
    Ok(())
}
