//! Build the UV atlas and its part segmentation; save the segmentation as a palette PNG.
//!
//! `cargo run --example uv_atlas -- [out.png]`

use bodyfuse::body_model::{BodyModel, ModelConfig, LSP_NAMES};
use bodyfuse::io::{part_labels, write_indexed_png};
use bodyfuse::uv_atlas::{FlipMap, PartSegmentation, UvAtlas};

fn main() -> bodyfuse::Result<()> {
    let out = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("part_segmentation.png"));
    let model = BodyModel::build(&ModelConfig::default())?;
    let atlas = UvAtlas::default_for(&model)?;
    let seg = PartSegmentation::build(&model, &atlas)?;
    let flip = FlipMap::build(&atlas);

    let (h, w) = atlas.shape();
    println!("{h}x{w} atlas, {} islands, {:.1}% of texels inside", atlas.islands.len(), 100.0 * atlas.inside_fraction());
    for (name, count) in LSP_NAMES.iter().zip(seg.part_counts()) {
        println!("{name:>16}  {count:5} texels");
    }
    let mirrored = (0..h).flat_map(|r| (0..w).map(move |c| (r, c))).filter(|&(r, c)| flip.get(r, c).is_some()).count();
    println!("{mirrored} texels have a mirror partner");
    write_indexed_png(&part_labels(&seg.assign), &out)?;
    println!("wrote {}", out.display());
    Ok(())
}
