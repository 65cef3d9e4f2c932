//! Writes a patch bag to the binary bag format and reads it back.

use cscl::data::{read_bag, write_bag, PatchBag, StainId};
use cscl::math::Matrix;

fn main() -> cscl::Result<()> {
    let embeddings = Matrix::from_vec(3, 4, (0..12).map(|i| i as f32 * 0.25).collect())?;
    let bag = PatchBag::new(
        "slide-7",
        StainId::KI67,
        vec![(0, 0), (0, 1), (1, 0)],
        embeddings,
    )?;

    let mut buf = Vec::new();
    let n = write_bag(&bag, &mut buf)?;
    let back = read_bag(buf.as_slice())?;
    println!("{n} bytes, round trip equal: {}", back == bag);
    println!("{} {} {:?}", back.slide_id, back.stain, back.coords);
    Ok(())
}
