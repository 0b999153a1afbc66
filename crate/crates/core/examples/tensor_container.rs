//! Encode a tensor in the checksummed binary container and show how corruption is reported.

use bodyfuse::io::{Tensor, TensorData};

fn main() -> bodyfuse::Result<()> {
    let t = Tensor::new(vec![2, 3], TensorData::F32(vec![0.5, -1.0, 2.0, 3.25, 0.0, 1e-3]))?;
    let bytes = t.encode();
    println!(
        "{} bytes: magic {:?}, dtype {}, rank {}",
        bytes.len(),
        std::str::from_utf8(&bytes[..4]).unwrap(),
        bytes[4],
        bytes[5]
    );
    assert_eq!(Tensor::decode(&bytes)?, t);

    let mut flipped = bytes.clone();
    flipped[30] ^= 0x10;
    println!("bit flip:  {}", Tensor::decode(&flipped).unwrap_err());
    println!("truncated: {}", Tensor::decode(&bytes[..bytes.len() - 6]).unwrap_err());

    let path = std::env::temp_dir().join("example.uvb");
    t.save(&path)?;
    println!("round trip through {}: {:?}", path.display(), Tensor::load(&path)?.dims);
    Ok(())
}
