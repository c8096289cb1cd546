//! Writes a grid of training samples (odd cells augmented) with marked
//! keypoints: `cargo run --release --example mosaic -- out.png`.

use cpm_core::synthdata::{DataConfig, Split};

fn main() {
    let out = std::env::args().nth(1).unwrap_or_else(|| "mosaic.png".into());
    let cfg = DataConfig::default();
    let (cols, rows, z) = (8usize, 4usize, 3usize);
    let (w, h) = (64 * cols * z, 64 * rows * z);
    let mut buf = vec![0u8; w * h];
    for i in 0..cols * rows {
        let s = cfg.sample(Split::Train, i);
        let s = if i % 2 == 1 { cfg.augmented(&s, 0, i) } else { s };
        let (ox, oy) = ((i % cols) * 64 * z, (i / cols) * 64 * z);
        for y in 0..64 * z {
            for x in 0..64 * z {
                let mut v = s.image.data()[(y / z) * 64 + x / z];
                for k in s.keypoints.points.iter().flatten() {
                    if (k[0] * z as f32 - x as f32).abs() < 1.0 && (k[1] * z as f32 - y as f32).abs() < 1.0 {
                        v = 0.0;
                    }
                }
                buf[(oy + y) * w + ox + x] = (v * 255.0) as u8;
            }
        }
    }
    let f = std::fs::File::create(&out).unwrap();
    let mut e = png::Encoder::new(f, w as u32, h as u32);
    e.set_color(png::ColorType::Grayscale);
    e.write_header().unwrap().write_image_data(&buf).unwrap();
}
