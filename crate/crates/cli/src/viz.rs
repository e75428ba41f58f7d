use fogadapt::formats::to_u8;
use fogadapt::tensor::{LabelMap, RgbImage, ScalarMap, IGNORE};
use fogadapt::Result;

const PALETTE: [[u8; 3]; 5] = [
    [128, 64, 128],
    [70, 130, 180],
    [70, 70, 70],
    [0, 0, 142],
    [107, 142, 35],
];

fn label_color(l: u8) -> [u8; 3] {
    if l == IGNORE {
        return [0, 0, 0];
    }
    PALETTE.get(l as usize).copied().unwrap_or([255, 255, 255])
}

/// Entropy as an 8-bit gray level, `round(255·H)`.
pub fn entropy_gray(map: &ScalarMap) -> Vec<u8> {
    map.data().iter().map(|&h| to_u8(h)).collect()
}

/// `image | ground truth | prediction | entropy` side by side.
pub fn panel(img: &RgbImage, gt: &LabelMap, pred: &LabelMap, entropy: &ScalarMap) -> Result<RgbImage> {
    let (h, w) = (img.height(), img.width());
    let mut data = Vec::with_capacity(h * w * 12);
    for r in 0..h {
        for c in 0..w {
            data.extend(img.pixel(r, c));
        }
        for labels in [gt, pred] {
            for c in 0..w {
                data.extend(label_color(labels.get(r, c)).map(|v| v as f64 / 255.0));
            }
        }
        for c in 0..w {
            data.extend([entropy.get(r, c); 3]);
        }
    }
    RgbImage::new(h, 4 * w, data)
}
