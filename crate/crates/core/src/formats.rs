//! On-disk formats.
//!
//! * FDEP depth: `"FDEP"`, u32 height, u32 width, then f32 meters row-major.
//! * FPRB probabilities: `"FPRB"`, u32 height, width, classes, then f32
//!   row-major `H × W × C`.
//! * FSEG checkpoint: `"FSEG"`, u32 version, u32 layer count, then per layer
//!   u32 in_ch, out_ch, kernel, dilation, f32 weights in
//!   `[out][in][ky][kx]` order, f32 biases.
//! * 8-bit PNG for images, label maps, masks and visualizations.
//!
//! All multi-byte values are little-endian.

use std::fs;
use std::io::{Cursor, Write};
use std::path::Path;

use image::{GrayImage, ImageFormat, Luma, Rgb};

use crate::error::{Error, Result};
use crate::net::{ConvLayer, ToySegNet, KERNEL};
use crate::tensor::{DepthMap, LabelMap, ProbVolume, RgbImage};

pub const FDEP_MAGIC: &[u8; 4] = b"FDEP";
pub const FPRB_MAGIC: &[u8; 4] = b"FPRB";
pub const FSEG_MAGIC: &[u8; 4] = b"FSEG";
pub const FSEG_VERSION: u32 = 1;

/// Little-endian reader over a byte slice with format-error reporting.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Self { bytes, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(format!("{}: truncated data", self.what))),
        }
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != magic {
            return Err(Error::format(format!(
                "{}: bad magic {:?}, expected {:?}",
                self.what,
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn dim(&mut self) -> Result<usize> {
        let v = self.u32()? as usize;
        if v == 0 {
            return Err(Error::format(format!("{}: zero dimension", self.what)));
        }
        Ok(v)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::format("size overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(format!(
                "{}: {} trailing bytes",
                self.what,
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn encode_fdep(d: &DepthMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + d.data.len() * 4);
    out.extend_from_slice(FDEP_MAGIC);
    put_u32(&mut out, d.height);
    put_u32(&mut out, d.width);
    put_f32s(&mut out, &d.data);
    out
}

pub fn decode_fdep(bytes: &[u8]) -> Result<DepthMap> {
    let mut r = Reader::new(bytes, "FDEP");
    r.magic(FDEP_MAGIC)?;
    let (h, w) = (r.dim()?, r.dim()?);
    let data = r.f32s(h * w)?;
    r.finish()?;
    DepthMap::new(h, w, data).map_err(|e| Error::format(format!("FDEP: {e}")))
}

pub fn encode_fprb(p: &ProbVolume) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + p.data.len() * 4);
    out.extend_from_slice(FPRB_MAGIC);
    put_u32(&mut out, p.height);
    put_u32(&mut out, p.width);
    put_u32(&mut out, p.classes);
    put_f32s(&mut out, &p.data);
    out
}

/// Values are kept as stored (no renormalization), so a decoded volume
/// re-encodes to the same bytes.
pub fn decode_fprb(bytes: &[u8]) -> Result<ProbVolume> {
    let mut r = Reader::new(bytes, "FPRB");
    r.magic(FPRB_MAGIC)?;
    let (h, w, c) = (r.dim()?, r.dim()?, r.dim()?);
    let data = r.f32s(h * w * c)?;
    r.finish()?;
    ProbVolume::new(h, w, c, data).map_err(|e| Error::format(format!("FPRB: {e}")))
}

/// Checkpoint bytes. Parameters are narrowed to f32.
pub fn encode_checkpoint(net: &ToySegNet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(FSEG_MAGIC);
    out.extend_from_slice(&FSEG_VERSION.to_le_bytes());
    put_u32(&mut out, net.layers.len());
    for l in &net.layers {
        put_u32(&mut out, l.in_ch);
        put_u32(&mut out, l.out_ch);
        put_u32(&mut out, KERNEL);
        put_u32(&mut out, l.dilation);
        let mut ordered = Vec::with_capacity(l.weights.len());
        for o in 0..l.out_ch {
            for i in 0..l.in_ch {
                for ky in 0..KERNEL {
                    for kx in 0..KERNEL {
                        ordered.push(l.weights[l.weight_index(o, i, ky, kx)]);
                    }
                }
            }
        }
        put_f32s(&mut out, &ordered);
        put_f32s(&mut out, &l.bias);
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ToySegNet> {
    let mut r = Reader::new(bytes, "FSEG");
    r.magic(FSEG_MAGIC)?;
    let version = r.u32()?;
    if version != FSEG_VERSION {
        return Err(Error::format(format!("FSEG: unsupported version {version}")));
    }
    let n = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let (in_ch, out_ch) = (r.dim()?, r.dim()?);
        let kernel = r.u32()? as usize;
        if kernel != KERNEL {
            return Err(Error::format(format!("FSEG: unsupported kernel size {kernel}")));
        }
        let dilation = r.dim()?;
        let mut layer = ConvLayer::zeros(in_ch, out_ch, dilation);
        let ordered = r.f32s(in_ch * out_ch * KERNEL * KERNEL)?;
        let mut it = ordered.into_iter();
        for o in 0..out_ch {
            for i in 0..in_ch {
                for ky in 0..KERNEL {
                    for kx in 0..KERNEL {
                        let idx = layer.weight_index(o, i, ky, kx);
                        layer.weights[idx] = it.next().unwrap();
                    }
                }
            }
        }
        layer.bias = r.f32s(out_ch)?;
        layers.push(layer);
    }
    r.finish()?;
    ToySegNet::from_layers(layers, 0).map_err(|e| Error::format(format!("FSEG: {e}")))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes a file, creating parent directories.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn read_fdep(path: &Path) -> Result<DepthMap> {
    decode_fdep(&read_bytes(path)?).map_err(|e| with_path(path, e))
}

pub fn read_fprb(path: &Path) -> Result<ProbVolume> {
    decode_fprb(&read_bytes(path)?).map_err(|e| with_path(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<ToySegNet> {
    decode_checkpoint(&read_bytes(path)?).map_err(|e| with_path(path, e))
}

pub fn write_checkpoint(path: &Path, net: &ToySegNet) -> Result<()> {
    write_bytes(path, &encode_checkpoint(net))
}

fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    }
}

/// 8-bit quantization used by every PNG writer.
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn png_bytes(img: image::DynamicImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| Error::format(format!("PNG encoding failed: {e}")))?;
    Ok(buf.into_inner())
}

pub fn encode_rgb_png(img: &RgbImage) -> Result<Vec<u8>> {
    let buf = image::RgbImage::from_fn(img.width as u32, img.height as u32, |x, y| {
        let [r, g, b] = img.pixel(y as usize, x as usize);
        Rgb([to_u8(r), to_u8(g), to_u8(b)])
    });
    png_bytes(buf.into())
}

pub fn encode_gray_png(height: usize, width: usize, data: &[u8]) -> Result<Vec<u8>> {
    let buf = GrayImage::from_fn(width as u32, height as u32, |x, y| {
        Luma([data[y as usize * width + x as usize]])
    });
    png_bytes(buf.into())
}

fn decode_png(path: &Path) -> Result<image::DynamicImage> {
    let bytes = read_bytes(path)?;
    image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))
}

pub fn read_rgb_png(path: &Path) -> Result<RgbImage> {
    let img = decode_png(path)?.to_rgb8();
    let data = img.pixels().flat_map(|p| p.0).map(|v| v as f64 / 255.0).collect();
    RgbImage::new(img.height() as usize, img.width() as usize, data)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))
}

pub fn read_gray_png(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = decode_png(path)?;
    if !matches!(img, image::DynamicImage::ImageLuma8(_)) {
        return Err(Error::format(format!("{}: expected 8-bit grayscale PNG", path.display())));
    }
    let g = img.to_luma8();
    Ok((g.height() as usize, g.width() as usize, g.into_raw()))
}

pub fn write_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    write_bytes(path, &encode_rgb_png(img)?)
}

pub fn write_label_png(path: &Path, labels: &LabelMap) -> Result<()> {
    write_bytes(path, &encode_gray_png(labels.height, labels.width, &labels.data)?)
}

pub fn read_label_png(path: &Path) -> Result<LabelMap> {
    let (h, w, data) = read_gray_png(path)?;
    LabelMap::new(h, w, data)
}

/// Lists regular files in `dir` with the given extension, sorted by name.
pub fn list_files(dir: &Path, extension: &str) -> Result<Vec<std::path::PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|x| x == extension) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Narrow to f32 so that the first encode is already lossless.
    fn f32_exact(v: f64) -> f64 {
        v as f32 as f64
    }

    #[test]
    fn fdep_layout() {
        let d = DepthMap::new(1, 2, vec![1.5, 1000.0]).unwrap();
        let bytes = encode_fdep(&d);
        assert_eq!(&bytes[..4], b"FDEP");
        assert_eq!(&bytes[4..12], &[1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &1.5f32.to_le_bytes());
        assert_eq!(decode_fdep(&bytes).unwrap(), d);
    }

    #[test]
    fn malformed_inputs_are_format_errors() {
        assert!(matches!(decode_fdep(b"FDEX\x01\0\0\0\x01\0\0\0\0\0\x80?"), Err(Error::Format(_))));
        assert!(matches!(decode_fdep(b"FDEP\x01\0\0\0"), Err(Error::Format(_))));
        let mut ok = encode_fdep(&DepthMap::uniform(2, 2, 3.0).unwrap());
        ok.push(0);
        assert!(matches!(decode_fdep(&ok), Err(Error::Format(_))));
        let zero_depth = encode_fdep(&DepthMap::uniform(1, 1, 1.0).unwrap());
        let mut bad = zero_depth.clone();
        bad[12..16].copy_from_slice(&0f32.to_le_bytes());
        assert!(matches!(decode_fdep(&bad), Err(Error::Format(_))));
        assert!(matches!(decode_checkpoint(b"FSEG\x02\0\0\0\0\0\0\0"), Err(Error::Format(_))));
        assert!(matches!(decode_fprb(b"FPRB"), Err(Error::Format(_))));
    }

    #[test]
    fn checkpoint_preserves_f32_parameters() {
        let mut net = ToySegNet::init(3, 5).unwrap();
        let narrowed: Vec<f64> = net.params().into_iter().map(f32_exact).collect();
        net.set_params(&narrowed).unwrap();
        let back = decode_checkpoint(&encode_checkpoint(&net)).unwrap();
        assert_eq!(back, net);
        assert_eq!(&encode_checkpoint(&net)[..8], b"FSEG\x01\0\0\0");
    }

    #[test]
    fn png_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::new(2, 2, (0..12).map(|i| i as f64 / 255.0).collect()).unwrap();
        let path = dir.path().join("a/b/img.png");
        write_rgb_png(&path, &img).unwrap();
        assert_eq!(read_rgb_png(&path).unwrap(), img);
        let labels = LabelMap::new(1, 3, vec![0, 4, 255]).unwrap();
        let lp = dir.path().join("l.png");
        write_label_png(&lp, &labels).unwrap();
        assert_eq!(read_label_png(&lp).unwrap(), labels);
        assert!(matches!(read_label_png(&path), Err(Error::Format(_))));
        assert!(matches!(read_rgb_png(&dir.path().join("missing.png")), Err(Error::Io { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn binary_formats_reserialize_identically(seed in any::<u64>(), h in 1usize..9, w in 1usize..9, c in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let depth = DepthMap::new(h, w, (0..h * w).map(|_| rng.random_range(0.1..2000.0)).collect()).unwrap();
            let bytes = encode_fdep(&depth);
            prop_assert_eq!(&encode_fdep(&decode_fdep(&bytes).unwrap()), &bytes);

            let logits: Vec<f64> = (0..h * w * c).map(|_| rng.random_range(-4.0..4.0)).collect();
            let p = ProbVolume::from_logits(h, w, c, &logits).unwrap();
            let bytes = encode_fprb(&p);
            prop_assert_eq!(&encode_fprb(&decode_fprb(&bytes).unwrap()), &bytes);

            let net = ToySegNet::init(seed, c).unwrap();
            let bytes = encode_checkpoint(&net);
            prop_assert_eq!(&encode_checkpoint(&decode_checkpoint(&bytes).unwrap()), &bytes);
        }
    }
}
