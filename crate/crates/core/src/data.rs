//! Toy and synthetic dataset generators, IDX ingestion and the LVDS format.

use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::tensor::Tensor;

const CURVE_STREAM: u64 = 0x0063_7572_7665_3164;
const SURFACE_STREAM: u64 = 0x0073_7572_6661_6365;
const CIRCLE_SEED_TAG: u64 = 0x0063_6972_636c_6573;

pub const LVDS_MAGIC: &[u8; 4] = b"LVDS";
pub const LVDS_VERSION: u16 = 1;

/// Samples on the leading axis, with optional ground-truth factors.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Tensor,
    /// `n×k` generating factors, row-aligned with `samples`.
    pub factors: Option<Tensor>,
    pub provenance: String,
}

impl Dataset {
    pub fn new(samples: Tensor, factors: Option<Tensor>, provenance: impl Into<String>) -> Result<Self> {
        let n = samples.shape().first().copied().unwrap_or(0);
        if n < 2 {
            return Err(Error::InvalidArgument(format!("dataset needs at least 2 samples, got {n}")));
        }
        if let Some(f) = &factors {
            if f.rank() != 2 || f.shape()[0] != n {
                return Err(Error::ShapeMismatch {
                    op: "dataset_factors",
                    shapes: vec![samples.shape().to_vec(), f.shape().to_vec()],
                });
            }
        }
        Ok(Self { samples, factors, provenance: provenance.into() })
    }

    pub fn len(&self) -> usize {
        self.samples.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-sample shape.
    pub fn sample_shape(&self) -> &[usize] {
        &self.samples.shape()[1..]
    }
}

fn check_n(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("n must be >= 2, got {n}")));
    }
    Ok(())
}

pub fn curve1d(x: f64) -> f64 {
    10.0 * x * (x - 0.4) * (x + 0.35)
}

pub fn surface2d(x: f64) -> f64 {
    10.0 * x * (x - 0.3) * (x + 0.3)
}

/// Points `(x, y)` on `y = 10x(x-0.4)(x+0.35)` with `x ~ U[-0.5, 0.5]`.
pub fn gen_curve1d(n: usize, seed: u64) -> Result<Dataset> {
    check_n(n)?;
    let mut r = CounterRng::new(seed, CURVE_STREAM);
    let xs: Vec<f64> = (0..n).map(|_| r.uniform(-0.5, 0.5)).collect();
    let data = xs.iter().flat_map(|&x| [x, curve1d(x)]).collect();
    Dataset::new(Tensor::new(vec![n, 2], data)?, Some(Tensor::new(vec![n, 1], xs)?), format!("curve1d(n={n},seed={seed})"))
}

/// Points `(x, y, z)` with `z = 10x(x-0.3)(x+0.3) + N(0, noise_sigma²)`.
pub fn gen_surface2d(n: usize, seed: u64, noise_sigma: f64) -> Result<Dataset> {
    check_n(n)?;
    if !(noise_sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise_sigma {noise_sigma} must be >= 0")));
    }
    let mut r = CounterRng::new(seed, SURFACE_STREAM);
    let mut data = Vec::with_capacity(3 * n);
    let mut factors = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let x = r.uniform(-0.5, 0.5);
        let y = r.uniform(-0.5, 0.5);
        let noise = r.normal();
        data.extend_from_slice(&[x, y, surface2d(x) + noise_sigma * noise]);
        factors.extend_from_slice(&[x, y]);
    }
    Dataset::new(
        Tensor::new(vec![n, 3], data)?,
        Some(Tensor::new(vec![n, 2], factors)?),
        format!("surface2d(n={n},seed={seed},noise={noise_sigma})"),
    )
}

/// The noiseless surface points for the factors of a [`gen_surface2d`] dataset.
pub fn surface2d_clean(factors: &Tensor) -> Result<Tensor> {
    if factors.rank() != 2 || factors.shape()[1] != 2 {
        return Err(Error::ShapeMismatch { op: "surface2d_clean", shapes: vec![factors.shape().to_vec()] });
    }
    let data = factors.data().chunks_exact(2).flat_map(|f| [f[0], f[1], surface2d(f[0])]).collect();
    Tensor::new(vec![factors.shape()[0], 3], data)
}

/// Ground-truth factors of one circle image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleFactors {
    /// Center offset as a fraction of the image extent, in `[-0.2, 0.2]`.
    pub tx: f64,
    pub ty: f64,
    /// Radius as a fraction of the half extent, in `[0.2, 0.5]`.
    pub scale: f64,
    /// Hue in turns, in `[0, 0.5]`.
    pub hue: f64,
    /// HSV value, in `[0.3, 1]`.
    pub value: f64,
}

impl CircleFactors {
    pub fn sample(seed: u64, index: usize) -> Self {
        let mut r = CounterRng::new(seed ^ CIRCLE_SEED_TAG, index as u64);
        Self {
            tx: r.uniform(-0.2, 0.2),
            ty: r.uniform(-0.2, 0.2),
            scale: r.uniform(0.2, 0.5),
            hue: r.uniform(0.0, 0.5),
            value: r.uniform(0.3, 1.0),
        }
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.tx, self.ty, self.scale, self.hue, self.value]
    }

    pub fn from_slice(f: &[f64]) -> Self {
        Self { tx: f[0], ty: f[1], scale: f[2], hue: f[3], value: f[4] }
    }
}

/// Hexagonal HSV to RGB.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}

/// Renders a `3×size×size` image: a filled, fully saturated circle on black.
pub fn render_circle(f: &CircleFactors, size: usize) -> Vec<f64> {
    let s = size as f64;
    let (cx, cy) = (s / 2.0 + f.tx * s, s / 2.0 + f.ty * s);
    let radius = f.scale * s / 2.0;
    let rgb = hsv_to_rgb(f.hue, 1.0, f.value);
    let mut img = vec![0.0; 3 * size * size];
    for row in 0..size {
        for col in 0..size {
            let dx = col as f64 + 0.5 - cx;
            let dy = row as f64 + 0.5 - cy;
            if dx * dx + dy * dy <= radius * radius {
                for (ch, v) in rgb.iter().enumerate() {
                    img[ch * size * size + row * size + col] = *v;
                }
            }
        }
    }
    img
}

/// Circle images `n×3×size×size` with 5 factors per sample.
pub fn gen_circles(n: usize, size: usize, seed: u64) -> Result<Dataset> {
    gen_circles_parallel(n, size, seed, 1)
}

/// [`gen_circles`] using up to `threads` worker threads; output does not
/// depend on the thread count.
pub fn gen_circles_parallel(n: usize, size: usize, seed: u64, threads: usize) -> Result<Dataset> {
    check_n(n)?;
    if size < 8 {
        return Err(Error::InvalidArgument(format!("size {size} must be >= 8")));
    }
    let per = 3 * size * size;
    let mut images = vec![0.0; n * per];
    let mut factors = vec![0.0; n * 5];
    let threads = threads.clamp(1, n);
    let rows_per = n.div_ceil(threads);
    std::thread::scope(|scope| {
        for (chunk, (imgs, facs)) in images.chunks_mut(rows_per * per).zip(factors.chunks_mut(rows_per * 5)).enumerate() {
            scope.spawn(move || {
                for (j, (img, fac)) in imgs.chunks_mut(per).zip(facs.chunks_mut(5)).enumerate() {
                    let f = CircleFactors::sample(seed, chunk * rows_per + j);
                    img.copy_from_slice(&render_circle(&f, size));
                    fac.copy_from_slice(&f.to_array());
                }
            });
        }
    });
    Dataset::new(
        Tensor::new(vec![n, 3, size, size], images)?,
        Some(Tensor::new(vec![n, 5], factors)?),
        format!("circles(n={n},size={size},seed={seed})"),
    )
}

/// Parses IDX bytes: u8 vectors (`0x801`) become `[n]`, u8 image stacks
/// (`0x803`) become `[n, 1, H, W]`, zero-padded to `pad_to` when given.
pub fn read_idx(bytes: &[u8], pad_to: Option<usize>) -> Result<Tensor> {
    if bytes.len() < 4 {
        return Err(Error::Format("truncated IDX header".into()));
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    let rank = match magic {
        0x0000_0801 => 1,
        0x0000_0803 => 3,
        _ => return Err(Error::Format(format!("bad IDX magic {magic:#010x}"))),
    };
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(Error::Format("truncated IDX header".into()));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize)
        .collect();
    let len = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::Format(format!("IDX extents {dims:?} overflow")))?;
    let payload = &bytes[header..];
    if payload.len() < len {
        return Err(Error::Format(format!("truncated IDX payload: {} of {len} bytes", payload.len())));
    }
    let payload = &payload[..len];
    if rank == 1 {
        return Tensor::new(dims, payload.iter().map(|&b| b as f64 / 255.0).collect());
    }
    let (n, h, w) = (dims[0], dims[1], dims[2]);
    let side = pad_to.unwrap_or(h.max(w));
    if pad_to.is_some() && (side < h || side < w) {
        return Err(Error::InvalidArgument(format!("cannot pad {h}×{w} to {side}")));
    }
    let (ph, pw) = if pad_to.is_some() { ((side - h) / 2, (side - w) / 2) } else { (0, 0) };
    let (oh, ow) = if pad_to.is_some() { (side, side) } else { (h, w) };
    let mut out = vec![0.0; n * oh * ow];
    for i in 0..n {
        for r in 0..h {
            for c in 0..w {
                out[i * oh * ow + (r + ph) * ow + c + pw] = payload[i * h * w + r * w + c] as f64 / 255.0;
            }
        }
    }
    Tensor::new(vec![n, 1, oh, ow], out)
}

/// Serializes a u8 payload as IDX with the given extents (rank 1 or 3).
pub fn write_idx(payload: &[u8], dims: &[usize]) -> Result<Vec<u8>> {
    let magic: u32 = match dims.len() {
        1 => 0x801,
        3 => 0x803,
        r => return Err(Error::InvalidArgument(format!("IDX rank {r} unsupported"))),
    };
    if dims.iter().product::<usize>() != payload.len() {
        return Err(Error::ShapeMismatch { op: "write_idx", shapes: vec![dims.to_vec(), vec![payload.len()]] });
    }
    let mut b = magic.to_be_bytes().to_vec();
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::InvalidArgument(format!("extent {d} exceeds u32")))?;
        b.extend_from_slice(&d.to_be_bytes());
    }
    b.extend_from_slice(payload);
    Ok(b)
}

pub fn load_idx(path: impl AsRef<Path>, pad_to: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let samples = read_idx(&std::fs::read(path)?, pad_to)?;
    Dataset::new(samples, None, format!("idx({})", path.display()))
}

/// LVDS: magic, u16 version, u32 n, u32 rank, u64 extents, f64 values, u8
/// factor flag, then `u32 k` and `n·k` f64 factors when the flag is 1.
pub fn dataset_to_bytes(ds: &Dataset) -> Vec<u8> {
    let s = &ds.samples;
    let mut b = LVDS_MAGIC.to_vec();
    b.extend_from_slice(&LVDS_VERSION.to_le_bytes());
    b.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    b.extend_from_slice(&(s.rank() as u32).to_le_bytes());
    for &e in s.shape() {
        b.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for v in s.data() {
        b.extend_from_slice(&v.to_le_bytes());
    }
    match &ds.factors {
        Some(f) => {
            b.push(1);
            b.extend_from_slice(&(f.shape()[1] as u32).to_le_bytes());
            for v in f.data() {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        None => b.push(0),
    }
    b
}

pub fn dataset_from_bytes(b: &[u8], provenance: &str) -> Result<Dataset> {
    let mut at = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let end = at.checked_add(n).filter(|e| *e <= b.len()).ok_or_else(|| Error::Format("truncated LVDS file".into()))?;
        let s = &b[at..end];
        at = end;
        Ok(s)
    };
    if take(4)? != LVDS_MAGIC {
        return Err(Error::Format("not an LVDS file (bad magic)".into()));
    }
    let version = u16::from_le_bytes(take(2)?.try_into().unwrap());
    if version != LVDS_VERSION {
        return Err(Error::Format(format!("unsupported LVDS version {version}")));
    }
    let n = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let rank = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut shape = Vec::with_capacity(rank.min(16));
    for _ in 0..rank {
        shape.push(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize);
    }
    if shape.first() != Some(&n) {
        return Err(Error::Format(format!("LVDS n {n} disagrees with extents {shape:?}")));
    }
    let len = shape
        .iter()
        .try_fold(1usize, |a, &e| a.checked_mul(e))
        .and_then(|l| l.checked_mul(8))
        .ok_or_else(|| Error::Format("LVDS extents overflow".into()))?;
    let floats = |raw: &[u8]| raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect::<Vec<_>>();
    let samples = Tensor::new(shape, floats(take(len)?))?;
    let factors = match take(1)?[0] {
        0 => None,
        1 => {
            let k = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let len = n.checked_mul(k).and_then(|l| l.checked_mul(8)).ok_or_else(|| Error::Format("LVDS factor overflow".into()))?;
            Some(Tensor::new(vec![n, k], floats(take(len)?))?)
        }
        f => return Err(Error::Format(format!("bad LVDS factor flag {f}"))),
    };
    if at != b.len() {
        return Err(Error::Format(format!("{} trailing bytes in LVDS file", b.len() - at)));
    }
    Dataset::new(samples, factors, provenance)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    Ok(std::fs::write(path, dataset_to_bytes(ds))?)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    dataset_from_bytes(&std::fs::read(path)?, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_examples() {
        assert_eq!(curve1d(0.0), 0.0);
        assert!(curve1d(0.4).abs() < 1e-15);
        let ds = gen_curve1d(50, 1).unwrap();
        assert_eq!(ds.samples.shape(), [50, 2]);
        for r in 0..50 {
            let p = ds.samples.row(r);
            assert!((p[1] - 10.0 * p[0] * (p[0] - 0.4) * (p[0] + 0.35)).abs() < 1e-12);
            assert!((-0.5..=0.5).contains(&p[0]));
        }
        assert_eq!(gen_curve1d(50, 1).unwrap(), ds);
        assert!(gen_curve1d(1, 0).is_err());
    }

    #[test]
    fn surface_examples() {
        assert!(surface2d(0.3).abs() < 1e-15);
        let ds = gen_surface2d(100, 2, 0.0).unwrap();
        let clean = surface2d_clean(ds.factors.as_ref().unwrap()).unwrap();
        assert_eq!(clean, ds.samples);
        let ds = gen_surface2d(10_000, 2, 0.1).unwrap();
        let res: Vec<f64> = (0..10_000).map(|i| ds.samples.row(i)[2] - surface2d(ds.samples.row(i)[0])).collect();
        let mean = res.iter().sum::<f64>() / res.len() as f64;
        let sd = (res.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (res.len() - 1) as f64).sqrt();
        assert!((sd - 0.1).abs() < 0.015, "{sd}");
        assert!(gen_surface2d(10, 0, -1.0).is_err());
    }

    #[test]
    fn centered_red_circle() {
        let f = CircleFactors { tx: 0.0, ty: 0.0, scale: 0.5, hue: 0.0, value: 1.0 };
        let size = 16;
        let img = render_circle(&f, size);
        let px = |ch: usize, r: usize, c: usize| img[ch * size * size + r * size + c];
        assert_eq!((px(0, 8, 8), px(1, 8, 8), px(2, 8, 8)), (1.0, 0.0, 0.0));
        for (r, c) in [(0, 0), (0, 15), (15, 0), (15, 15)] {
            assert!((0..3).all(|ch| px(ch, r, c) == 0.0));
        }
    }

    #[test]
    fn value_scales_channels() {
        let base = CircleFactors { tx: 0.05, ty: -0.1, scale: 0.4, hue: 0.27, value: 1.0 };
        let dim = CircleFactors { value: 0.4, ..base };
        let a = render_circle(&base, 12);
        let b = render_circle(&dim, 12);
        for (x, y) in a.iter().zip(&b) {
            assert!((y - 0.4 * x).abs() < 1e-15);
        }
    }

    #[test]
    fn hsv_primaries() {
        assert_eq!(hsv_to_rgb(0.0, 1.0, 1.0), [1.0, 0.0, 0.0]);
        assert_eq!(hsv_to_rgb(1.0 / 3.0, 1.0, 1.0), [0.0, 1.0, 0.0]);
        let [r, g, b] = hsv_to_rgb(0.5, 1.0, 0.5);
        assert!(r.abs() < 1e-15 && (g - 0.5).abs() < 1e-15 && (b - 0.5).abs() < 1e-15);
    }

    #[test]
    fn circles_are_consistent_and_thread_independent() {
        let a = gen_circles(37, 16, 9).unwrap();
        let b = gen_circles_parallel(37, 16, 9, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples.shape(), [37, 3, 16, 16]);
        let f = a.factors.as_ref().unwrap();
        for i in 0..37 {
            let fac = CircleFactors::from_slice(f.row(i));
            assert_eq!(render_circle(&fac, 16), a.samples.row(i));
            assert!((-0.2..=0.2).contains(&fac.tx) && (0.2..=0.5).contains(&fac.scale));
            assert!((0.0..=0.5).contains(&fac.hue) && (0.3..=1.0).contains(&fac.value));
        }
        assert!(a.samples.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(gen_circles(4, 4, 0).is_err());
    }

    #[test]
    fn idx_examples() {
        let mut payload = vec![0u8; 2 * 28 * 28];
        payload[0] = 255;
        payload[28 * 28 + 5] = 51;
        let bytes = write_idx(&payload, &[2, 28, 28]).unwrap();
        assert_eq!(&bytes[..4], [0, 0, 8, 3]);
        let t = read_idx(&bytes, None).unwrap();
        assert_eq!(t.shape(), [2, 1, 28, 28]);
        assert_eq!(t.data()[0], 1.0);
        let back: Vec<u8> = t.data().iter().map(|v| (v * 255.0).round() as u8).collect();
        assert_eq!(back, payload);

        let p = read_idx(&bytes, Some(32)).unwrap();
        assert_eq!(p.shape(), [2, 1, 32, 32]);
        assert_eq!(p.data()[2 * 32 + 2], 1.0);
        assert_eq!(p.data()[0], 0.0);

        let labels = read_idx(&write_idx(&[1, 2, 255], &[3]).unwrap(), None).unwrap();
        assert_eq!(labels.shape(), [3]);

        assert!(matches!(read_idx(&[0, 0, 8, 9, 0, 0, 0, 1], None), Err(Error::Format(_))));
        assert!(matches!(read_idx(&bytes[..bytes.len() - 1], None), Err(Error::Format(_))));
        let huge = [0, 0, 8, 3, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255];
        assert!(read_idx(&huge, None).is_err());
    }

    #[test]
    fn lvds_round_trip() {
        for ds in [gen_circles(5, 8, 1).unwrap(), gen_curve1d(6, 0).unwrap()] {
            let b = dataset_to_bytes(&ds);
            let back = dataset_from_bytes(&b, "x").unwrap();
            assert_eq!(back.samples, ds.samples);
            assert_eq!(back.factors, ds.factors);
            assert_eq!(dataset_to_bytes(&back), b);
            assert!(dataset_from_bytes(&b[..b.len() - 3], "x").is_err());
        }
        let plain = Dataset::new(Tensor::zeros(&[3, 2]), None, "p").unwrap();
        let b = dataset_to_bytes(&plain);
        assert_eq!(dataset_from_bytes(&b, "p").unwrap(), plain);
        let mut bad = b.clone();
        bad[1] = b'X';
        assert!(dataset_from_bytes(&bad, "p").is_err());
    }
}
