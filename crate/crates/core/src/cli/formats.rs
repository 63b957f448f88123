//! Bit-exact binary artifact formats.
//!
//! Two container formats share one envelope convention: a 4-byte ASCII
//! magic, a little-endian `u32` format version, a body, and a trailing
//! CRC-32 of every preceding byte. Checkpoints (`PNCK`) store named `f64`
//! tensors; dataset files (`FSDS`) store one split of a class dataset,
//! including stylized-variant blocks when present. Both round-trip
//! byte-for-byte, and any corruption of the magic, structure, or checksum
//! is reported as a format error.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::synthdata::{ClassDataset, ClassRecord, Split};
use crate::tensor::Tensor;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PNCK";
pub const DATASET_MAGIC: &[u8; 4] = b"FSDS";
pub const FORMAT_VERSION: u32 = 1;

/// IEEE CRC-32 (reflected polynomial 0xEDB88320), the variant whose check
/// value over the bytes "123456789" is 0xCBF43926.
#[derive(Debug, Clone, Copy)]
pub struct Crc32 {
    state: u32,
}

impl Crc32 {
    pub fn new() -> Self {
        Crc32 { state: !0 }
    }

    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.state ^= b as u32;
            for _ in 0..8 {
                let mask = (self.state & 1).wrapping_neg();
                self.state = (self.state >> 1) ^ (0xEDB8_8320 & mask);
            }
        }
    }

    pub fn finish(self) -> u32 {
        !self.state
    }
}

impl Default for Crc32 {
    fn default() -> Self {
        Self::new()
    }
}

pub fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = Crc32::new();
    crc.update(bytes);
    crc.finish()
}

/// Writer that folds every written byte into a running CRC.
struct Crc32Writer<W: Write> {
    inner: W,
    crc: Crc32,
}

impl<W: Write> Crc32Writer<W> {
    fn new(inner: W) -> Self {
        Crc32Writer {
            inner,
            crc: Crc32::new(),
        }
    }

    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.crc.update(bytes);
        self.inner.write_all(bytes)?;
        Ok(())
    }

    fn put_u16(&mut self, v: u16) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    fn put_u32(&mut self, v: u32) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    fn put_f64(&mut self, v: f64) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    /// Appends the accumulated CRC (not folded into itself) and flushes.
    fn seal(mut self) -> Result<()> {
        let crc = self.crc.finish();
        self.inner.write_all(&crc.to_le_bytes())?;
        self.inner.flush()?;
        Ok(())
    }
}

/// Reader that folds every consumed byte into a running CRC.
struct Crc32Reader<R: Read> {
    inner: R,
    crc: Crc32,
    what: &'static str,
}

impl<R: Read> Crc32Reader<R> {
    fn new(inner: R, what: &'static str) -> Self {
        Crc32Reader {
            inner,
            crc: Crc32::new(),
            what,
        }
    }

    fn take(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::Format(format!("{} is truncated", self.what))
            } else {
                Error::Io(e.to_string())
            }
        })?;
        self.crc.update(buf);
        Ok(())
    }

    fn take_u16(&mut self) -> Result<u16> {
        let mut b = [0u8; 2];
        self.take(&mut b)?;
        Ok(u16::from_le_bytes(b))
    }

    fn take_u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.take(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn take_f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.take(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    /// Reads the stored CRC, checks it against the accumulated one, and
    /// requires the file to end there.
    fn seal(mut self) -> Result<()> {
        let expected = self.crc.finish();
        let mut b = [0u8; 4];
        self.inner.read_exact(&mut b).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::Format(format!("{} is truncated", self.what))
            } else {
                Error::Io(e.to_string())
            }
        })?;
        let stored = u32::from_le_bytes(b);
        if stored != expected {
            return Err(Error::Format(format!(
                "{} fails its checksum: stored {stored:#010x}, computed {expected:#010x}",
                self.what
            )));
        }
        let mut extra = [0u8; 1];
        match self.inner.read(&mut extra) {
            Ok(0) => Ok(()),
            Ok(_) => Err(Error::Format(format!(
                "{} has trailing bytes after its checksum",
                self.what
            ))),
            Err(e) => Err(Error::Io(e.to_string())),
        }
    }
}

fn check_header<R: Read>(r: &mut Crc32Reader<R>, magic: &[u8; 4]) -> Result<()> {
    let mut found = [0u8; 4];
    r.take(&mut found)?;
    if &found != magic {
        return Err(Error::Format(format!(
            "{} has magic {found:?}, expected {magic:?}",
            r.what
        )));
    }
    let version = r.take_u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{} uses format version {version}, this build reads {FORMAT_VERSION}",
            r.what
        )));
    }
    Ok(())
}

/// Writes named tensors as a checkpoint file.
pub fn write_checkpoint(path: &Path, tensors: &[(String, &Tensor)]) -> Result<()> {
    let mut w = Crc32Writer::new(BufWriter::new(File::create(path)?));
    w.put(CHECKPOINT_MAGIC)?;
    w.put_u32(FORMAT_VERSION)?;
    w.put_u32(tensors.len() as u32)?;
    for (name, tensor) in tensors {
        if name.len() > u16::MAX as usize {
            return Err(Error::Format(format!(
                "tensor name of {} bytes does not fit the format",
                name.len()
            )));
        }
        w.put_u16(name.len() as u16)?;
        w.put(name.as_bytes())?;
        let shape = tensor.shape();
        if shape.len() > u8::MAX as usize {
            return Err(Error::Format(format!(
                "tensor rank {} does not fit the format",
                shape.len()
            )));
        }
        w.put(&[shape.len() as u8])?;
        for &d in shape {
            if d > u32::MAX as usize {
                return Err(Error::Format(format!("dimension {d} does not fit the format")));
            }
            w.put_u32(d as u32)?;
        }
        for &v in tensor.values() {
            w.put_f64(v)?;
        }
    }
    w.seal()
}

/// Reads a checkpoint file back into named tensors, verifying structure
/// and checksum.
pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut r = Crc32Reader::new(BufReader::new(File::open(path)?), "checkpoint file");
    check_header(&mut r, CHECKPOINT_MAGIC)?;
    let count = r.take_u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.take_u16()? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.take(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let mut rank = [0u8; 1];
        r.take(&mut rank)?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            shape.push(r.take_u32()? as usize);
        }
        let len: usize = shape.iter().product();
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            values.push(r.take_f64()?);
        }
        tensors.push((name, Tensor::new(shape, values)?));
    }
    r.seal()?;
    Ok(tensors)
}

fn split_tag(split: Split) -> u8 {
    match split {
        Split::Pretrain => 0,
        Split::Validation => 1,
        Split::Test => 2,
    }
}

fn split_from_tag(tag: u8) -> Result<Split> {
    match tag {
        0 => Ok(Split::Pretrain),
        1 => Ok(Split::Validation),
        2 => Ok(Split::Test),
        other => Err(Error::Format(format!("unknown split tag {other}"))),
    }
}

fn write_image<W: Write>(w: &mut Crc32Writer<W>, img: &Image) -> Result<()> {
    for d in [img.height(), img.width(), 3] {
        if d > u16::MAX as usize {
            return Err(Error::Format(format!(
                "image dimension {d} does not fit the format"
            )));
        }
        w.put_u16(d as u16)?;
    }
    for &v in img.pixels() {
        w.put_f64(v)?;
    }
    Ok(())
}

fn read_image<R: Read>(r: &mut Crc32Reader<R>) -> Result<Image> {
    let h = r.take_u16()? as usize;
    let w = r.take_u16()? as usize;
    let c = r.take_u16()? as usize;
    if c != 3 {
        return Err(Error::Format(format!(
            "images carry 3 channels, file claims {c}"
        )));
    }
    let mut pixels = Vec::with_capacity(h * w * 3);
    for _ in 0..h * w * 3 {
        pixels.push(r.take_f64()?);
    }
    Image::new(h, w, pixels)
}

/// Writes one split of a class dataset, stylized-variant blocks included.
pub fn write_dataset(path: &Path, dataset: &ClassDataset) -> Result<()> {
    dataset.validate()?;
    if dataset.n_classes() == 0 {
        return Err(Error::Contract("refusing to write an empty dataset".into()));
    }
    let mut w = Crc32Writer::new(BufWriter::new(File::create(path)?));
    w.put(DATASET_MAGIC)?;
    w.put_u32(FORMAT_VERSION)?;
    w.put(&[split_tag(dataset.split())])?;
    w.put_u32(dataset.n_classes() as u32)?;
    for record in dataset.classes() {
        w.put_u32(record.class_id)?;
        w.put_u32(record.images.len() as u32)?;
        for img in &record.images {
            write_image(&mut w, img)?;
        }
        match &record.stylized {
            None => w.put_u32(0)?,
            Some(blocks) => {
                w.put_u32(blocks.len() as u32)?;
                for (index, variants) in blocks.iter().enumerate() {
                    w.put_u32(index as u32)?;
                    w.put_u32(variants.len() as u32)?;
                    for img in variants {
                        write_image(&mut w, img)?;
                    }
                }
            }
        }
    }
    w.seal()
}

/// Reads a dataset file back, verifying structure and checksum.
pub fn read_dataset(path: &Path) -> Result<ClassDataset> {
    let mut r = Crc32Reader::new(BufReader::new(File::open(path)?), "dataset file");
    check_header(&mut r, DATASET_MAGIC)?;
    let mut tag = [0u8; 1];
    r.take(&mut tag)?;
    let split = split_from_tag(tag[0])?;
    let n_classes = r.take_u32()? as usize;
    if n_classes == 0 {
        return Err(Error::Format("dataset file holds no classes".into()));
    }
    let mut classes = Vec::with_capacity(n_classes);
    let mut resolution = None;
    for _ in 0..n_classes {
        let class_id = r.take_u32()?;
        let n_images = r.take_u32()? as usize;
        let mut images = Vec::with_capacity(n_images);
        for _ in 0..n_images {
            let img = read_image(&mut r)?;
            resolution.get_or_insert(img.height());
            images.push(img);
        }
        let n_blocks = r.take_u32()? as usize;
        let stylized = if n_blocks == 0 {
            None
        } else {
            if n_blocks != n_images {
                return Err(Error::Format(format!(
                    "class {class_id} carries {n_blocks} stylized blocks for {n_images} images"
                )));
            }
            let mut blocks: Vec<Option<Vec<Image>>> = vec![None; n_images];
            for _ in 0..n_blocks {
                let index = r.take_u32()? as usize;
                let slot = blocks.get_mut(index).ok_or_else(|| {
                    Error::Format(format!(
                        "stylized block keyed to image {index}, class has {n_images} images"
                    ))
                })?;
                if slot.is_some() {
                    return Err(Error::Format(format!(
                        "stylized block for image {index} appears twice"
                    )));
                }
                let n_variants = r.take_u32()? as usize;
                let mut variants = Vec::with_capacity(n_variants);
                for _ in 0..n_variants {
                    variants.push(read_image(&mut r)?);
                }
                *slot = Some(variants);
            }
            Some(blocks.into_iter().map(|b| b.unwrap()).collect())
        };
        classes.push(ClassRecord {
            class_id,
            images,
            stylized,
        });
    }
    r.seal()?;
    let resolution = resolution
        .ok_or_else(|| Error::Format("dataset file holds classes without images".into()))?;
    ClassDataset::new(split, resolution, classes)
}
