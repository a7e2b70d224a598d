//! IDX (MNIST) files: big-endian headers followed by unsigned bytes.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};

use super::LabeledDataset;
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Decoded image file: `count` images of `rows x cols` bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn header(cur: &mut Cursor<&[u8]>, what: &str) -> Result<u32> {
    cur.read_u32::<BigEndian>()
        .map_err(|_| Error::Format(format!("{what}: truncated header")))
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let mut cur = Cursor::new(bytes);
    let magic = header(&mut cur, "images")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "images: magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"
        )));
    }
    let count = header(&mut cur, "images")? as usize;
    let rows = header(&mut cur, "images")? as usize;
    let cols = header(&mut cur, "images")? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::Format("images: zero-sized image dimension".into()));
    }
    let expected = count * rows * cols;
    let mut pixels = Vec::with_capacity(expected);
    cur.read_to_end(&mut pixels)
        .map_err(|e| Error::Format(format!("images: {e}")))?;
    if pixels.len() != expected {
        return Err(Error::Format(format!(
            "images: header announces {expected} pixel bytes, file has {}",
            pixels.len()
        )));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut cur = Cursor::new(bytes);
    let magic = header(&mut cur, "labels")?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format(format!(
            "labels: magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"
        )));
    }
    let count = header(&mut cur, "labels")? as usize;
    let mut labels = Vec::with_capacity(count);
    cur.read_to_end(&mut labels)
        .map_err(|e| Error::Format(format!("labels: {e}")))?;
    if labels.len() != count {
        return Err(Error::Format(format!(
            "labels: header announces {count} labels, file has {}",
            labels.len()
        )));
    }
    Ok(labels)
}

fn assemble(images: IdxImages, labels: Vec<u8>) -> Result<LabeledDataset> {
    if images.count != labels.len() {
        return Err(Error::Consistency(format!(
            "{} images but {} labels",
            images.count,
            labels.len()
        )));
    }
    let dim = images.rows * images.cols;
    let features = images.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let num_classes = labels.iter().max().map_or(1, |&m| m + 1);
    LabeledDataset::new(
        num_classes,
        dim,
        (0..labels.len()).collect(),
        labels,
        features,
    )
}

pub(crate) fn from_idx_bytes(images: &[u8], labels: &[u8]) -> Result<LabeledDataset> {
    assemble(parse_idx_images(images)?, parse_idx_labels(labels)?)
}

/// Pixels are scaled to [0, 1]; IDs follow file order.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let images = std::fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = std::fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    from_idx_bytes(&images, &labels)
}

pub(crate) fn to_idx_bytes(
    dataset: &LabeledDataset,
    rows: usize,
    cols: usize,
) -> Result<(Vec<u8>, Vec<u8>)> {
    if rows * cols != dataset.dim() {
        return Err(Error::Shape(format!(
            "{rows}x{cols} images cannot hold {}-dimensional samples",
            dataset.dim()
        )));
    }
    if dataset.num_classes() > 256 {
        return Err(Error::Format("IDX labels hold at most 256 classes".into()));
    }
    let n = dataset.len();
    let mut images = Vec::with_capacity(16 + n * rows * cols);
    for v in [IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        images.write_u32::<BigEndian>(v).expect("vec write");
    }
    for &x in dataset.features() {
        let scaled = (x * 255.0).round();
        if !(0.0..=255.0).contains(&scaled) {
            return Err(Error::Format(format!("feature {x} outside [0, 1]")));
        }
        images.push(scaled as u8);
    }
    let mut labels = Vec::with_capacity(8 + n);
    labels.write_u32::<BigEndian>(LABELS_MAGIC).expect("vec write");
    labels.write_u32::<BigEndian>(n as u32).expect("vec write");
    labels.extend(dataset.labels().iter().map(|&l| l as u8));
    Ok((images, labels))
}

/// Writes features back as 8-bit pixels. Lossless for data that came from IDX.
pub fn write_idx(
    dataset: &LabeledDataset,
    rows: usize,
    cols: usize,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let (images, labels) = to_idx_bytes(dataset, rows, cols)?;
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    std::fs::write(images_path, images).map_err(|e| Error::io(images_path, e))?;
    std::fs::write(labels_path, labels).map_err(|e| Error::io(labels_path, e))?;
    Ok(())
}
