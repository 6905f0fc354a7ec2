//! Interchange file formats for ingested features, masks, base probabilities,
//! and semantic maps.
//!
//! - Feature file ("KNFP"): magic · version u32 · header_len u32 · UTF-8 JSON
//!   header `{"dtype":"f32le","dims":[d,h,w],"extractor":...,"image_id":...}`
//!   · raw little-endian f32 payload, channel-major.
//! - Mask manifest: JSON-lines, one object per mask, with the mask encoded as
//!   run-length `[start, len]` pairs over row-major pixels.
//! - Base probability file: JSON-lines; a header line binds the class order,
//!   then one `{"image_id", "mask_index", "probs"}` object per mask.
//! - Semantic maps: 16-bit binary PGM (`P5`, maxval 65535, big-endian
//!   samples); 65535 encodes the void label.

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMap, InstanceMask};
use crate::segmentation::{SemanticMap, VOID_LABEL};

pub const FEATURE_MAGIC: &[u8; 4] = b"KNFP";
pub const FEATURE_VERSION: u32 = 1;

const PGM_VOID: u16 = u16::MAX;

#[derive(Debug, Serialize, Deserialize)]
struct FeatureHeader {
    dtype: String,
    dims: [u32; 3],
    extractor: String,
    image_id: u64,
}

/// A parsed feature file.
#[derive(Debug, Clone)]
pub struct FeatureFile {
    pub image_id: u64,
    pub extractor: String,
    pub map: FeatureMap,
}

pub fn write_feature_file<W: Write>(
    mut sink: W,
    map: &FeatureMap,
    extractor: &str,
    image_id: u64,
) -> Result<()> {
    let header = FeatureHeader {
        dtype: "f32le".into(),
        dims: [map.channels() as u32, map.height() as u32, map.width() as u32],
        extractor: extractor.to_owned(),
        image_id,
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::InvalidData(format!("feature header: {e}")))?;
    sink.write_all(FEATURE_MAGIC)?;
    sink.write_all(&FEATURE_VERSION.to_le_bytes())?;
    sink.write_all(&(header_json.len() as u32).to_le_bytes())?;
    sink.write_all(&header_json)?;
    for &v in map.data() {
        sink.write_all(&v.to_le_bytes())?;
    }
    sink.flush()?;
    Ok(())
}

pub fn read_feature_file<R: Read>(mut source: R) -> Result<FeatureFile> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    feature_file_from_bytes(&bytes)
}

pub fn feature_file_from_bytes(bytes: &[u8]) -> Result<FeatureFile> {
    if bytes.len() < 12 {
        return Err(Error::InvalidData("feature file shorter than header".into()));
    }
    if &bytes[0..4] != FEATURE_MAGIC {
        return Err(Error::InvalidData("feature file has bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FEATURE_VERSION {
        return Err(Error::InvalidData(format!(
            "feature file version {version} unsupported"
        )));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + header_len {
        return Err(Error::InvalidData("feature file truncated in header".into()));
    }
    let header: FeatureHeader = serde_json::from_slice(&bytes[12..12 + header_len])
        .map_err(|e| Error::InvalidData(format!("feature header: {e}")))?;
    if header.dtype != "f32le" {
        return Err(Error::InvalidData(format!(
            "feature dtype {:?} unsupported (expected \"f32le\")",
            header.dtype
        )));
    }
    let [d, h, w] = header.dims;
    let count = d as usize * h as usize * w as usize;
    let payload = &bytes[12 + header_len..];
    if payload.len() != count * 4 {
        return Err(Error::InvalidData(format!(
            "feature payload holds {} bytes, dims {d}x{h}x{w} need {}",
            payload.len(),
            count * 4
        )));
    }
    let mut data = Vec::with_capacity(count);
    for chunk in payload.chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    let map = FeatureMap::new(d as usize, h as usize, w as usize, data)?;
    Ok(FeatureFile {
        image_id: header.image_id,
        extractor: header.extractor,
        map,
    })
}

/// One mask manifest line. `rle` holds `[start, len]` pairs of set runs over
/// row-major pixels, sorted and non-overlapping.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MaskManifestEntry {
    pub image_id: u64,
    pub rle: Vec<(u64, u64)>,
    pub h: u32,
    pub w: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_score: Option<f32>,
}

impl MaskManifestEntry {
    /// Decode the RLE into a dense mask.
    pub fn to_mask(&self) -> Result<InstanceMask> {
        let total = self.h as u64 * self.w as u64;
        let mut cells = vec![false; total as usize];
        let mut prev_end = 0u64;
        for &(start, len) in &self.rle {
            if len == 0 {
                return Err(Error::InvalidMask("zero-length run".into()));
            }
            if start < prev_end {
                return Err(Error::InvalidMask(format!(
                    "run at {start} overlaps or is out of order"
                )));
            }
            let end = start
                .checked_add(len)
                .filter(|&e| e <= total)
                .ok_or_else(|| {
                    Error::InvalidMask(format!(
                        "run ({start}, {len}) exceeds {}x{} grid",
                        self.h, self.w
                    ))
                })?;
            for i in start..end {
                cells[i as usize] = true;
            }
            prev_end = end;
        }
        let mask = InstanceMask::new(self.h as usize, self.w as usize, cells)?;
        match self.mask_score {
            Some(score) => mask.with_score(score),
            None => Ok(mask),
        }
    }

    /// Encode a dense mask as sorted `[start, len]` runs.
    pub fn from_mask(
        mask: &InstanceMask,
        image_id: u64,
        class: Option<String>,
    ) -> MaskManifestEntry {
        let mut rle = Vec::new();
        let cells = mask.cells();
        let mut i = 0usize;
        while i < cells.len() {
            if cells[i] {
                let start = i;
                while i < cells.len() && cells[i] {
                    i += 1;
                }
                rle.push((start as u64, (i - start) as u64));
            } else {
                i += 1;
            }
        }
        MaskManifestEntry {
            image_id,
            rle,
            h: mask.height() as u32,
            w: mask.width() as u32,
            class,
            mask_score: mask.mask_score(),
        }
    }
}

/// Read a whole mask manifest; blank lines are skipped and parse errors carry
/// the 1-based line number.
pub fn read_mask_manifest<R: BufRead>(source: R) -> Result<Vec<MaskManifestEntry>> {
    let mut entries = Vec::new();
    for (lineno, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: MaskManifestEntry = serde_json::from_str(&line).map_err(|e| {
            Error::InvalidData(format!("mask manifest line {}: {e}", lineno + 1))
        })?;
        entries.push(entry);
    }
    Ok(entries)
}

pub fn write_mask_manifest<W: Write>(mut sink: W, entries: &[MaskManifestEntry]) -> Result<()> {
    for entry in entries {
        let line = serde_json::to_string(entry)
            .map_err(|e| Error::InvalidData(format!("mask manifest: {e}")))?;
        writeln!(sink, "{line}")?;
    }
    sink.flush()?;
    Ok(())
}

/// Header line of a base probability file: the class order the `probs`
/// vectors follow, which must match the database registry.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BaseProbHeader {
    pub classes: Vec<String>,
}

/// One per-mask base probability vector.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BaseProbEntry {
    pub image_id: u64,
    pub mask_index: usize,
    pub probs: Vec<f64>,
}

pub fn read_base_probs<R: BufRead>(source: R) -> Result<(BaseProbHeader, Vec<BaseProbEntry>)> {
    let mut lines = source.lines().enumerate();
    let header: BaseProbHeader = loop {
        let Some((lineno, line)) = lines.next() else {
            return Err(Error::InvalidData(
                "base probability file is missing its header line".into(),
            ));
        };
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        break serde_json::from_str(&line).map_err(|e| {
            Error::InvalidData(format!("base probability header line {}: {e}", lineno + 1))
        })?;
    };
    let mut entries = Vec::new();
    for (lineno, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: BaseProbEntry = serde_json::from_str(&line).map_err(|e| {
            Error::InvalidData(format!("base probability line {}: {e}", lineno + 1))
        })?;
        if entry.probs.len() != header.classes.len() {
            return Err(Error::shape(
                format!("{} probabilities", header.classes.len()),
                format!(
                    "{} probabilities on line {}",
                    entry.probs.len(),
                    lineno + 1
                ),
            ));
        }
        entries.push(entry);
    }
    Ok((header, entries))
}

pub fn write_base_probs<W: Write>(
    mut sink: W,
    header: &BaseProbHeader,
    entries: &[BaseProbEntry],
) -> Result<()> {
    let head = serde_json::to_string(header)
        .map_err(|e| Error::InvalidData(format!("base probability header: {e}")))?;
    writeln!(sink, "{head}")?;
    for entry in entries {
        let line = serde_json::to_string(entry)
            .map_err(|e| Error::InvalidData(format!("base probability entry: {e}")))?;
        writeln!(sink, "{line}")?;
    }
    sink.flush()?;
    Ok(())
}

/// Write a semantic map as 16-bit binary PGM. Void pixels become 65535; class
/// ids must fit below that.
pub fn write_pgm<W: Write>(mut sink: W, map: &SemanticMap) -> Result<()> {
    for &label in map.labels() {
        if label != VOID_LABEL && label >= PGM_VOID as u32 {
            return Err(Error::InvalidData(format!(
                "class id {label} does not fit in 16-bit PGM"
            )));
        }
    }
    write!(sink, "P5\n{} {}\n{}\n", map.width(), map.height(), PGM_VOID)?;
    for &label in map.labels() {
        let v = if label == VOID_LABEL { PGM_VOID } else { label as u16 };
        sink.write_all(&v.to_be_bytes())?;
    }
    sink.flush()?;
    Ok(())
}

pub fn read_pgm<R: Read>(mut source: R) -> Result<SemanticMap> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    pgm_from_bytes(&bytes)
}

pub fn pgm_from_bytes(bytes: &[u8]) -> Result<SemanticMap> {
    let mut pos = 0usize;
    let mut token = |what: &str| -> Result<String> {
        // Skip whitespace and '#' comment lines between header tokens.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::InvalidData(format!("pgm: missing {what}")));
        }
        std::str::from_utf8(&bytes[start..pos])
            .map(str::to_owned)
            .map_err(|_| Error::InvalidData(format!("pgm: non-ascii {what}")))
    };

    if token("magic")? != "P5" {
        return Err(Error::InvalidData("pgm: expected P5".into()));
    }
    let width: usize = token("width")?
        .parse()
        .map_err(|_| Error::InvalidData("pgm: bad width".into()))?;
    let height: usize = token("height")?
        .parse()
        .map_err(|_| Error::InvalidData("pgm: bad height".into()))?;
    let maxval: u32 = token("maxval")?
        .parse()
        .map_err(|_| Error::InvalidData("pgm: bad maxval".into()))?;
    if maxval != PGM_VOID as u32 {
        return Err(Error::InvalidData(format!(
            "pgm: maxval {maxval}, expected {PGM_VOID}"
        )));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::InvalidData("pgm: missing raster separator".into()));
    }
    pos += 1;

    let need = height * width * 2;
    let raster = &bytes[pos..];
    if raster.len() != need {
        return Err(Error::InvalidData(format!(
            "pgm: raster holds {} bytes, {height}x{width} needs {need}",
            raster.len()
        )));
    }
    let labels = raster
        .chunks_exact(2)
        .map(|c| {
            let v = u16::from_be_bytes(c.try_into().unwrap());
            if v == PGM_VOID {
                VOID_LABEL
            } else {
                v as u32
            }
        })
        .collect();
    SemanticMap::new(height, width, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_file_roundtrip() {
        let map = FeatureMap::new(2, 3, 4, (0..24).map(|i| i as f32 * 0.5).collect()).unwrap();
        let mut bytes = Vec::new();
        write_feature_file(&mut bytes, &map, "test-extractor", 42).unwrap();
        let back = feature_file_from_bytes(&bytes).unwrap();
        assert_eq!(back.image_id, 42);
        assert_eq!(back.extractor, "test-extractor");
        assert_eq!(back.map, map);
    }

    #[test]
    fn feature_file_rejects_bad_magic_and_short_payload() {
        let map = FeatureMap::constant(1, 2, 2, 1.0).unwrap();
        let mut bytes = Vec::new();
        write_feature_file(&mut bytes, &map, "x", 0).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'Z';
        assert!(feature_file_from_bytes(&bad).is_err());

        let short = &bytes[..bytes.len() - 4];
        assert!(feature_file_from_bytes(short).is_err());
    }

    #[test]
    fn feature_file_rejects_nonfinite_payload() {
        let map = FeatureMap::constant(1, 1, 2, 1.0).unwrap();
        let mut bytes = Vec::new();
        write_feature_file(&mut bytes, &map, "x", 0).unwrap();
        let tail = bytes.len() - 4;
        bytes[tail..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(feature_file_from_bytes(&bytes).is_err());
    }

    #[test]
    fn mask_rle_roundtrip() {
        let cells = vec![
            true, true, false, false, //
            false, true, true, true, //
            false, false, false, true,
        ];
        let mask = InstanceMask::new(3, 4, cells).unwrap().with_score(0.75).unwrap();
        let entry = MaskManifestEntry::from_mask(&mask, 7, Some("cat".into()));
        assert_eq!(entry.rle, vec![(0, 2), (5, 3), (11, 1)]);
        let back = entry.to_mask().unwrap();
        assert_eq!(back.cells(), mask.cells());
        assert_eq!(back.mask_score(), Some(0.75));
    }

    #[test]
    fn mask_rle_rejects_bad_runs() {
        let overlap = MaskManifestEntry {
            image_id: 0,
            rle: vec![(0, 3), (2, 2)],
            h: 2,
            w: 4,
            class: None,
            mask_score: None,
        };
        assert!(overlap.to_mask().is_err());

        let oob = MaskManifestEntry {
            image_id: 0,
            rle: vec![(6, 4)],
            h: 2,
            w: 4,
            class: None,
            mask_score: None,
        };
        assert!(oob.to_mask().is_err());

        let empty = MaskManifestEntry {
            image_id: 0,
            rle: vec![],
            h: 2,
            w: 4,
            class: None,
            mask_score: None,
        };
        assert!(matches!(empty.to_mask(), Err(Error::InvalidMask(_))));
    }

    #[test]
    fn manifest_lines_roundtrip_and_report_line_numbers() {
        let mask = InstanceMask::full(2, 2).unwrap();
        let entries = vec![
            MaskManifestEntry::from_mask(&mask, 1, Some("a".into())),
            MaskManifestEntry::from_mask(&mask, 2, None),
        ];
        let mut bytes = Vec::new();
        write_mask_manifest(&mut bytes, &entries).unwrap();
        let back = read_mask_manifest(&bytes[..]).unwrap();
        assert_eq!(back, entries);

        let broken = b"{\"image_id\":1,\"rle\":[[0,1]],\"h\":1,\"w\":1}\nnot json\n";
        let err = read_mask_manifest(&broken[..]).unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn base_probs_roundtrip_and_length_check() {
        let header = BaseProbHeader {
            classes: vec!["a".into(), "b".into()],
        };
        let entries = vec![BaseProbEntry {
            image_id: 3,
            mask_index: 0,
            probs: vec![0.4, 0.6],
        }];
        let mut bytes = Vec::new();
        write_base_probs(&mut bytes, &header, &entries).unwrap();
        let (h, e) = read_base_probs(&bytes[..]).unwrap();
        assert_eq!(h, header);
        assert_eq!(e, entries);

        let bad = b"{\"classes\":[\"a\",\"b\"]}\n{\"image_id\":0,\"mask_index\":0,\"probs\":[1.0]}\n";
        assert!(matches!(
            read_base_probs(&bad[..]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn pgm_roundtrip_with_void() {
        let map = SemanticMap::new(2, 3, vec![0, 1, 2, VOID_LABEL, 5, 0]).unwrap();
        let mut bytes = Vec::new();
        write_pgm(&mut bytes, &map).unwrap();
        let back = pgm_from_bytes(&bytes).unwrap();
        assert_eq!(back, map);
    }

    #[test]
    fn pgm_rejects_oversized_ids_and_bad_raster() {
        let map = SemanticMap::new(1, 1, vec![65535]).unwrap();
        assert!(write_pgm(Vec::new(), &map).is_err());

        let ok = SemanticMap::new(1, 2, vec![1, 2]).unwrap();
        let mut bytes = Vec::new();
        write_pgm(&mut bytes, &ok).unwrap();
        bytes.pop();
        assert!(pgm_from_bytes(&bytes).is_err());
    }
}
