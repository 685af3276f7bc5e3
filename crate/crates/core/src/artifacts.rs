//! File formats: PNG rasters with an embedded config hash, CSV reports with a
//! hash comment line, and readers for injected edges, proposals and flow.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::RocCurve;
use crate::features::FeatureVector;
use crate::flow::TrackedPoint;
use crate::geometry::PixelPoint;
use crate::image::{LabelImage, RgbImage};
use crate::probmap::ProbabilityMap;
use crate::proposals::{EdgeMap, Proposal};

pub const HASH_KEY: &str = "config_hash";

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

fn write_png(
    path: &Path,
    width: u32,
    height: u32,
    color: png::ColorType,
    depth: png::BitDepth,
    data: &[u8],
    hash: Option<&str>,
) -> Result<()> {
    let mut enc = png::Encoder::new(create(path)?, width, height);
    enc.set_color(color);
    enc.set_depth(depth);
    if let Some(h) = hash {
        enc.add_text_chunk(HASH_KEY.to_string(), h.to_string())?;
    }
    let mut w = enc.write_header()?;
    w.write_image_data(data)?;
    w.finish()?;
    Ok(())
}

pub fn write_rgb_png(path: &Path, img: &RgbImage, hash: Option<&str>) -> Result<()> {
    write_png(
        path,
        img.width(),
        img.height(),
        png::ColorType::Rgb,
        png::BitDepth::Eight,
        &img.to_rgb8(),
        hash,
    )
}

pub fn write_gray8_png(path: &Path, width: u32, height: u32, data: &[u8], hash: Option<&str>) -> Result<()> {
    write_png(path, width, height, png::ColorType::Grayscale, png::BitDepth::Eight, data, hash)
}

pub fn write_gray16_png(path: &Path, width: u32, height: u32, data: &[u16], hash: Option<&str>) -> Result<()> {
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_be_bytes()).collect();
    write_png(path, width, height, png::ColorType::Grayscale, png::BitDepth::Sixteen, &bytes, hash)
}

pub fn write_labels_png(path: &Path, labels: &LabelImage, hash: Option<&str>) -> Result<()> {
    write_gray16_png(path, labels.width(), labels.height(), labels.data(), hash)
}

/// Probability map as 16-bit grey, `round(P·65535)`.
pub fn write_map_png(path: &Path, map: &ProbabilityMap, hash: Option<&str>) -> Result<()> {
    let data: Vec<u16> = map.values().iter().map(|p| (p * 65535.0).round() as u16).collect();
    write_gray16_png(path, map.width(), map.height(), &data, hash)
}

pub fn write_mask_png(path: &Path, mask: &crate::image::Mask, hash: Option<&str>) -> Result<()> {
    let data: Vec<u8> = mask.data().iter().map(|b| if *b { 255 } else { 0 }).collect();
    write_gray8_png(path, mask.width(), mask.height(), &data, hash)
}

/// Edge responses as 8-bit grey, `round(r·255)`.
pub fn write_edges_png(path: &Path, edges: &EdgeMap, hash: Option<&str>) -> Result<()> {
    let data: Vec<u8> = edges.responses().iter().map(|r| (r * 255.0).round() as u8).collect();
    write_gray8_png(path, edges.width(), edges.height(), &data, hash)
}

/// Value of the embedded hash text chunk, if any.
pub fn png_hash(path: &Path) -> Result<Option<String>> {
    let decoder = png::Decoder::new(BufReader::new(open(path)?));
    let reader = decoder
        .read_info()
        .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    Ok(reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .find(|t| t.keyword == HASH_KEY)
        .map(|t| t.text.clone()))
}

fn load_image(path: &Path) -> Result<image::DynamicImage> {
    let reader = image::ImageReader::new(BufReader::new(open(path)?))
        .with_guessed_format()
        .map_err(Error::Io)?;
    Ok(reader.decode()?)
}

pub fn read_rgb_png(path: &Path) -> Result<RgbImage> {
    let img = load_image(path)?.to_rgb8();
    RgbImage::from_rgb8(img.width(), img.height(), img.as_raw())
}

pub fn read_labels_png(path: &Path) -> Result<LabelImage> {
    let (w, h, data) = match load_image(path)? {
        // 8-bit label files keep their raw ids
        image::DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            (w, h, g.as_raw().iter().map(|v| *v as u16).collect())
        }
        other => {
            let g = other.to_luma16();
            let (w, h) = g.dimensions();
            (w, h, g.into_raw())
        }
    };
    LabelImage::new(w, h, data)
}

pub fn read_map_png(path: &Path) -> Result<ProbabilityMap> {
    let img = load_image(path)?.to_luma16();
    let (w, h) = img.dimensions();
    ProbabilityMap::new(w, h, img.as_raw().iter().map(|v| *v as f64 / 65535.0).collect())
}

/// Injected edge map: 8-bit grey PNG, response `v/255`.
pub fn read_edges_png(path: &Path) -> Result<EdgeMap> {
    let img = load_image(path)?.to_luma8();
    let (w, h) = img.dimensions();
    EdgeMap::new(w, h, img.as_raw().iter().map(|v| *v as f64 / 255.0).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub u: u32,
    pub v: u32,
    pub w: u32,
    pub h: u32,
    #[serde(default)]
    pub objectness: f64,
}

/// Injected proposals: JSON list of boxes; ids follow list order.
pub fn read_proposals_json(path: &Path) -> Result<Vec<Proposal>> {
    let boxes: Vec<BoxRecord> = serde_json::from_reader(BufReader::new(open(path)?))?;
    Ok(boxes
        .into_iter()
        .enumerate()
        .map(|(id, b)| Proposal {
            id,
            u: b.u,
            v: b.v,
            w: b.w,
            h: b.h,
            objectness: b.objectness,
        })
        .collect())
}

pub fn write_proposals_json(path: &Path, proposals: &[Proposal]) -> Result<()> {
    let boxes: Vec<BoxRecord> = proposals
        .iter()
        .map(|p| BoxRecord {
            u: p.u,
            v: p.v,
            w: p.w,
            h: p.h,
            objectness: p.objectness,
        })
        .collect();
    write_json(path, &boxes)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub x: f64,
    pub y: f64,
    pub ax: f64,
    pub ay: f64,
    #[serde(default)]
    pub fb_error: f64,
    #[serde(default = "yes")]
    pub ok: bool,
}

fn yes() -> bool {
    true
}

/// Injected correspondences: CSV `x,y,ax,ay[,fb_error,ok]`, one row per
/// tracked pixel of frame `t`.
pub fn read_flow_csv(path: &Path) -> Result<Vec<TrackedPoint>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<FlowRecord>().enumerate() {
        let r = row.map_err(|e| Error::MalformedRow {
            path: path.to_path_buf(),
            line: e.position().map_or(i as u64 + 2, |p| p.line()),
            message: e.to_string(),
        })?;
        let x = PixelPoint::new(r.x, r.y);
        out.push(TrackedPoint {
            x_t: x,
            a_prev: PixelPoint::new(r.ax, r.ay),
            x_back: x,
            fb_error: if r.ok { r.fb_error } else { crate::flow::FAILED_TRACK },
            track_ok: r.ok,
        });
    }
    Ok(out)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(open(path)?))?)
}

/// CSV writer whose first line is `# config_hash: <hash>`.
pub fn csv_writer(path: &Path, hash: &str) -> Result<csv::Writer<BufWriter<File>>> {
    let mut w = create(path)?;
    writeln!(w, "# {HASH_KEY}: {hash}")?;
    Ok(csv::Writer::from_writer(w))
}

/// Reads the hash comment of a CSV written by [`csv_writer`].
pub fn csv_hash(path: &Path) -> Result<Option<String>> {
    let mut first = String::new();
    BufReader::new(open(path)?).read_line(&mut first)?;
    Ok(first
        .trim()
        .strip_prefix(&format!("# {HASH_KEY}: "))
        .map(str::to_string))
}

pub fn write_roc_csv(path: &Path, curve: &RocCurve, hash: &str) -> Result<()> {
    let mut w = csv_writer(path, hash)?;
    w.write_record(["threshold", "fpr", "tpr"])?;
    for p in &curve.points {
        w.write_record([p.threshold.to_string(), p.fpr.to_string(), p.tpr.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// One row of the training feature dump.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub id: String,
    pub features: FeatureVector,
    pub lambda: f64,
    pub n_points: usize,
    pub label_iou: f64,
    pub class: crate::model::SampleClass,
}

pub fn feature_header() -> Vec<String> {
    let mut h = vec!["id".to_string()];
    h.extend((1..=19).map(|k| format!("f{k}")));
    h.extend(["lambda", "n_points", "label_iou", "class"].map(String::from));
    h
}

pub fn write_feature_csv(path: &Path, rows: &[FeatureRow], hash: &str) -> Result<()> {
    let mut w = csv_writer(path, hash)?;
    w.write_record(feature_header())?;
    for r in rows {
        let mut rec = vec![r.id.clone()];
        rec.extend(r.features.0.iter().map(|v| v.to_string()));
        rec.push(r.lambda.to_string());
        rec.push(r.n_points.to_string());
        rec.push(r.label_iou.to_string());
        rec.push(
            match r.class {
                crate::model::SampleClass::Floor => "floor",
                crate::model::SampleClass::Background => "background",
            }
            .to_string(),
        );
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_feature_csv(path: &Path) -> Result<Vec<FeatureRow>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(open(path)?);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != feature_header() {
        return Err(Error::MalformedRow {
            path: path.to_path_buf(),
            line: 2,
            message: "unexpected feature header".into(),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| Error::MalformedRow {
            path: path.to_path_buf(),
            line,
            message,
        };
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|e| bad(format!("column {}: {e}", &header[i])))
        };
        let mut f = [0.0; 19];
        for (k, v) in f.iter_mut().enumerate() {
            *v = num(k + 1)?;
        }
        let class = match &rec[23] {
            "floor" => crate::model::SampleClass::Floor,
            "background" => crate::model::SampleClass::Background,
            other => return Err(bad(format!("unknown class {other:?}"))),
        };
        rows.push(FeatureRow {
            id: rec[0].to_string(),
            features: FeatureVector(f),
            lambda: num(20)?,
            n_points: rec[21].parse().map_err(|e| bad(format!("n_points: {e}")))?,
            label_iou: num(22)?,
            class,
        });
    }
    Ok(rows)
}

/// Path of a per-frame file `dir/<frame:06>.<ext>`.
pub fn frame_file(dir: &Path, frame: u64, ext: &str) -> PathBuf {
    dir.join(format!("{frame:06}.{ext}"))
}
