//! Line-delimited corpus files: one JSON record per line behind a versioned
//! header record. Ground-truth boxes live only in query records so the
//! training path never sees them.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Box2D;

pub const IMAGES_FORMAT: &str = "kacnet-images";
pub const QUERIES_FORMAT: &str = "kacnet-queries";
pub const FORMAT_VERSION: u32 = 1;

/// One candidate region: pixel box, visual feature, classifier distribution.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Proposal {
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub feature: Vec<f64>,
    pub class_probs: Vec<f64>,
}

impl Proposal {
    pub fn bbox(&self) -> Box2D {
        Box2D::new(self.bbox[0], self.bbox[1], self.bbox[2], self.bbox[3])
    }
}

/// One image: global feature plus its proposal list.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProposalSet {
    pub image_id: String,
    pub width: f64,
    pub height: f64,
    pub global_feature: Vec<f64>,
    pub proposals: Vec<Proposal>,
}

/// One query: source words, optional noun annotations, optional evaluation
/// box. `tokens` are filled in by the caller once a vocabulary is fixed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub image_id: String,
    pub words: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noun_positions: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_box: Option<[f64; 4]>,
}

impl Query {
    pub fn gt_box(&self) -> Option<Box2D> {
        self.gt_box
            .map(|b| Box2D::new(b[0], b[1], b[2], b[3]))
    }
}

#[derive(Serialize, Deserialize)]
struct ImagesHeader {
    format: String,
    version: u32,
    feature_dim: usize,
    num_classes: usize,
}

#[derive(Serialize, Deserialize)]
struct QueriesHeader {
    format: String,
    version: u32,
}

/// Loaded corpus with the image index resolved.
pub struct Corpus {
    pub feature_dim: usize,
    pub num_classes: usize,
    pub images: Vec<ProposalSet>,
    pub queries: Vec<Query>,
    image_index: HashMap<String, usize>,
}

impl Corpus {
    pub fn image_for(&self, query: &Query) -> &ProposalSet {
        &self.images[self.image_index[&query.image_id]]
    }

    pub fn image_by_id(&self, image_id: &str) -> Option<&ProposalSet> {
        self.image_index.get(image_id).map(|&i| &self.images[i])
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LoadOptions {
    /// Keep at most this many proposals per image, in file order.
    pub proposal_cap: Option<usize>,
    pub max_query_len: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            proposal_cap: Some(100),
            max_query_len: 20,
        }
    }
}

fn format_err(path: &Path, line: usize, detail: impl Into<String>) -> Error {
    let line = Some(line);
    Error::Format {
        path: path.display().to_string(),
        line,
        detail: detail.into(),
    }
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = std::io::Result<String>>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(BufReader::new(file).lines())
}

/// Load and cross-validate the image and query files.
pub fn load_grounding_corpus(
    images_path: &Path,
    queries_path: &Path,
    opts: &LoadOptions,
) -> Result<Corpus> {
    let (images, feature_dim, num_classes) = load_images(images_path, opts)?;
    let image_index: HashMap<String, usize> = images
        .iter()
        .enumerate()
        .map(|(i, img)| (img.image_id.clone(), i))
        .collect();
    let queries = load_queries(queries_path, opts, &images, &image_index)?;
    Ok(Corpus {
        feature_dim,
        num_classes,
        images,
        queries,
        image_index,
    })
}

fn load_images(
    path: &Path,
    opts: &LoadOptions,
) -> Result<(Vec<ProposalSet>, usize, usize)> {
    let mut lines = open_lines(path)?.enumerate();
    let (_, first) = lines
        .next()
        .ok_or_else(|| format_err(path, 1, "empty file, expected header record"))?;
    let first = first.map_err(|e| Error::io(path.display().to_string(), e))?;
    let header: ImagesHeader = serde_json::from_str(&first)
        .map_err(|e| format_err(path, 1, format!("bad header: {}", e)))?;
    if header.format != IMAGES_FORMAT || header.version != FORMAT_VERSION {
        return Err(format_err(
            path,
            1,
            format!(
                "expected {} v{}, got {} v{}",
                IMAGES_FORMAT, FORMAT_VERSION, header.format, header.version
            ),
        ));
    }

    let mut images = Vec::new();
    let mut seen = HashMap::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut img: ProposalSet = serde_json::from_str(&line)
            .map_err(|e| format_err(path, line_no, format!("bad image record: {}", e)))?;
        if let Some(cap) = opts.proposal_cap {
            img.proposals.truncate(cap);
        }
        validate_image(&img, header.feature_dim, header.num_classes)
            .map_err(|e| format_err(path, line_no, e.to_string()))?;
        if seen.insert(img.image_id.clone(), line_no).is_some() {
            return Err(format_err(
                path,
                line_no,
                format!("duplicate image_id `{}`", img.image_id),
            ));
        }
        images.push(img);
    }
    Ok((images, header.feature_dim, header.num_classes))
}

fn validate_image(img: &ProposalSet, feature_dim: usize, num_classes: usize) -> Result<()> {
    if img.width <= 0.0 || img.height <= 0.0 {
        return Err(Error::Contract(format!(
            "image `{}` has non-positive dimensions {}×{}",
            img.image_id, img.width, img.height
        )));
    }
    if img.global_feature.len() != feature_dim {
        return Err(Error::Contract(format!(
            "image `{}` global feature has {} dims, header declares {}",
            img.image_id,
            img.global_feature.len(),
            feature_dim
        )));
    }
    if img.proposals.is_empty() {
        return Err(Error::Contract(format!(
            "image `{}` has no proposals",
            img.image_id
        )));
    }
    for (i, p) in img.proposals.iter().enumerate() {
        p.bbox().validate(img.width, img.height).map_err(|e| {
            Error::Contract(format!("image `{}` proposal {}: {}", img.image_id, i, e))
        })?;
        if p.feature.len() != feature_dim {
            return Err(Error::Contract(format!(
                "image `{}` proposal {} feature has {} dims, header declares {}",
                img.image_id,
                i,
                p.feature.len(),
                feature_dim
            )));
        }
        if p.class_probs.len() != num_classes {
            return Err(Error::Contract(format!(
                "image `{}` proposal {} distribution has {} classes, header declares {}",
                img.image_id,
                i,
                p.class_probs.len(),
                num_classes
            )));
        }
        if p.class_probs.iter().any(|&v| v < 0.0) {
            return Err(Error::Contract(format!(
                "image `{}` proposal {} has negative class probability",
                img.image_id, i
            )));
        }
        let sum: f64 = p.class_probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Contract(format!(
                "image `{}` proposal {} class probabilities sum to {}, expected 1",
                img.image_id, i, sum
            )));
        }
    }
    Ok(())
}

fn load_queries(
    path: &Path,
    opts: &LoadOptions,
    images: &[ProposalSet],
    image_index: &HashMap<String, usize>,
) -> Result<Vec<Query>> {
    let mut lines = open_lines(path)?.enumerate();
    let (_, first) = lines
        .next()
        .ok_or_else(|| format_err(path, 1, "empty file, expected header record"))?;
    let first = first.map_err(|e| Error::io(path.display().to_string(), e))?;
    let header: QueriesHeader = serde_json::from_str(&first)
        .map_err(|e| format_err(path, 1, format!("bad header: {}", e)))?;
    if header.format != QUERIES_FORMAT || header.version != FORMAT_VERSION {
        return Err(format_err(
            path,
            1,
            format!(
                "expected {} v{}, got {} v{}",
                QUERIES_FORMAT, FORMAT_VERSION, header.format, header.version
            ),
        ));
    }

    let mut queries = Vec::new();
    let mut seen = HashMap::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let q: Query = serde_json::from_str(&line)
            .map_err(|e| format_err(path, line_no, format!("bad query record: {}", e)))?;
        if q.words.is_empty() || q.words.len() > opts.max_query_len {
            return Err(format_err(
                path,
                line_no,
                format!(
                    "query `{}` has {} words, expected 1..={}",
                    q.query_id,
                    q.words.len(),
                    opts.max_query_len
                ),
            ));
        }
        if let Some(positions) = &q.noun_positions {
            if positions.iter().any(|&p| p >= q.words.len()) {
                return Err(format_err(
                    path,
                    line_no,
                    format!("query `{}` noun position out of range", q.query_id),
                ));
            }
        }
        let image = match image_index.get(&q.image_id) {
            Some(&i) => &images[i],
            None => {
                return Err(Error::Reference(format!(
                    "{}:{}: query `{}` references unknown image_id `{}`",
                    path.display(),
                    line_no,
                    q.query_id,
                    q.image_id
                )))
            }
        };
        if let Some(gt) = q.gt_box() {
            gt.validate(image.width, image.height)
                .map_err(|e| format_err(path, line_no, format!("query `{}`: {}", q.query_id, e)))?;
        }
        if seen.insert(q.query_id.clone(), line_no).is_some() {
            return Err(format_err(
                path,
                line_no,
                format!("duplicate query_id `{}`", q.query_id),
            ));
        }
        queries.push(q);
    }
    Ok(queries)
}

pub fn save_images(path: &Path, images: &[ProposalSet], feature_dim: usize, num_classes: usize) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let header = ImagesHeader {
        format: IMAGES_FORMAT.to_string(),
        version: FORMAT_VERSION,
        feature_dim,
        num_classes,
    };
    let write = |w: &mut BufWriter<File>, s: String| -> Result<()> {
        writeln!(w, "{}", s).map_err(|e| Error::io(path.display().to_string(), e))
    };
    write(&mut w, serde_json::to_string(&header).expect("header json"))?;
    for img in images {
        write(&mut w, serde_json::to_string(img).expect("image json"))?;
    }
    Ok(())
}

pub fn save_queries(path: &Path, queries: &[Query]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let header = QueriesHeader {
        format: QUERIES_FORMAT.to_string(),
        version: FORMAT_VERSION,
    };
    writeln!(w, "{}", serde_json::to_string(&header).expect("header json"))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    for q in queries {
        writeln!(w, "{}", serde_json::to_string(q).expect("query json"))
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

/// Tag file: one `query_id<TAB or space>tag` pair per line.
pub fn load_tags(path: &Path) -> Result<HashMap<String, String>> {
    let mut tags = HashMap::new();
    for (idx, line) in open_lines(path)?.enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        match (parts.next(), parts.next()) {
            (Some(id), Some(tag)) => {
                tags.insert(id.to_string(), tag.to_string());
            }
            _ => {
                return Err(format_err(
                    path,
                    idx + 1,
                    "expected `query_id tag`".to_string(),
                ))
            }
        }
    }
    Ok(tags)
}
