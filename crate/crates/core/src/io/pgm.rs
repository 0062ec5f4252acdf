use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::CloudImage;

const MAXVAL: f64 = 65535.0;

/// ASCII graymap (P2). Gray levels are `round(count / count_scale)`, where
/// `count_scale` is 1 unless the brightest pixel exceeds 65535 counts.
/// Rows are written top to bottom, as in [`CloudImage`].
pub fn pgm_string(img: &CloudImage) -> String {
    let max = img.pixels.iter().cloned().fold(0.0, f64::max);
    let scale = if max > MAXVAL { max / MAXVAL } else { 1.0 };
    let mut s = String::new();
    writeln!(s, "P2").unwrap();
    writeln!(
        s,
        "# pixel_size_m={:?} expansion_time_s={:?} count_scale={:?}",
        img.pixel_size, img.expansion_time, scale
    )
    .unwrap();
    writeln!(s, "{} {}", img.width, img.height).unwrap();
    writeln!(s, "65535").unwrap();
    for row in img.pixels.chunks(img.width) {
        let mut line = String::new();
        for &v in row {
            let level = (v.max(0.0) / scale).round().min(MAXVAL) as u32;
            let tok = level.to_string();
            if !line.is_empty() && line.len() + 1 + tok.len() > 70 {
                s.push_str(&line);
                s.push('\n');
                line.clear();
            }
            if !line.is_empty() {
                line.push(' ');
            }
            line.push_str(&tok);
        }
        s.push_str(&line);
        s.push('\n');
    }
    s
}

pub fn write_pgm(img: &CloudImage, path: &Path) -> Result<()> {
    super::write_file(path, &pgm_string(img))
}

/// Read a P2 graymap, undoing `count_scale`. Header comments other than the
/// metadata line are skipped; missing metadata reads as 0 (scale 1).
pub fn read_pgm(path: &Path) -> Result<CloudImage> {
    let text = super::read_file(path)?;
    let bad = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let (mut pixel_size, mut expansion_time, mut scale) = (0.0, 0.0, 1.0);
    let mut tokens = Vec::new();
    for line in text.lines() {
        let (data, comment) = match line.split_once('#') {
            Some((d, c)) => (d, Some(c)),
            None => (line, None),
        };
        if let Some(c) = comment {
            for kv in c.split_whitespace() {
                if let Some((k, v)) = kv.split_once('=') {
                    let v: f64 = v.parse().map_err(|_| bad(format!("bad metadata {kv:?}")))?;
                    match k {
                        "pixel_size_m" => pixel_size = v,
                        "expansion_time_s" => expansion_time = v,
                        "count_scale" => scale = v,
                        _ => {}
                    }
                }
            }
        }
        tokens.extend(data.split_whitespace().map(str::to_string));
    }
    if tokens.first().map(String::as_str) != Some("P2") {
        return Err(bad("not a P2 graymap".into()));
    }
    let int = |i: usize| -> Result<usize> {
        tokens
            .get(i)
            .ok_or_else(|| bad("truncated header".into()))?
            .parse()
            .map_err(|_| bad(format!("bad header field {:?}", tokens[i])))
    };
    let (width, height, maxval) = (int(1)?, int(2)?, int(3)?);
    if maxval == 0 || maxval > 65535 {
        return Err(bad(format!("maxval {maxval} out of range")));
    }
    let body = &tokens[4..];
    if body.len() != width * height {
        return Err(bad(format!("expected {} pixels, found {}", width * height, body.len())));
    }
    let mut img = CloudImage::zeros(width, height, pixel_size);
    img.expansion_time = expansion_time;
    for (p, t) in img.pixels.iter_mut().zip(body) {
        let level: u32 = t.parse().map_err(|_| bad(format!("bad pixel {t:?}")))?;
        *p = level as f64 * scale;
    }
    Ok(img)
}
