use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use super::image::decode_image;
use super::{Label, Sample, Split, SplitSet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const HEADER: [&str; 5] = ["id", "split", "image", "caption", "label"];

/// One validated manifest line. `image` is resolved against the manifest's
/// directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub line: usize,
    pub id: String,
    pub split: Split,
    pub image: PathBuf,
    pub caption: String,
    pub label: Label,
}

/// Target geometry for decoded images.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageOptions {
    pub height: usize,
    pub width: usize,
    pub center_crop_frac: f64,
}

fn load_err(path: &Path, row: usize, reason: impl fmt::Display) -> Error {
    Error::Load {
        path: path.to_path_buf(),
        row,
        reason: reason.to_string(),
    }
}

/// Parses and validates a manifest without decoding any image.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| load_err(path, 0, e))?;
    let header = reader.headers().map_err(|e| load_err(path, 1, e))?.clone();
    if header.iter().ne(HEADER) {
        return Err(load_err(
            path,
            1,
            format!("header must be `{}`", HEADER.join(",")),
        ));
    }
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            load_err(path, line, e)
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| record.get(i).unwrap_or("");
        let id = field(0).to_string();
        if id.is_empty() {
            return Err(load_err(path, line, "empty id"));
        }
        if !seen.insert(id.clone()) {
            return Err(load_err(path, line, format!("duplicate id `{id}`")));
        }
        let split: Split = field(1).parse().map_err(|e| load_err(path, line, e))?;
        let label: Label = field(4).parse().map_err(|e| load_err(path, line, e))?;
        let image = base.join(field(2));
        if !image.is_file() {
            return Err(load_err(
                path,
                line,
                format!("missing image file {}", image.display()),
            ));
        }
        rows.push(ManifestRow {
            line,
            id,
            split,
            image,
            caption: field(3).to_string(),
            label,
        });
    }
    Ok(rows)
}

/// Reads the manifest and decodes every image to the requested geometry.
pub fn load_manifest<T: Scalar>(path: &Path, opts: ImageOptions) -> Result<SplitSet<T>> {
    let mut set = SplitSet::default();
    for row in read_manifest(path)? {
        let image = decode_image(&row.image, opts.height, opts.width, opts.center_crop_frac)
            .map_err(|e| load_err(path, row.line, e))?;
        let sample = Sample {
            id: row.id,
            image,
            caption: row.caption,
            label: row.label,
        };
        set.split_mut(row.split).push(sample);
    }
    Ok(set)
}

pub(crate) fn write_manifest(path: &Path, rows: &[(String, Split, String, String, Label)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    let fmt_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(HEADER).map_err(fmt_err)?;
    for (id, split, image, caption, label) in rows {
        w.write_record([
            id.as_str(),
            split.as_str(),
            image.as_str(),
            caption.as_str(),
            label.as_str(),
        ])
        .map_err(fmt_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::image::RawImage;

    fn fixture(rows: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        RawImage::new(2, 2, 3, vec![200; 12])
            .unwrap()
            .write(&dir.path().join("a.ppm"))
            .unwrap();
        let path = dir.path().join("manifest.csv");
        std::fs::write(&path, format!("id,split,image,caption,label\n{rows}")).unwrap();
        (dir, path)
    }

    const OPTS: ImageOptions = ImageOptions {
        height: 2,
        width: 2,
        center_crop_frac: 1.0,
    };

    #[test]
    fn loads_quoted_and_empty_captions() {
        let (_dir, path) = fixture(
            "m1,train,a.ppm,\"hello, \"\"world\"\"\",troll\nm2,test,a.ppm,,non_troll\n",
        );
        let set: SplitSet<f32> = load_manifest(&path, OPTS).unwrap();
        assert_eq!(set.train[0].caption, "hello, \"world\"");
        assert_eq!(set.test[0].caption, "");
        assert_eq!(set.test[0].label, Label::NonTroll);
        assert_eq!(set.train[0].image.shape(), &[3, 2, 2]);
    }

    #[test]
    fn rejects_bad_rows_with_line_numbers() {
        let cases = [
            ("m1,train,a.ppm,x,troll\nm1,test,a.ppm,y,troll\n", 3, "duplicate"),
            ("m1,train,a.ppm,x,maybe\n", 2, "label"),
            ("m1,holdout,a.ppm,x,troll\n", 2, "split"),
            ("m1,train,b.ppm,x,troll\n", 2, "missing image"),
        ];
        for (rows, line, needle) in cases {
            let (_dir, path) = fixture(rows);
            match read_manifest(&path) {
                Err(Error::Load { row, reason, .. }) => {
                    assert_eq!(row, line, "{reason}");
                    assert!(reason.contains(needle), "{reason}");
                }
                other => panic!("expected load error, got {other:?}"),
            }
        }
    }

    #[test]
    fn rejects_wrong_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "id,image,caption,label\n").unwrap();
        assert!(matches!(read_manifest(&path), Err(Error::Load { row: 1, .. })));
    }

    #[test]
    fn undecodable_image_is_a_load_error() {
        let (dir, path) = fixture("m1,train,bad.ppm,x,troll\n");
        std::fs::write(dir.path().join("bad.ppm"), b"P6\n2 2\n1023\n").unwrap();
        assert!(matches!(
            load_manifest::<f32>(&path, OPTS),
            Err(Error::Load { row: 2, .. })
        ));
    }
}
