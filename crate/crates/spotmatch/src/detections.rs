//! Detections as CSV with header `video_id,frame,class,score`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use spotmatch_core::eval::Detection;

use crate::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    video_id: usize,
    frame: usize,
    class: usize,
    score: f64,
}

pub fn write(path: &Path, dets: &[Detection]) -> Result<()> {
    let csv_err = |source| Error::Csv { path: path.into(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for d in dets {
        w.serialize(Row { video_id: d.video, frame: d.frame, class: d.class, score: d.score })
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Vec<Detection>> {
    if !path.exists() {
        return Err(Error::Missing(path.display().to_string()));
    }
    let csv_err = |source| Error::Csv { path: path.into(), source };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = r.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["video_id", "frame", "class", "score"] {
        return Err(Error::format(path, "expected header video_id,frame,class,score"));
    }
    let mut out = Vec::new();
    for row in r.deserialize() {
        let row: Row = row.map_err(csv_err)?;
        if !(row.score > 0.0 && row.score <= 1.0) || row.frame == 0 {
            return Err(Error::format(path, format!("invalid detection {row:?}")));
        }
        out.push(Detection { video: row.video_id, frame: row.frame, class: row.class, score: row.score });
    }
    Ok(out)
}
