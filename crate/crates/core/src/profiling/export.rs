use std::io::{BufRead, Write};

use super::silhouette::SilhouetteReport;
use crate::error::{Error, Result};
use crate::toyworld::AugmentationType;

/// One delta meta token, tagged for external plotting tools.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub class_id: usize,
    pub augmentation: AugmentationType,
    pub epoch: usize,
    pub values: Vec<f64>,
}

/// Header: `class_id,augmentation,epoch,e0,...,e{d-1}`, then one row per record.
pub fn write_embeddings<W: Write>(w: &mut W, records: &[EmbeddingRecord]) -> Result<()> {
    let dim = records.first().map_or(0, |r| r.values.len());
    write!(w, "class_id,augmentation,epoch")?;
    for j in 0..dim {
        write!(w, ",e{j}")?;
    }
    writeln!(w)?;
    for r in records {
        if r.values.len() != dim {
            return Err(Error::InvalidArgument("embedding records differ in dimension".into()));
        }
        write!(w, "{},{},{}", r.class_id, r.augmentation, r.epoch)?;
        for v in &r.values {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_embeddings<R: BufRead>(r: R) -> Result<Vec<EmbeddingRecord>> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty embedding dump".into()))??;
    if !header.starts_with("class_id,augmentation,epoch") {
        return Err(Error::Format(format!("unexpected header '{header}'")));
    }
    let bad = |line: &str| Error::Format(format!("bad embedding row '{line}'"));
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        let mut fields = line.split(',');
        let class_id = fields.next().and_then(|f| f.parse().ok()).ok_or_else(|| bad(&line))?;
        let augmentation = fields.next().ok_or_else(|| bad(&line))?.parse()?;
        let epoch = fields.next().and_then(|f| f.parse().ok()).ok_or_else(|| bad(&line))?;
        let values = fields
            .map(|f| f.parse::<f64>().map_err(|_| bad(&line)))
            .collect::<Result<_>>()?;
        out.push(EmbeddingRecord {
            class_id,
            augmentation,
            epoch,
            values,
        });
    }
    Ok(out)
}

/// Header `augmentation,silhouette,count`; one row per profiled type and a
/// final `overall` row.
pub fn write_silhouette_report<W: Write>(w: &mut W, report: &SilhouetteReport) -> Result<()> {
    writeln!(w, "augmentation,silhouette,count")?;
    let mut total = 0;
    for (aug, score) in &report.per_type {
        writeln!(w, "{aug},{},{}", score.mean, score.count)?;
        total += score.count;
    }
    writeln!(w, "overall,{},{total}", report.overall)?;
    Ok(())
}
