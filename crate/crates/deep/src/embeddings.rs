use std::path::Path;

use sc_harmon_core::io::write_lines;
use sc_harmon_core::CohortManifest;

use crate::config::ArchKind;
use crate::error::Result;
use crate::model::HarmonizerModel;

/// Encoder output for one `(subject, site)` record.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub subject_id: String,
    pub site_index: usize,
    /// `K` values; GAE embeddings are mean-pooled over nodes.
    pub values: Vec<f64>,
    /// Full row-major `N × K` GAE embedding, when requested.
    pub full: Option<Vec<f64>>,
}

/// One row per record of `cohort`, in manifest order.
pub fn export_embeddings(model: &HarmonizerModel, cohort: &CohortManifest, include_full: bool) -> Result<Vec<EmbeddingRow>> {
    let cfg = model.config();
    let k = cfg.embedding_dim;
    let mut rows = Vec::with_capacity(cohort.subjects.len());
    // Encode in chunks to bound the tape size.
    for chunk in cohort.subjects.chunks(64) {
        let ms: Vec<_> = chunk.iter().map(|r| &r.matrix).collect();
        for (rec, emb) in chunk.iter().zip(model.encode_batch(&ms)?) {
            let data = emb.values().data();
            let (values, full) = match cfg.kind {
                ArchKind::Fae => (data.to_vec(), None),
                ArchKind::Gae => {
                    let n = cfg.n_nodes;
                    let pooled = (0..k)
                        .map(|c| (0..n).map(|i| data[i * k + c]).sum::<f64>() / n as f64)
                        .collect();
                    (pooled, include_full.then(|| data.to_vec()))
                }
            };
            rows.push(EmbeddingRow {
                subject_id: rec.subject_id.clone(),
                site_index: rec.site.site_index,
                values,
                full,
            });
        }
    }
    Ok(rows)
}

/// CSV with columns `subject_id,site_index,e0..e{K-1}` plus
/// `n{i}_e{k}` columns when full GAE embeddings are present.
pub fn write_embeddings_csv(rows: &[EmbeddingRow], path: impl AsRef<Path>) -> Result<()> {
    let k = rows.first().map_or(0, |r| r.values.len());
    let full_len = rows.first().and_then(|r| r.full.as_ref()).map_or(0, Vec::len);
    let mut header = String::from("subject_id,site_index");
    for c in 0..k {
        header.push_str(&format!(",e{c}"));
    }
    if full_len > 0 && k > 0 {
        for i in 0..full_len / k {
            for c in 0..k {
                header.push_str(&format!(",n{i}_e{c}"));
            }
        }
    }
    let lines = rows.iter().map(|r| {
        let mut line = format!("{},{}", r.subject_id, r.site_index);
        for v in r.values.iter().chain(r.full.iter().flatten()) {
            line.push_str(&format!(",{v:e}"));
        }
        line
    });
    write_lines(path, &header, lines)?;
    Ok(())
}
