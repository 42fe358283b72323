use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use base64::Engine;

use crate::decade::Decade;

/// One input portrait and its renderings per decade.
#[derive(Debug, Clone)]
pub struct GalleryRow {
    pub label: String,
    pub input: PathBuf,
    pub outputs: Vec<(Decade, PathBuf)>,
}

#[derive(Debug, Clone, Default)]
pub struct Gallery {
    pub html: String,
    pub rows: usize,
    pub columns: usize,
    /// One entry per image that could not be read.
    pub warnings: Vec<String>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn cell(path: &Path, warnings: &mut Vec<String>) -> String {
    match std::fs::read(path) {
        Ok(bytes) => format!(
            r#"<td><img alt="" src="data:image/png;base64,{}"></td>"#,
            base64::engine::general_purpose::STANDARD.encode(bytes)
        ),
        Err(e) => {
            warnings.push(format!("{}: {e}", path.display()));
            r#"<td class="missing">missing</td>"#.to_string()
        }
    }
}

/// Self-contained HTML grid: one row per input, an input column plus one column per
/// decade, and a preformatted footer.
pub fn emit_gallery(rows: &[GalleryRow], decades: &[Decade], footer: &str) -> Gallery {
    let mut warnings = Vec::new();
    let mut h = String::from(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>gallery</title>\n<style>\
         table{border-collapse:collapse}td,th{border:1px solid #999;padding:2px}\
         img{width:96px;image-rendering:pixelated}.missing{background:#eee;color:#900}\
         </style></head><body>\n<table>\n<tr><th>input</th>",
    );
    for d in decades {
        let _ = write!(h, "<th>{d}</th>");
    }
    h.push_str("</tr>\n");
    for r in rows {
        let _ = write!(h, "<tr title=\"{}\">", escape(&r.label));
        h.push_str(&cell(&r.input, &mut warnings));
        for d in decades {
            match r.outputs.iter().find(|(od, _)| od == d) {
                Some((_, p)) => h.push_str(&cell(p, &mut warnings)),
                None => {
                    warnings.push(format!("{}: no output for {d}", r.label));
                    h.push_str(r#"<td class="missing">missing</td>"#);
                }
            }
        }
        h.push_str("</tr>\n");
    }
    let _ = write!(h, "</table>\n<pre>{}</pre>\n</body></html>\n", escape(footer));
    for w in &warnings {
        tracing::warn!("{w}");
    }
    Gallery {
        html: h,
        rows: rows.len(),
        columns: decades.len() + 1,
        warnings,
    }
}

/// Every `src`/`href` target that is not an inline data URI or fragment.
pub fn external_references(html: &str) -> Vec<String> {
    let mut out = Vec::new();
    for attr in ["src=\"", "href=\"", "url("] {
        let mut rest = html;
        while let Some(i) = rest.find(attr) {
            rest = &rest[i + attr.len()..];
            let end = rest.find(['"', ')']).unwrap_or(rest.len());
            let target = &rest[..end];
            if !(target.starts_with("data:") || target.starts_with('#')) {
                out.push(target.to_string());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;

    #[test]
    fn grid_layout_and_self_containment() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("a.png");
        Image::filled(4, 4, [0.2, -0.3, 0.9]).save_png(&img).unwrap();
        let decades: Vec<Decade> = [1900, 1910, 1920].map(|y| Decade::new(y).unwrap()).into();
        let rows: Vec<GalleryRow> = (0..2)
            .map(|i| GalleryRow {
                label: format!("p{i}"),
                input: img.clone(),
                outputs: decades.iter().map(|d| (*d, img.clone())).collect(),
            })
            .collect();
        let g = emit_gallery(&rows, &decades, "FID 1.0");
        assert_eq!((g.rows, g.columns), (2, 4));
        assert_eq!(g.html.matches("<tr title=").count(), 2);
        assert_eq!(g.html.matches("<img").count(), 8);
        assert!(external_references(&g.html).is_empty());
        assert!(g.warnings.is_empty());
    }

    #[test]
    fn missing_image_becomes_placeholder() {
        let d = Decade::new(1900).unwrap();
        let rows = vec![GalleryRow {
            label: "x".into(),
            input: "/nonexistent/in.png".into(),
            outputs: vec![],
        }];
        let g = emit_gallery(&rows, &[d], "");
        assert_eq!(g.warnings.len(), 2);
        assert_eq!(g.html.matches("class=\"missing\"").count(), 2);
    }

    #[test]
    fn empty_gallery_is_valid() {
        let g = emit_gallery(&[], &[], "");
        assert!(g.html.contains("</html>"));
        assert_eq!(g.rows, 0);
    }

    #[test]
    fn audit_flags_external_links() {
        let refs = external_references(r##"<img src="http://x/y.png"><a href="#top">"##);
        assert_eq!(refs, vec!["http://x/y.png".to_string()]);
    }
}
