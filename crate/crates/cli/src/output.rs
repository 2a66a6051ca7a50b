use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use wakescan::eval::RocPoint;
use wakescan::synth::{read_truth_sidecar, GroundTruth};
use wakescan::Image;

/// Writes `path` through a temporary sibling and renames it into place, so a
/// reader never sees a half-written file.
pub fn write_atomic(
    path: &Path,
    fill: impl FnOnce(&mut dyn Write) -> wakescan::Result<()>,
) -> anyhow::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let tmp = tempfile::NamedTempFile::new_in(&dir).with_context(|| format!("writing into {}", dir.display()))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        fill(&mut w).with_context(|| format!("writing {}", path.display()))?;
        w.flush()?;
    }
    tmp.persist(path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    write_atomic(path, |w| Ok(w.write_all(text.as_bytes())?))
}

/// Files in `dir` whose names end with `suffix`, sorted by name.
pub fn list_files(dir: &Path, suffix: &str) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if path.is_file() && name.ends_with(suffix) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Every PGM in `dir` together with its truth sidecar.
pub fn load_scenes(dir: &Path) -> anyhow::Result<Vec<(Image, GroundTruth)>> {
    let mut scenes = Vec::new();
    for pgm in list_files(dir, ".pgm")? {
        if pgm.to_string_lossy().ends_with(".overlay.pgm") {
            continue;
        }
        let image = Image::read_pgm(&pgm).with_context(|| format!("reading {}", pgm.display()))?;
        let Some(truth) = read_truth_sidecar(&pgm)? else {
            bail!("{} has no truth sidecar", pgm.display());
        };
        scenes.push((image, truth));
    }
    if scenes.is_empty() {
        bail!("no scenes found in {}", dir.display());
    }
    Ok(scenes)
}

/// File-name friendly version of a scene id.
pub fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_' { c } else { '_' }).collect()
}

const COLORS: [&str; 7] = ["#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"];

/// Minimal ROC plot: one step curve per prior on the unit square.
pub fn roc_svg(curves: &[(String, Vec<RocPoint>)]) -> String {
    let (size, pad) = (400.0, 50.0);
    let px = |f: f64| pad + f * size;
    let py = |t: f64| pad + (1.0 - t) * size;
    let mut s = String::new();
    s += &format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{w}\" font-family=\"sans-serif\" font-size=\"12\">\n",
        w = size + 2.0 * pad
    );
    s += &format!(
        "<rect x=\"{pad}\" y=\"{pad}\" width=\"{size}\" height=\"{size}\" fill=\"none\" stroke=\"black\"/>\n"
    );
    s += &format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#bbb\" stroke-dasharray=\"4\"/>\n",
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        s += &format!("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{v:.2}</text>\n", px(v), py(0.0) + 18.0);
        s += &format!("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{v:.2}</text>\n", px(0.0) - 6.0, py(v) + 4.0);
    }
    s += &format!("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">false positive rate</text>\n", px(0.5), py(0.0) + 38.0);
    s += &format!(
        "<text x=\"14\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">true positive rate</text>\n",
        py(0.5),
        py(0.5)
    );
    for (i, (name, points)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let coords: Vec<String> = points.iter().map(|p| format!("{:.2},{:.2}", px(p.fpr), py(p.tpr))).collect();
        s += &format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            coords.join(" ")
        );
        for p in points {
            s += &format!("<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n", px(p.fpr), py(p.tpr));
        }
        let ly = pad + 16.0 + 16.0 * i as f64;
        s += &format!(
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            px(0.65),
            px(0.72)
        );
        s += &format!("<text x=\"{}\" y=\"{}\">{name}</text>\n", px(0.74), ly + 4.0);
    }
    s += "</svg>\n";
    s
}
