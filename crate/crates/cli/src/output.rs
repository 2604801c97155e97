//! Artifact writers: atomic files, JSON envelopes, CSV tables, OBJ point
//! clouds and a small log-log SVG plotter.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Writes `bytes` to a temporary file next to `path`, then renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Collects the files of one run under a single output directory.
pub struct Sink {
    pub dir: PathBuf,
    pub command: String,
    config_hash: String,
    written: Vec<PathBuf>,
}

impl Sink {
    pub fn new(cfg: &RunConfig, command: &str) -> Self {
        Sink { dir: cfg.output_dir(), command: command.into(), config_hash: cfg.hash(), written: Vec::new() }
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<PathBuf> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes)?;
        self.written.push(path.clone());
        Ok(path)
    }

    /// The JSON summary of a command, wrapped with the tool version and the
    /// configuration hash.
    pub fn envelope<T: Serialize>(&self, cfg: &RunConfig, passed: bool, result: &T) -> Value {
        json!({
            "tool": "gluelab",
            "version": VERSION,
            "command": self.command,
            "config_hash": self.config_hash,
            "config": cfg,
            "passed": passed,
            "result": result,
        })
    }

    pub fn json(&mut self, name: &str, value: &Value) -> std::io::Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).expect("json value serializes");
        text.push('\n');
        self.put(name, text.as_bytes())
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> std::io::Result<PathBuf> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        self.put(name, &bytes)
    }

    pub fn obj(&mut self, name: &str, comment: &str, vertices: &[[f64; 3]]) -> std::io::Result<PathBuf> {
        let mut text = format!("# {comment}\n");
        for v in vertices {
            text.push_str(&format!("v {} {} {}\n", num(v[0]), num(v[1]), num(v[2])));
        }
        self.put(name, text.as_bytes())
    }

    pub fn svg(&mut self, name: &str, plot: &LogLogPlot) -> std::io::Result<PathBuf> {
        self.put(name, plot.render().as_bytes())
    }
}

/// Shortest round-trip form of a float; scientific outside `[1e-4, 1e15)`.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Log-log line plot with a few series.
pub struct LogLogPlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

const COLORS: [&str; 4] = ["#1f5fa8", "#c0392b", "#2e8b57", "#7d3c98"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl LogLogPlot {
    pub fn render(&self) -> String {
        let (w, h, pad) = (640.0, 420.0, 60.0);
        let pts = self.series.iter().flat_map(|s| s.points.iter()).filter(|(x, y)| *x > 0.0 && *y > 0.0);
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts {
            x0 = x0.min(x.log10());
            x1 = x1.max(x.log10());
            y0 = y0.min(y.log10());
            y1 = y1.max(y.log10());
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 < 1e-12 {
            x1 = x0 + 1.0;
        }
        if y1 - y0 < 1e-12 {
            y1 = y0 + 1.0;
        }
        let sx = |x: f64| pad + (x.log10() - x0) / (x1 - x0) * (w - 2.0 * pad);
        let sy = |y: f64| h - pad - (y.log10() - y0) / (y1 - y0) * (h - 2.0 * pad);
        let mut out = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n\
             <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
             <rect x=\"{pad}\" y=\"{pad}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n\
             <text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
            w - 2.0 * pad,
            h - 2.0 * pad,
            w / 2.0,
            pad / 2.0,
            escape(&self.title),
            w / 2.0,
            h - 16.0,
            escape(&self.x_label),
            h / 2.0,
            h / 2.0,
            escape(&self.y_label),
        );
        // axis range labels
        out.push_str(&format!(
            "<text x=\"{pad}\" y=\"{}\" text-anchor=\"middle\">{:.3e}</text>\n<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{:.3e}</text>\n",
            h - pad + 16.0,
            10f64.powf(x0),
            w - pad,
            h - pad + 16.0,
            10f64.powf(x1)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3e}</text>\n<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3e}</text>\n",
            pad - 4.0,
            h - pad,
            10f64.powf(y0),
            pad - 4.0,
            pad + 4.0,
            10f64.powf(y1)
        ));
        for (i, s) in self.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let valid: Vec<(f64, f64)> = s.points.iter().cloned().filter(|(x, y)| *x > 0.0 && *y > 0.0).collect();
            if valid.len() > 1 {
                let path: Vec<String> = valid.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
                out.push_str(&format!(
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                    path.join(" ")
                ));
            }
            for &(x, y) in &valid {
                out.push_str(&format!("<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n", sx(x), sy(y)));
            }
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{}</text>\n",
                pad + 10.0,
                pad + 18.0 * (i as f64 + 1.0),
                escape(&s.label)
            ));
        }
        out.push_str("</svg>\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn csv_quotes_per_rfc4180() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig { output: dir.path().to_path_buf(), ..Default::default() };
        let mut sink = Sink::new(&cfg, "test");
        let p = sink.csv("t.csv", &["name", "value"], &[vec!["a,\"b\"".into(), num(0.1)]]).unwrap();
        assert_eq!(std::fs::read_to_string(p).unwrap(), "name,value\r\n\"a,\"\"b\"\"\",0.1\r\n");
    }

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, -2.5e-7, 1.0 / 3.0, 6.02e23, 0.0, 1e-4] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(num(1.5e-7), "1.5e-7");
        assert_eq!(num(0.25), "0.25");
    }

    #[test]
    fn svg_is_well_formed_for_degenerate_input() {
        let plot = LogLogPlot {
            title: "a < b".into(),
            x_label: "t".into(),
            y_label: "y".into(),
            series: vec![Series { label: "s".into(), points: vec![(1.0, 1.0)] }],
        };
        let s = plot.render();
        assert!(s.starts_with("<svg") && s.ends_with("</svg>\n"));
        assert!(s.contains("a &lt; b") && !s.contains("NaN"));
    }
}
