//! Minimal deterministic SVG plotting: scatter plots, step curves and rug
//! marks on linear or log-y axes.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 50.0;

#[derive(Debug, Clone)]
enum Layer {
    Points { xy: Vec<(f64, f64)>, color: String },
    Step { xy: Vec<(f64, f64)>, color: String },
    Line { xy: Vec<(f64, f64)>, color: String },
    Rug { xs: Vec<f64>, color: String },
}

/// A single-panel plot. Coordinates are in data units; the y axis can be
/// logarithmic, in which case nonpositive y values are clamped to the floor.
#[derive(Debug, Clone)]
pub struct Plot {
    title: String,
    x_label: String,
    y_label: String,
    log_y: bool,
    layers: Vec<Layer>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    }
}

impl Plot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Plot {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            log_y: false,
            layers: Vec::new(),
        }
    }

    pub fn log_y(mut self, on: bool) -> Self {
        self.log_y = on;
        self
    }

    pub fn points(mut self, xy: Vec<(f64, f64)>, color: &str) -> Self {
        self.layers.push(Layer::Points { xy, color: color.into() });
        self
    }

    /// Filled step curve through `(x, y)` pairs with increasing `x`.
    pub fn step(mut self, xy: Vec<(f64, f64)>, color: &str) -> Self {
        self.layers.push(Layer::Step { xy, color: color.into() });
        self
    }

    pub fn line(mut self, xy: Vec<(f64, f64)>, color: &str) -> Self {
        self.layers.push(Layer::Line { xy, color: color.into() });
        self
    }

    pub fn rug(mut self, xs: Vec<f64>, color: &str) -> Self {
        self.layers.push(Layer::Rug { xs, color: color.into() });
        self
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Points { xy, .. } | Layer::Step { xy, .. } | Layer::Line { xy, .. } => {
                    for &(x, y) in xy {
                        if x.is_finite() {
                            xs.push(x);
                        }
                        if y.is_finite() && (!self.log_y || y > 0.0) {
                            ys.push(y);
                        }
                    }
                }
                Layer::Rug { xs: r, .. } => xs.extend(r.iter().copied().filter(|x| x.is_finite())),
            }
        }
        let span = |v: &[f64], default: (f64, f64)| {
            if v.is_empty() {
                return default;
            }
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                (lo, hi)
            } else {
                (lo - 0.5, hi + 0.5)
            }
        };
        let (x0, x1) = span(&xs, (0.0, 1.0));
        let (mut y0, mut y1) = span(&ys, if self.log_y { (1e-3, 1.0) } else { (0.0, 1.0) });
        if self.log_y {
            y0 = y0.max(y1 * 1e-12).log10();
            y1 = y1.log10();
            if y1 - y0 < 1e-9 {
                y0 -= 0.5;
                y1 += 0.5;
            }
        } else if y0 > 0.0 && !self.layers.iter().any(|l| matches!(l, Layer::Points { .. })) {
            y0 = 0.0;
        }
        (x0, x1, y0, y1)
    }

    pub fn render(&self) -> String {
        let (x0, x1, y0, y1) = self.bounds();
        let pw = WIDTH - MARGIN_L - MARGIN_R;
        let ph = HEIGHT - MARGIN_T - MARGIN_B;
        let log_y = self.log_y;
        let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| {
            let v = if log_y {
                if y > 0.0 { y.log10().max(y0) } else { y0 }
            } else {
                y
            };
            MARGIN_T + ph - (v - y0) / (y1 - y0) * ph
        };

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">
<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            WIDTH / 2.0,
            esc(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = x0 + f * (x1 - x0);
            let px = sx(xv);
            let _ = writeln!(
                s,
                r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                MARGIN_T + ph,
                MARGIN_T + ph + 5.0,
                MARGIN_T + ph + 18.0,
                fmt_tick(xv)
            );
            let yv = y0 + f * (y1 - y0);
            let py = MARGIN_T + ph - f * ph;
            let label = if log_y { format!("1e{yv:.1}") } else { fmt_tick(yv) };
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{py:.2}" x2="{MARGIN_L}" y2="{py:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"#,
                MARGIN_L - 5.0,
                MARGIN_L - 8.0,
                py + 4.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            MARGIN_L + pw / 2.0,
            HEIGHT - 10.0,
            esc(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            MARGIN_T + ph / 2.0,
            MARGIN_T + ph / 2.0,
            esc(&self.y_label)
        );

        for layer in &self.layers {
            match layer {
                Layer::Points { xy, color } => {
                    for &(x, y) in xy {
                        if !x.is_finite() || !y.is_finite() {
                            continue;
                        }
                        let _ = writeln!(
                            s,
                            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}" fill-opacity="0.8"/>"#,
                            sx(x),
                            sy(y)
                        );
                    }
                }
                Layer::Step { xy, color } => {
                    if xy.is_empty() {
                        continue;
                    }
                    let base = MARGIN_T + ph;
                    let mut d = format!("M{:.2},{base:.2}", sx(xy[0].0));
                    for (k, &(x, y)) in xy.iter().enumerate() {
                        let next = xy.get(k + 1).map(|p| p.0).unwrap_or(x);
                        let _ = write!(d, " L{:.2},{:.2} L{:.2},{:.2}", sx(x), sy(y), sx(next), sy(y));
                    }
                    let _ = write!(d, " L{:.2},{base:.2} Z", sx(xy[xy.len() - 1].0));
                    let _ = writeln!(
                        s,
                        r#"<path d="{d}" fill="{color}" fill-opacity="0.35" stroke="{color}" stroke-width="1"/>"#
                    );
                }
                Layer::Line { xy, color } => {
                    let pts: Vec<String> = xy
                        .iter()
                        .filter(|(x, y)| x.is_finite() && y.is_finite())
                        .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                        .collect();
                    let _ = writeln!(
                        s,
                        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                        pts.join(" ")
                    );
                }
                Layer::Rug { xs, color } => {
                    for &x in xs {
                        if !x.is_finite() {
                            continue;
                        }
                        let px = sx(x);
                        let _ = writeln!(
                            s,
                            r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/>"#,
                            MARGIN_T + ph,
                            MARGIN_T + ph - 14.0
                        );
                    }
                }
            }
        }
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_well_formed_document() {
        let svg = Plot::new("a < b", "x", "y")
            .log_y(true)
            .step(vec![(0.0, 1.0), (1.0, 0.0), (2.0, 0.1)], "steelblue")
            .rug(vec![1.5], "red")
            .points(vec![(0.5, 0.5)], "black")
            .line(vec![(0.0, 0.1), (2.0, 1.0)], "black")
            .render();
        assert!(svg.starts_with("<?xml"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt; b"));
        assert_eq!(svg.matches("<svg").count(), 1);
    }

    #[test]
    fn deterministic_output() {
        let p = Plot::new("t", "x", "y").points(vec![(1.0, 2.0), (3.0, 4.0)], "blue");
        assert_eq!(p.render(), p.render());
    }
}
