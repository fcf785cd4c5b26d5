//! Dependency-free SVG emission: dataset scatter with the fitted CPWL
//! predictor (auxiliary segments dashed), and a risk-staircase panel for
//! enumeration tables.

use crate::cpwl::CpwlPredictor;
use crate::data::Dataset;
use crate::{Error, Result};

const COLORS: [&str; 6] = ["#1f6feb", "#d1242f", "#1a7f37", "#8250df", "#bf8700", "#0969da"];

struct Viewport {
    width: f64,
    height: f64,
    margin: f64,
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Viewport {
    fn new(width: f64, height: f64, xs: &[f64], ys: &[f64]) -> Viewport {
        let (mut x_min, mut x_max) = bounds(xs);
        let (mut y_min, mut y_max) = bounds(ys);
        if x_max - x_min < 1e-12 {
            x_min -= 1.0;
            x_max += 1.0;
        }
        if y_max - y_min < 1e-12 {
            y_min -= 1.0;
            y_max += 1.0;
        }
        Viewport { width, height, margin: 40.0, x_min, x_max, y_min, y_max }
    }

    fn sx(&self, x: f64) -> f64 {
        self.margin + (x - self.x_min) / (self.x_max - self.x_min) * (self.width - 2.0 * self.margin)
    }

    fn sy(&self, y: f64) -> f64 {
        // svg y grows downward
        self.height
            - self.margin
            - (y - self.y_min) / (self.y_max - self.y_min) * (self.height - 2.0 * self.margin)
    }
}

fn bounds(values: &[f64]) -> (f64, f64) {
    values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    })
}

fn fmt(v: f64) -> String {
    format!("{:.2}", v)
}

fn svg_open(width: f64, height: f64) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" \
         viewBox=\"0 0 {width} {height}\" width=\"{width}\" height=\"{height}\">\n"
    )
}

fn frame(vp: &Viewport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#888\" \
         stroke-width=\"1\"/>\n",
        fmt(vp.margin),
        fmt(vp.margin),
        fmt(vp.width - 2.0 * vp.margin),
        fmt(vp.height - 2.0 * vp.margin)
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"10\" fill=\"#444\">{:.3}</text>\n",
        fmt(vp.margin),
        fmt(vp.height - vp.margin + 14.0),
        vp.x_min
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"10\" fill=\"#444\" text-anchor=\"end\">{:.3}</text>\n",
        fmt(vp.width - vp.margin),
        fmt(vp.height - vp.margin + 14.0),
        vp.x_max
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"10\" fill=\"#444\">{:.3}</text>\n",
        fmt(4.0),
        fmt(vp.height - vp.margin),
        vp.y_min
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"10\" fill=\"#444\">{:.3}</text>\n",
        fmt(4.0),
        fmt(vp.margin + 4.0),
        vp.y_max
    ));
    out
}

/// Renders a 1-D dataset and its fitted predictor: samples as dots, one
/// CPWL polyline per output component, auxiliary segments overlaid dashed.
pub fn render_fit_svg(
    dataset: &Dataset,
    predictor: &CpwlPredictor,
    width: usize,
    height: usize,
) -> Result<String> {
    if dataset.dx() != 1 {
        return Err(Error::Argument("plotting requires dx = 1".into()));
    }
    let (width, height) = (width as f64, height as f64);
    let dy = predictor.dy();

    // polyline vertices: region edges (the function is affine in between)
    let mut edges: Vec<f64> = Vec::new();
    for region in &predictor.partition.regions {
        let (lo, hi) = region.interval_bounds()?;
        if edges.last().map_or(true, |&last| lo > last) {
            edges.push(lo);
        }
        edges.push(hi);
    }
    edges.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    edges.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let mut xs: Vec<f64> = dataset.samples().iter().map(|s| s.x[0]).collect();
    xs.extend(&edges);
    let mut ys: Vec<f64> = dataset.samples().iter().flat_map(|s| s.y.clone()).collect();
    for &x in &edges {
        ys.extend(predictor.eval(&[x]));
    }
    let vp = Viewport::new(width, height, &xs, &ys);

    let mut svg = svg_open(width, height);
    svg.push_str(&frame(&vp));

    for k in 0..dy {
        let color = COLORS[k % COLORS.len()];
        let points: Vec<String> = edges
            .iter()
            .map(|&x| {
                let y = predictor.eval(&[x])[k];
                format!("{},{}", fmt(vp.sx(x)), fmt(vp.sy(y)))
            })
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            points.join(" ")
        ));
        // dashed overlay on auxiliary spans
        for (r, region) in predictor.partition.regions.iter().enumerate() {
            if !predictor.partition.auxiliary[r] {
                continue;
            }
            let (lo, hi) = region.interval_bounds()?;
            let (ylo, yhi) = (predictor.eval(&[lo])[k], predictor.eval(&[hi])[k]);
            svg.push_str(&format!(
                "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#fff\" \
                 stroke-width=\"3\"/>\n",
                fmt(vp.sx(lo)),
                fmt(vp.sy(ylo)),
                fmt(vp.sx(hi)),
                fmt(vp.sy(yhi))
            ));
            svg.push_str(&format!(
                "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{color}\" \
                 stroke-width=\"2\" stroke-dasharray=\"6 4\"/>\n",
                fmt(vp.sx(lo)),
                fmt(vp.sy(ylo)),
                fmt(vp.sx(hi)),
                fmt(vp.sy(yhi))
            ));
        }
    }

    for s in dataset.samples() {
        for (k, &y) in s.y.iter().enumerate() {
            if k == 0 {
                svg.push_str(&format!(
                    "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"#24292f\"/>\n",
                    fmt(vp.sx(s.x[0])),
                    fmt(vp.sy(y))
                ));
            } else {
                svg.push_str(&format!(
                    "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{}\" fill-opacity=\"0.6\"/>\n",
                    fmt(vp.sx(s.x[0])),
                    fmt(vp.sy(y)),
                    COLORS[k % COLORS.len()]
                ));
            }
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Renders sorted enumeration risks as a staircase: one dot per fitting
/// pattern, horizontal runs are equal-risk plateaus.
pub fn render_risk_staircase_svg(risks: &[f64], width: usize, height: usize) -> Result<String> {
    if risks.is_empty() {
        return Err(Error::Argument("no risks to plot".into()));
    }
    let (width, height) = (width as f64, height as f64);
    let mut sorted = risks.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let idx: Vec<f64> = (0..sorted.len()).map(|i| i as f64).collect();
    let vp = Viewport::new(width, height, &idx, &sorted);

    let mut svg = svg_open(width, height);
    svg.push_str(&frame(&vp));
    let points: Vec<String> = sorted
        .iter()
        .enumerate()
        .map(|(i, &r)| format!("{},{}", fmt(vp.sx(i as f64)), fmt(vp.sy(r))))
        .collect();
    svg.push_str(&format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>\n",
        points.join(" "),
        COLORS[0]
    ));
    for (i, &r) in sorted.iter().enumerate() {
        svg.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{}\" r=\"2\" fill=\"#24292f\"/>\n",
            fmt(vp.sx(i as f64)),
            fmt(vp.sy(r))
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::build::BuildConfig;
    use crate::data::{gen_parabola, Loss};
    use crate::pipeline::build_1d_state;

    /// Minimal well-formedness scan: every opened tag closes, attributes
    /// quoted (single pass, no external parser).
    fn assert_well_formed(svg: &str) {
        let mut stack: Vec<String> = Vec::new();
        let mut rest = svg;
        while let Some(start) = rest.find('<') {
            rest = &rest[start + 1..];
            if let Some(stripped) = rest.strip_prefix('?') {
                rest = stripped;
                continue;
            }
            let end = rest.find('>').expect("unclosed tag");
            let tag = &rest[..end];
            rest = &rest[end + 1..];
            if let Some(name) = tag.strip_prefix('/') {
                assert_eq!(stack.pop().as_deref(), Some(name.trim()), "mismatched close");
            } else if !tag.ends_with('/') {
                let name: String =
                    tag.chars().take_while(|c| !c.is_whitespace()).collect();
                stack.push(name);
            }
            // attribute quotes must be balanced
            assert!(tag.matches('"').count() % 2 == 0, "unbalanced quotes in {tag}");
        }
        assert!(stack.is_empty(), "unclosed tags {stack:?}");
    }

    #[test]
    fn fit_panel_has_polyline_and_dots() {
        let ds = gen_parabola(40, -1.0, 1.0).unwrap();
        let state = build_1d_state(&ds, &[0.0], &Loss::Mse, &BuildConfig::default()).unwrap();
        let svg = render_fit_svg(&ds, &state.predictor, 640, 400).unwrap();
        assert_well_formed(&svg);
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert_eq!(svg.matches("<circle").count(), 40);
    }

    #[test]
    fn auxiliary_segments_render_dashed() {
        // parallel offset pieces force an auxiliary connector
        let ds = crate::data::parse_csv("x0,y0\n0,0\n0.25,0.25\n0.75,-9.25\n1,-9\n").unwrap();
        let state = build_1d_state(&ds, &[0.5], &Loss::Mse, &BuildConfig::default()).unwrap();
        assert!(state.predictor.partition.auxiliary.iter().any(|&a| a));
        let svg = render_fit_svg(&ds, &state.predictor, 640, 400).unwrap();
        assert_well_formed(&svg);
        assert!(svg.contains("stroke-dasharray"));
    }

    #[test]
    fn staircase_renders() {
        let svg = render_risk_staircase_svg(&[0.3, 0.1, 0.1, 0.2], 400, 300).unwrap();
        assert_well_formed(&svg);
        assert_eq!(svg.matches("<circle").count(), 4);
    }
}
