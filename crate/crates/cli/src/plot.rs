//! SVG projection of a tube chain: enclosure rectangles, zero level sets of
//! the certificates, the initial box and unsafe boxes.

use std::fmt::Write;

use prbt_core::pipeline::Segment;
use prbt_core::Hyperrect;

pub const GRID: usize = 200;
const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 48.0;

type Seg = ((f64, f64), (f64, f64));

/// Zero crossings of `f` over `[x0,x1] x [y0,y1]` sampled on an
/// `(n+1) x (n+1)` lattice, as line segments.
pub fn marching_squares(mut f: impl FnMut(f64, f64) -> f64, (x0, x1): (f64, f64), (y0, y1): (f64, f64), n: usize) -> Vec<Seg> {
    let xs: Vec<f64> = (0..=n).map(|i| x0 + (x1 - x0) * i as f64 / n as f64).collect();
    let ys: Vec<f64> = (0..=n).map(|j| y0 + (y1 - y0) * j as f64 / n as f64).collect();
    let v: Vec<Vec<f64>> = ys.iter().map(|&y| xs.iter().map(|&x| f(x, y)).collect()).collect();
    let lerp = |p: (f64, f64), q: (f64, f64), a: f64, b: f64| {
        let t = if a == b { 0.5 } else { a / (a - b) };
        (p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1))
    };
    let mut out = Vec::new();
    for j in 0..n {
        for i in 0..n {
            // corners counter-clockwise from bottom-left
            let pts = [(xs[i], ys[j]), (xs[i + 1], ys[j]), (xs[i + 1], ys[j + 1]), (xs[i], ys[j + 1])];
            let val = [v[j][i], v[j][i + 1], v[j + 1][i + 1], v[j + 1][i]];
            let pos: Vec<bool> = val.iter().map(|&z| z > 0.0).collect();
            let mut cut: [Option<(f64, f64)>; 4] = [None; 4];
            for e in 0..4 {
                let k = (e + 1) % 4;
                if pos[e] != pos[k] {
                    cut[e] = Some(lerp(pts[e], pts[k], val[e], val[k]));
                }
            }
            let hits: Vec<(f64, f64)> = cut.iter().flatten().copied().collect();
            match hits.len() {
                2 => out.push((hits[0], hits[1])),
                4 => {
                    let center = f(0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1])) > 0.0;
                    let [b, r, t, l] = cut.map(|c| c.expect("four crossings"));
                    if center == pos[0] {
                        out.push((b, r));
                        out.push((t, l));
                    } else {
                        out.push((l, b));
                        out.push((r, t));
                    }
                }
                _ => {}
            }
        }
    }
    out
}

struct View {
    x: (f64, f64),
    y: (f64, f64),
}

impl View {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }

    fn rect(&self, out: &mut String, b: &Hyperrect, (i, j): (usize, usize), style: &str) {
        let (x0, x1) = (self.px(b.lo(i)), self.px(b.hi(i)));
        let (y0, y1) = (self.py(b.hi(j)), self.py(b.lo(j)));
        let _ = writeln!(
            out,
            r#"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" {style}/>"#,
            x1 - x0,
            y1 - y0
        );
    }
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let w = hi - lo;
    let pad = if w > 0.0 { 0.05 * w } else { 0.5 * lo.abs().max(1.0) };
    (lo - pad, hi + pad)
}

/// Renders the projection on dimensions `(i, j)` (zero-based). Coordinates
/// outside the plotted pair are fixed at the center of each enclosure.
pub fn emit_svg(
    segments: &[Segment],
    init: &Hyperrect,
    unsafe_sets: &[&Hyperrect],
    dims: (usize, usize),
    names: (&str, &str),
) -> String {
    let (i, j) = dims;
    let all = segments
        .iter()
        .map(|s| &s.e)
        .chain(std::iter::once(init))
        .chain(unsafe_sets.iter().copied())
        .fold(init.clone(), |acc, b| acc.hull(b));
    let view = View { x: padded(all.lo(i), all.hi(i)), y: padded(all.lo(j), all.hi(j)) };
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let (fx0, fy0) = (MARGIN, MARGIN);
    let (fw, fh) = (WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN);
    let _ = writeln!(out, r#"<g id="axes" stroke="black" fill="none">"#);
    let _ = writeln!(out, r#"<rect x="{fx0:.2}" y="{fy0:.2}" width="{fw:.2}" height="{fh:.2}"/>"#);
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let xv = view.x.0 + t * (view.x.1 - view.x.0);
        let yv = view.y.0 + t * (view.y.1 - view.y.0);
        let (px, py) = (view.px(xv), view.py(yv));
        let _ = writeln!(out, r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}"/>"#, HEIGHT - MARGIN, HEIGHT - MARGIN + 4.0);
        let _ = writeln!(out, r#"<line x1="{:.2}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}"/>"#, MARGIN - 4.0, MARGIN);
        let _ = writeln!(out, r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle" stroke="none" fill="black">{xv:.4}</text>"#, HEIGHT - MARGIN + 16.0);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{py:.2}" text-anchor="end" stroke="none" fill="black">{yv:.4}</text>"#, MARGIN - 6.0);
    }
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" stroke="none" fill="black">{}</text>"#, WIDTH / 2.0, HEIGHT - 8.0, names.0);
    let _ = writeln!(out, r#"<text x="12" y="{:.2}" stroke="none" fill="black">{}</text>"#, HEIGHT / 2.0, names.1);
    let _ = writeln!(out, "</g>");
    for b in unsafe_sets {
        view.rect(&mut out, b, dims, r##"fill="#d62728" fill-opacity="0.3" stroke="#d62728""##);
    }
    view.rect(&mut out, init, dims, r##"fill="#2ca02c" fill-opacity="0.4" stroke="#2ca02c""##);
    for (k, s) in segments.iter().enumerate() {
        let _ = writeln!(out, r#"<g id="tube{k}">"#);
        view.rect(&mut out, &s.e, dims, r##"fill="none" stroke="#1f77b4""##);
        let mut x = s.e.center();
        for c in &s.certs {
            let segs = marching_squares(
                |a, b| {
                    x[i] = a;
                    x[j] = b;
                    c.b.eval_unchecked(&x)
                },
                (s.e.lo(i), s.e.hi(i)),
                (s.e.lo(j), s.e.hi(j)),
                GRID,
            );
            if segs.is_empty() {
                continue;
            }
            let mut d = String::new();
            for (p, q) in segs {
                let _ = write!(d, "M{:.2} {:.2}L{:.2} {:.2}", view.px(p.0), view.py(p.1), view.px(q.0), view.py(q.1));
            }
            let _ = writeln!(out, r##"<path d="{d}" fill="none" stroke="#ff7f0e" stroke-width="0.8"/>"##);
        }
        let _ = writeln!(out, "</g>");
    }
    out.push_str("</svg>\n");
    out
}
