//! Minimal SVG line chart of the misfit history.

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;

/// `log10(misfit)` against Gauss-Newton step; non-positive values are skipped.
pub fn misfit_chart(misfits: &[f64]) -> String {
    let pts: Vec<(f64, f64)> =
        misfits.iter().enumerate().filter(|(_, m)| **m > 0.0).map(|(i, m)| (i as f64, m.log10())).collect();
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    if pts.is_empty() {
        out.push_str("</svg>\n");
        return out;
    }
    let x_max = pts.last().map_or(1.0, |p| p.0).max(1.0);
    let (y_lo, y_hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    let (y_lo, y_hi) = (y_lo.floor(), y_hi.ceil().max(y_lo.floor() + 1.0));
    let sx = |x: f64| PAD + x / x_max * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y_lo) / (y_hi - y_lo) * (H - 2.0 * PAD);

    out.push_str(&format!(
        "<line x1=\"{PAD}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n\
         <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{0}\" stroke=\"black\"/>\n",
        H - PAD,
        W - PAD
    ));
    let mut decade = y_lo;
    while decade <= y_hi {
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"end\">1e{}</text>\n",
            PAD - 6.0,
            sy(decade) + 4.0,
            decade as i64
        ));
        decade += 1.0;
    }
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">Gauss-Newton step</text>\n",
        W / 2.0,
        H - 12.0
    ));
    let line: Vec<String> = pts.iter().map(|(x, y)| format!("{:.1},{:.1}", sx(*x), sy(*y))).collect();
    out.push_str(&format!("<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"{}\"/>\n", line.join(" ")));
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_has_one_vertex_per_positive_value() {
        let svg = misfit_chart(&[10.0, 1.0, 0.0, 0.1]);
        let points = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(points.split(' ').count(), 3);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn empty_history_is_still_a_document() {
        assert!(misfit_chart(&[]).contains("</svg>"));
    }
}
