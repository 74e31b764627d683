//! Scatter plot of latent trajectories as a standalone SVG: points are
//! per-step z values colored from red (episode start) to blue (end),
//! stars mark the active subgoals.

use std::path::Path;

use anyhow::Result;

pub struct LatentPoint {
    pub z: [f64; 2],
    /// Normalized time within the episode, 0 at the start.
    pub t: f64,
}

pub struct LatentScatter {
    pub points: Vec<LatentPoint>,
    pub subgoals: Vec<[f64; 2]>,
}

const SIZE: f64 = 640.0;
const PAD: f64 = 40.0;

fn color(t: f64) -> String {
    // red -> blue through purple
    let r = (255.0 * (1.0 - t)) as u8;
    let b = (255.0 * t) as u8;
    format!("rgb({r},40,{b})")
}

fn star_path(cx: f64, cy: f64, r: f64) -> String {
    let mut d = String::new();
    for i in 0..10 {
        let angle = std::f64::consts::PI * (i as f64 / 5.0 - 0.5);
        let radius = if i % 2 == 0 { r } else { r * 0.45 };
        let (x, y) = (cx + radius * angle.cos(), cy + radius * angle.sin());
        d.push_str(if i == 0 { "M" } else { "L" });
        d.push_str(&format!("{x:.2},{y:.2}"));
    }
    d.push('Z');
    d
}

impl LatentScatter {
    pub fn write(&self, path: &Path) -> Result<()> {
        let all: Vec<[f64; 2]> = self
            .points
            .iter()
            .map(|p| p.z)
            .chain(self.subgoals.iter().copied())
            .collect();
        let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
        for p in &all {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        for d in 0..2 {
            if !lo[d].is_finite() || hi[d] - lo[d] < 1e-9 {
                lo[d] = -1.0;
                hi[d] = 1.0;
            }
        }
        let map = |p: [f64; 2]| {
            let x = PAD + (p[0] - lo[0]) / (hi[0] - lo[0]) * (SIZE - 2.0 * PAD);
            let y = SIZE - PAD - (p[1] - lo[1]) / (hi[1] - lo[1]) * (SIZE - 2.0 * PAD);
            (x, y)
        };
        let mut svg = String::new();
        svg.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n"
        ));
        svg.push_str(&format!(
            "<rect x=\"0\" y=\"0\" width=\"{SIZE}\" height=\"{SIZE}\" fill=\"white\" stroke=\"black\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"14\">z1</text>\n",
            SIZE / 2.0,
            SIZE - 10.0
        ));
        svg.push_str(&format!("<text x=\"10\" y=\"{}\" font-size=\"14\">z2</text>\n", SIZE / 2.0));
        for p in &self.points {
            let (x, y) = map(p.z);
            svg.push_str(&format!(
                "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"2.2\" fill=\"{}\" fill-opacity=\"0.7\"/>\n",
                color(p.t.clamp(0.0, 1.0))
            ));
        }
        for g in &self.subgoals {
            let (x, y) = map(*g);
            svg.push_str(&format!(
                "<path d=\"{}\" fill=\"gold\" stroke=\"black\" stroke-width=\"0.8\"/>\n",
                star_path(x, y, 9.0)
            ));
        }
        svg.push_str("</svg>\n");
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, svg)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_wellformed_svg() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plot.svg");
        let scatter = LatentScatter {
            points: (0..50)
                .map(|i| LatentPoint {
                    z: [(i as f64 * 0.3).sin(), (i as f64 * 0.2).cos()],
                    t: i as f64 / 49.0,
                })
                .collect(),
            subgoals: vec![[0.5, 0.5], [-0.2, 0.8]],
        };
        scatter.write(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("<svg"));
        assert!(text.ends_with("</svg>\n"));
        assert_eq!(text.matches("<circle").count(), 50);
        assert_eq!(text.matches("<path").count(), 2);
    }
}
