//! Detection dump text format: one box per line,
//! `image_id class score x_min y_min x_max y_max`, floats with 6 decimals.

use std::fmt::Write;

use super::{BBox, DetectionBox};
use crate::error::{Error, Result};

pub fn write_detections(out: &mut String, image_id: usize, dets: &[DetectionBox]) {
    for d in dets {
        let b = d.bounds;
        writeln!(
            out,
            "{image_id} {} {:.6} {:.6} {:.6} {:.6} {:.6}",
            d.class_idx, d.score, b.x_min, b.y_min, b.x_max, b.y_max
        )
        .expect("writing to a String");
    }
}

pub fn parse_detections(text: &str) -> Result<Vec<(usize, DetectionBox)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || Error::Format(format!("detection line {}: `{line}`", n + 1));
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 7 {
            return Err(bad());
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
        let image_id = f[0].parse().map_err(|_| bad())?;
        let class_idx = f[1].parse().map_err(|_| bad())?;
        out.push((
            image_id,
            DetectionBox {
                class_idx,
                score: num(2)?,
                bounds: BBox::new(num(3)?, num(4)?, num(5)?, num(6)?),
            },
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_point_line() {
        let mut s = String::new();
        let d = DetectionBox {
            bounds: BBox::new(1.0, 2.5, 3.25, 4.0),
            class_idx: 2,
            score: 0.5,
        };
        write_detections(&mut s, 7, &[d]);
        assert_eq!(s, "7 2 0.500000 1.000000 2.500000 3.250000 4.000000\n");
        assert_eq!(parse_detections(&s).unwrap(), vec![(7, d)]);
        assert!(parse_detections("1 2 3").is_err());
    }
}
