//! xBD polygon annotations and their rasterisation into class maps.

use std::str::FromStr;

use serde_json::Value;
use wkt::Wkt;

use crate::raster::LabelMap;

/// A building footprint: outer ring first, then holes. Coordinates in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Annotation {
    pub grade: u8,
    pub rings: Vec<Vec<[f64; 2]>>,
}

/// Parsed annotation file; `skipped` counts malformed records.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Annotations {
    pub polygons: Vec<Annotation>,
    pub skipped: usize,
}

/// Damage grade for an xBD subtype. Pre-disaster files carry no subtype and
/// mark every building as grade 1.
pub fn grade_of_subtype(subtype: Option<&str>) -> Option<u8> {
    match subtype {
        None | Some("no-damage") | Some("un-classified") => Some(1),
        Some("minor-damage") => Some(2),
        Some("major-damage") => Some(3),
        Some("destroyed") => Some(4),
        Some(_) => None,
    }
}

fn polygons_of(wkt: &Wkt<f64>) -> Option<Vec<Vec<Vec<[f64; 2]>>>> {
    let to_rings = |p: &wkt::types::Polygon<f64>| -> Vec<Vec<[f64; 2]>> {
        p.rings()
            .iter()
            .map(|r| r.coords().iter().map(|c| [c.x, c.y]).collect())
            .collect()
    };
    match wkt {
        Wkt::Polygon(p) => Some(vec![to_rings(p)]),
        Wkt::MultiPolygon(mp) => Some(mp.polygons().iter().map(to_rings).collect()),
        _ => None,
    }
}

/// Parses an xBD label document (`features.xy[*]` with `wkt` and
/// `properties.subtype`). Records with bad geometry or unknown subtypes are
/// skipped and counted.
pub fn parse_annotations(doc: &Value) -> Annotations {
    let mut out = Annotations::default();
    let Some(features) = doc.pointer("/features/xy").and_then(Value::as_array) else {
        return out;
    };
    for f in features {
        let props = f.get("properties");
        let kind = props.and_then(|p| p.get("feature_type")).and_then(Value::as_str);
        if kind.is_some_and(|k| k != "building") {
            continue;
        }
        let subtype = props.and_then(|p| p.get("subtype")).and_then(Value::as_str);
        let parsed = f
            .get("wkt")
            .and_then(Value::as_str)
            .and_then(|s| Wkt::<f64>::from_str(s).ok())
            .and_then(|w| polygons_of(&w));
        match (grade_of_subtype(subtype), parsed) {
            (Some(grade), Some(polys)) if polys.iter().all(|p| p.first().is_some_and(|r| r.len() >= 3)) => {
                out.polygons
                    .extend(polys.into_iter().map(|rings| Annotation { grade, rings }));
            }
            _ => out.skipped += 1,
        }
    }
    if out.skipped > 0 {
        log::warn!("skipped {} malformed annotation records", out.skipped);
    }
    out
}

/// Fills polygons in order, later ones overwriting earlier ones. A pixel is
/// inside when its centre is inside under the even-odd rule; parts outside
/// the canvas are clipped.
pub fn rasterize_labels(polygons: &[Annotation], width: usize, height: usize) -> LabelMap {
    let mut map = LabelMap::filled(width, height, 0);
    let mut xs: Vec<f64> = Vec::new();
    for poly in polygons {
        let (ymin, ymax) = poly
            .rings
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[1]), hi.max(p[1])));
        if !ymin.is_finite() {
            continue;
        }
        let row_lo = (ymin - 0.5).ceil().max(0.0) as usize;
        let row_hi = ((ymax - 0.5).floor() + 1.0).clamp(0.0, height as f64) as usize;
        for row in row_lo..row_hi {
            let yc = row as f64 + 0.5;
            xs.clear();
            for ring in &poly.rings {
                let n = ring.len();
                for i in 0..n {
                    let (a, b) = (ring[i], ring[(i + 1) % n]);
                    if (a[1] <= yc) != (b[1] <= yc) {
                        xs.push(a[0] + (yc - a[1]) * (b[0] - a[0]) / (b[1] - a[1]));
                    }
                }
            }
            xs.sort_by(f64::total_cmp);
            for span in xs.chunks_exact(2) {
                // Pixel x is inside iff span[0] < x + 0.5 < span[1].
                let lo = (span[0] - 0.5).floor() + 1.0;
                let hi = (span[1] - 0.5).ceil();
                let lo = lo.max(0.0) as usize;
                let hi = hi.clamp(0.0, width as f64) as usize;
                for x in lo..hi {
                    map.set(x, row, poly.grade);
                }
            }
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn inside(rings: &[Vec<[f64; 2]>], x: f64, y: f64) -> bool {
        let mut c = false;
        for ring in rings {
            let n = ring.len();
            for i in 0..n {
                let (a, b) = (ring[i], ring[(i + 1) % n]);
                if (a[1] <= y) != (b[1] <= y) && x < a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1]) {
                    c = !c;
                }
            }
        }
        c
    }

    #[test]
    fn empty_list_gives_background() {
        assert_eq!(rasterize_labels(&[], 8, 4).max_value(), 0);
    }

    #[test]
    fn full_image_polygon_fills_everything() {
        let p = Annotation {
            grade: 3,
            rings: vec![vec![[0.0, 0.0], [16.0, 0.0], [16.0, 16.0], [0.0, 16.0]]],
        };
        let m = rasterize_labels(&[p], 16, 16);
        assert!(m.data().iter().all(|&v| v == 3));
    }

    #[test]
    fn overlap_takes_later_grade_and_matches_point_test() {
        let a = Annotation {
            grade: 2,
            rings: vec![vec![[1.2, 1.0], [11.3, 2.1], [9.0, 12.7], [0.4, 9.9]]],
        };
        let b = Annotation {
            grade: 4,
            rings: vec![
                vec![[6.0, 4.5], [15.5, 6.2], [13.1, 15.8], [5.2, 14.0]],
                vec![[9.0, 8.0], [11.0, 8.0], [11.0, 11.0], [9.0, 11.0]],
            ],
        };
        let m = rasterize_labels(&[a.clone(), b.clone()], 16, 16);
        for y in 0..16 {
            for x in 0..16 {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let want = if inside(&b.rings, px, py) {
                    4
                } else if inside(&a.rings, px, py) {
                    2
                } else {
                    0
                };
                assert_eq!(m.get(x, y), want, "pixel ({x}, {y})");
            }
        }
    }

    #[test]
    fn out_of_bounds_polygon_is_clipped() {
        let p = Annotation {
            grade: 1,
            rings: vec![vec![[-5.0, -5.0], [4.0, -5.0], [4.0, 4.0], [-5.0, 4.0]]],
        };
        let m = rasterize_labels(&[p], 8, 8);
        assert_eq!(m.histogram(2)[1], 16);
    }

    #[test]
    fn parser_reads_grades_and_counts_bad_records() {
        let doc = json!({"features": {"xy": [
            {"properties": {"feature_type": "building", "subtype": "destroyed"},
             "wkt": "POLYGON ((0 0, 4 0, 4 4, 0 4, 0 0))"},
            {"properties": {"feature_type": "building"},
             "wkt": "POLYGON ((1 1, 2 1, 2 2, 1 1))"},
            {"properties": {"feature_type": "building", "subtype": "minor-damage"},
             "wkt": "POLYGON ((0 0, 4 0"},
            {"properties": {"feature_type": "building", "subtype": "bogus"},
             "wkt": "POLYGON ((0 0, 4 0, 4 4, 0 0))"},
            {"properties": {"feature_type": "building", "subtype": "major-damage"},
             "wkt": "MULTIPOLYGON (((0 0, 1 0, 1 1, 0 0)), ((2 2, 3 2, 3 3, 2 2)))"}
        ]}});
        let a = parse_annotations(&doc);
        let grades: Vec<u8> = a.polygons.iter().map(|p| p.grade).collect();
        assert_eq!(grades, vec![4, 1, 3, 3]);
        assert_eq!(a.skipped, 2);
    }
}
