#![allow(dead_code)]

use std::collections::BTreeMap;

use facade_core::grammar::{Band, BandKind, Element, Floor, GrammarDoc, GRAMMAR_VERSION};
use facade_core::labelmap::ClassPalette;
use facade_core::synth::SynthSpec;
use rand::Rng;

/// A random facade layout that stays valid under jitter `sigma`.
pub fn random_spec(rng: &mut impl Rng, sigma: f64, seed: u64) -> SynthSpec {
    let palette = ClassPalette::ecp_default();
    let m = (4.5 * sigma).ceil() as u32 + 1;
    let min_side = (3.0 * sigma).ceil() as u32 + 3;
    loop {
        let w = rng.random_range(min_side.max(6)..=20);
        let h = rng.random_range(min_side.max(10)..=30);
        let balcony_height = rng.random_range(min_side.max(4)..=min_side.max(4) + 4);
        let balconies = rng.random_bool(0.6);
        let door = rng.random_bool(0.7);
        let sx = w + 4 + 2 * m + 1 + rng.random_range(0..12);
        let sy = h + balcony_height + 2 * m + 2 + rng.random_range(0..12);
        let rows = rng.random_range(2..=5);
        let cols = rng.random_range(2..=6);
        let door_size = [
            rng.random_range(min_side.max(12)..=24),
            rng.random_range(min_side.max(24)..=40),
        ];
        let ground_height = if door {
            door_size[1] + 2 * m + 6
        } else {
            m + 4
        };
        let roof_height = rng.random_range(6..=30);
        let shop_height = if rng.random_bool(0.3) {
            rng.random_range(10..=30)
        } else {
            0
        };
        let spec = SynthSpec {
            width: cols * sx + 2 * (m + 4) + rng.random_range(0..20),
            height: roof_height
                + rows * sy
                + ground_height
                + shop_height
                + 2 * m
                + rng.random_range(0..20),
            rows,
            cols,
            window_size: [w, h],
            spacing: [sx, sy],
            jitter: sigma,
            occlusion: 0.0,
            door,
            door_size,
            balconies,
            balcony_height,
            roof_height,
            shop_height,
            ground_height,
            seed,
        };
        if spec.layout(&palette).is_ok() {
            return spec;
        }
    }
}

/// A random grammar with windows, doors and balconies on every floor.
pub fn random_grammar(rng: &mut impl Rng) -> GrammarDoc {
    let width = rng.random_range(60..300u32);
    let floors_n = rng.random_range(1..=5usize);
    let roof = if rng.random_bool(0.7) {
        rng.random_range(5..30)
    } else {
        0
    };
    let shop = if rng.random_bool(0.4) {
        rng.random_range(10..40)
    } else {
        0
    };
    let floor_h: Vec<u32> = (0..floors_n).map(|_| rng.random_range(30..80)).collect();
    let height = roof + shop + floor_h.iter().sum::<u32>();
    let mut bands = Vec::new();
    if roof > 0 {
        bands.push(Band {
            kind: BandKind::Roof,
            y_top: 0.0,
            y_bottom: roof as f64,
        });
    }
    bands.push(Band {
        kind: BandKind::Wall,
        y_top: roof as f64,
        y_bottom: (height - shop) as f64,
    });
    if shop > 0 {
        bands.push(Band {
            kind: BandKind::Shop,
            y_top: (height - shop) as f64,
            y_bottom: height as f64,
        });
    }
    let mut floors = Vec::new();
    let mut y_bottom = (height - shop) as f64;
    for (index, fh) in floor_h.iter().enumerate() {
        let y_top = y_bottom - *fh as f64;
        let n = rng.random_range(0..6);
        let elements = (0..n)
            .map(|_| {
                let class = ["window", "window", "door", "balcony"][rng.random_range(0..4)];
                let w = rng.random_range(2.0..(width as f64 / 4.0));
                let h = rng.random_range(2.0..(*fh as f64 * 0.8));
                Element {
                    class: class.to_string(),
                    x: rng.random_range(w / 2.0..width as f64 - w / 2.0),
                    y: rng.random_range(y_top + h / 2.0..y_bottom - h / 2.0),
                    w,
                    h,
                }
            })
            .collect();
        floors.push(Floor {
            index,
            y_top,
            y_bottom,
            elements,
        });
        y_bottom = y_top;
    }
    let mut materials = BTreeMap::new();
    for name in ["wall", "window", "door", "balcony", "roof", "shop"] {
        materials.insert(
            name.to_string(),
            [
                rng.random_range(0.0..=255.0),
                rng.random_range(0.0..=255.0),
                rng.random_range(0.0..=255.0),
            ],
        );
    }
    GrammarDoc {
        version: GRAMMAR_VERSION.to_string(),
        extent: [width, height],
        pixel_scale: rng.random_range(0.01..0.1),
        floor_rule: "window-rows".into(),
        materials,
        bands,
        floors,
    }
}

/// Minimal Wavefront reader: named objects with their vertices and faces
/// (indices 1-based, global).
#[derive(Debug, Default)]
pub struct ParsedObj {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
    /// (name, material, vertex range)
    pub objects: Vec<(String, String, std::ops::Range<usize>)>,
}

pub fn parse_obj(text: &str) -> ParsedObj {
    let mut out = ParsedObj::default();
    for line in text.lines() {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("o") => {
                let name = parts.next().expect("object name").to_string();
                let n = out.vertices.len();
                out.objects.push((name, String::new(), n..n));
            }
            Some("usemtl") => {
                let material = parts.next().expect("material name").to_string();
                if let Some(o) = out.objects.last_mut() {
                    o.1 = material;
                }
            }
            Some("v") => {
                let v: Vec<f64> = parts.map(|p| p.parse().expect("float")).collect();
                assert_eq!(v.len(), 3, "vertex arity");
                out.vertices.push([v[0], v[1], v[2]]);
                if let Some(o) = out.objects.last_mut() {
                    o.2.end = out.vertices.len();
                }
            }
            Some("f") => {
                let f: Vec<usize> = parts.map(|p| p.parse().expect("index")).collect();
                assert_eq!(f.len(), 3, "face arity");
                out.faces.push([f[0], f[1], f[2]]);
            }
            _ => {}
        }
    }
    out
}
