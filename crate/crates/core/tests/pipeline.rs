mod common;

use std::path::Path;

use facade_core::grammar::{derive_floors, emit_grammar, GrammarConfig, GrammarDoc};
use facade_core::instances::{extract_instances, ExtractConfig};
use facade_core::labelmap::{load_labelmap, save_labelmap, ClassPalette, ColorMatch, LabelMap};
use facade_core::mesh::{build_mesh, obj_string, MeshConfig, TemplateLibrary};
use facade_core::pipeline::{reconstruct, refine_map, PipelineConfig};
use facade_core::raster::clear_objects;
use serde::Deserialize;

use common::parse_obj;

#[derive(Deserialize)]
struct Expected {
    objects: std::collections::BTreeMap<String, usize>,
    door_box: [f64; 4],
    floors: Vec<ExpectedFloor>,
}

#[derive(Deserialize)]
struct ExpectedFloor {
    index: usize,
    classes: Vec<String>,
    window_x: Vec<f64>,
}

fn fixture_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures"))
}

fn ascii_map(name: &str, palette: &ClassPalette) -> LabelMap {
    let text = std::fs::read_to_string(fixture_dir().join(name)).unwrap();
    let rows: Vec<&str> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .collect();
    let id = |c: char| {
        let name = match c {
            'r' => "roof",
            '.' => "wall",
            'W' => "window",
            'D' => "door",
            'B' => "balcony",
            's' => "shop",
            'k' => "sky",
            other => panic!("unknown fixture symbol {other:?}"),
        };
        palette.id_of(name).unwrap()
    };
    let data = rows.iter().flat_map(|r| r.chars().map(id)).collect();
    LabelMap::from_vec(rows[0].len() as u32, rows.len() as u32, data).unwrap()
}

fn expected() -> Expected {
    serde_json::from_str(
        &std::fs::read_to_string(fixture_dir().join("uneven_rows.floors.json")).unwrap(),
    )
    .unwrap()
}

#[test]
fn hand_counted_objects() {
    let p = ClassPalette::ecp_default();
    let map = ascii_map("uneven_rows.txt", &p);
    let objects = extract_instances(&map, &p, &ExtractConfig::default());
    let exp = expected();
    for (class, n) in &exp.objects {
        let id = p.id_of(class).unwrap();
        assert_eq!(
            objects.iter().filter(|o| o.class_id == id).count(),
            *n,
            "{class}"
        );
    }
    assert_eq!(objects.len(), exp.objects.values().sum::<usize>());
    let door = objects
        .iter()
        .find(|o| o.class_id == p.id_of("door").unwrap())
        .unwrap();
    assert_eq!(door.edges(), exp.door_box);
    assert!(objects.iter().all(|o| !o.overlap));
}

#[test]
fn floors_match_hand_assignment() {
    let p = ClassPalette::ecp_default();
    let map = ascii_map("uneven_rows.txt", &p);
    let cfg = PipelineConfig::default();
    let r = refine_map(&map, &p, &cfg).unwrap();
    let floors = derive_floors(
        &r.layout.objects,
        &r.background,
        &p,
        &GrammarConfig::default(),
    )
    .unwrap();
    let exp = expected();
    assert_eq!(floors.len(), exp.floors.len());
    for (f, e) in floors.iter().zip(&exp.floors) {
        assert_eq!(f.index, e.index);
        let mut classes: Vec<String> = f.elements.iter().map(|el| el.class.clone()).collect();
        classes.sort();
        assert_eq!(classes, e.classes, "floor {}", f.index);
        let mut xs: Vec<f64> = f
            .elements
            .iter()
            .filter(|el| el.class == "window")
            .map(|el| el.x)
            .collect();
        xs.sort_by(f64::total_cmp);
        assert_eq!(xs.len(), e.window_x.len());
        for (x, ex) in xs.iter().zip(&e.window_x) {
            assert!(
                (x - ex).abs() < 1.0,
                "floor {} window x {x} vs {ex}",
                f.index
            );
        }
    }
    // ground floor is the lowest one in image space
    assert!(floors[0].y_bottom > floors[1].y_bottom && floors[1].y_bottom > floors[2].y_bottom);
}

#[test]
fn grammar_json_round_trip() {
    let p = ClassPalette::ecp_default();
    let map = ascii_map("uneven_rows.txt", &p);
    let objects = extract_instances(&map, &p, &ExtractConfig::default());
    let bg = clear_objects(&map, &p).unwrap();
    let doc = emit_grammar(&objects, &bg, None, &p, &GrammarConfig::default()).unwrap();
    let text = doc.to_json();
    let back = GrammarDoc::from_json(&text).unwrap();
    assert_eq!(back, doc);
    assert_eq!(back.to_json(), text);
    assert_eq!(doc.element_count(), objects.len());
}

#[test]
fn mesh_obj_parses_with_one_object_per_group() {
    let p = ClassPalette::ecp_default();
    let map = ascii_map("uneven_rows.txt", &p);
    let cfg = PipelineConfig::default();
    let r = reconstruct(&map, None, &p, &cfg, &TemplateLibrary::builtin(&cfg.mesh)).unwrap();
    let text = obj_string(&r.mesh.mesh, "model.mtl");
    let parsed = parse_obj(&text);
    assert_eq!(parsed.objects.len(), r.mesh.mesh.groups.len());
    assert_eq!(parsed.vertices.len(), r.mesh.mesh.vertices.len());
    assert_eq!(parsed.faces.len(), r.mesh.mesh.triangles.len());
    for f in &parsed.faces {
        assert!(f.iter().all(|&i| i >= 1 && i <= parsed.vertices.len()));
    }
    let names: Vec<&str> = parsed.objects.iter().map(|o| o.0.as_str()).collect();
    for floor in 0..3 {
        assert!(names.contains(&format!("floor_{floor}").as_str()));
    }
    assert!(names.contains(&"roof"));
    assert_eq!(
        names
            .iter()
            .filter(|n| n.starts_with("floor0_door_"))
            .count(),
        1
    );
    // rebuilding from the re-parsed grammar gives the same file
    let reparsed = GrammarDoc::from_json(&r.grammar.to_json()).unwrap();
    let mesh_cfg = MeshConfig::default();
    let again = build_mesh(&reparsed, &TemplateLibrary::builtin(&mesh_cfg), &mesh_cfg).unwrap();
    assert_eq!(obj_string(&again.mesh, "model.mtl"), text);
}

#[test]
fn png_round_trip_through_disk() {
    let p = ClassPalette::ecp_default();
    let map = ascii_map("uneven_rows.txt", &p);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("map.png");
    save_labelmap(&map, &p, &path).unwrap();
    assert_eq!(load_labelmap(&path, &p, ColorMatch::Exact).unwrap(), map);
}
