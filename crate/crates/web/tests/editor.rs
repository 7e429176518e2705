use objfield::dataset::render_view_exact;
use objfield::session::{FramePayload, Orbit};
use objfield::{AnalyticScene, Field};
use objfield_web::Editor;

fn frame(json: &str) -> FramePayload {
    serde_json::from_str(json).unwrap()
}

#[test]
fn render_pick_and_edit() {
    let mut ed = Editor::new(32, 24).unwrap();
    assert_eq!(ed.num_objects(), 4);
    let plain = frame(&ed.render(40.0, 35.0, 4.0).unwrap());
    assert_eq!((plain.width, plain.height), (32, 32));

    let scene = AnalyticScene::toy3();
    let cam = Orbit { azimuth_deg: 40.0, elevation_deg: 35.0, radius: 4.0 }.camera(&scene.bounds(), 50.0, 32).unwrap();
    let exact = render_view_exact(&scene, &cam).unwrap().mask;
    let mut seen = std::collections::BTreeSet::new();
    for v in 1..31usize {
        for u in 1..31usize {
            let l = exact[v * 32 + u];
            if (0..3).all(|dv| (0..3).all(|du| exact[(v + dv - 1) * 32 + u + du - 1] == l)) {
                assert_eq!(ed.pick(u as u32, v as u32).unwrap(), l as u32, "pixel ({u}, {v})");
                seen.insert(l);
            }
        }
    }
    assert!(seen.len() >= 3, "{seen:?}");

    let same = frame(&ed.edit(3, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0).unwrap());
    assert!(same.applied);
    assert_eq!(same.color_png, plain.color_png);

    let moved = frame(&ed.edit(3, 0.3, 0.0, 0.0, 30.0, 0.0, 0.0, 0.9).unwrap());
    assert!(moved.applied);
    assert_ne!(moved.color_png, plain.color_png);
    assert_eq!(moved.edits.len(), 1);

    let hit = frame(&ed.manipulate(r#"{"target": 3, "translate": [-0.25, -0.45, -0.45]}"#).unwrap());
    assert!(!hit.applied);
    assert!(hit.collisions.iter().all(|c| c.target == 3 && c.occupying == 2));

    let once = frame(&ed.undo().unwrap());
    assert_eq!(once.edits.len(), 1);
    assert_eq!(once.color_png, plain.color_png);
    let back = frame(&ed.undo().unwrap());
    assert!(back.edits.is_empty());
    assert_eq!(back.color_png, plain.color_png);
}
