use sensorsel_web::Demo;

fn field(json: &str, key: &str) -> serde_json::Value {
    serde_json::from_str::<serde_json::Value>(json).unwrap()[key].clone()
}

#[test]
fn operations_need_a_selection_first() {
    let demo = Demo::new(60, 0.5, 0.05, 1).unwrap();
    assert!(demo.invert(0).is_err());
    assert!(demo.pme(100).is_err());
}

#[test]
fn select_then_invert_and_decompose() {
    let mut demo = Demo::new(150, 0.8, 0.05, 2).unwrap();
    let sel = demo.select(2, 20).unwrap();
    let chosen = field(&sel, "chosen");
    assert!(chosen.as_array().unwrap().iter().any(|v| v == "z1"));
    assert!(field(&sel, "svg").as_str().unwrap().starts_with("<svg"));

    let inv = demo.invert(3).unwrap();
    let (lo, hi) = (field(&inv, "interval")[0].as_f64().unwrap(), field(&inv, "interval")[1].as_f64().unwrap());
    let map = field(&inv, "map").as_f64().unwrap();
    assert!(lo <= map && map <= hi);
    assert!(demo.invert(demo.test_rows()).is_err());

    let pme = demo.pme(2000).unwrap();
    let total: f64 = field(&pme, "shares").as_array().unwrap().iter().map(|s| s["percent"].as_f64().unwrap()).sum::<f64>()
        + field(&pme, "model_error").as_f64().unwrap();
    assert!((total - 100.0).abs() < 1e-9);
}

#[test]
fn invalid_parameters_are_reported() {
    assert!(Demo::new(50, 1.0, 0.05, 1).is_err());
    assert!(Demo::new(50, 0.5, -0.1, 1).is_err());
}
