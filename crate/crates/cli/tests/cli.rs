use std::path::Path;
use std::process::{Command, Output};

use sobex_core::extension::{ExtensionMap, ExtensionOptions};
use sobex_core::geometry::{rasterize, Region, Shape};
use sobex_core::harness::{rasterize_spec, shape_grid};
use sobex_core::io;
use sobex_core::local::ScalarField;

fn sobex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sobex"))
        .args(args)
        .env_remove("SOBEX_JOBS")
        .output()
        .unwrap()
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn square_setup(dir: &Path) {
    write(
        &dir.join("square.json"),
        r#"{"prim":"box","lo":[0,0],"hi":[1,1]}"#,
    );
    write(
        &dir.join("square.cfg.json"),
        r#"{
            "name": "cli-square",
            "domains": [{"name": "square", "shape": "square.json"}],
            "p": 2,
            "levels": [0.0625, 0.03125],
            "seed": 3,
            "output": "out"
        }"#,
    );
}

#[test]
fn certify_passes_on_square() {
    let tmp = tempfile::tempdir().unwrap();
    square_setup(tmp.path());
    let cfg = tmp.path().join("square.cfg.json");
    let whitney = tmp.path().join("whitney.jsonl");
    let mask = tmp.path().join("mask.bin");
    let out = sobex(&[
        "certify",
        "--config",
        cfg.to_str().unwrap(),
        "--dump-whitney",
        whitney.to_str().unwrap(),
        "--dump-mask",
        mask.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(tmp.path().join("out/certify_square.json").exists());
    let lines = std::fs::read_to_string(&whitney).unwrap();
    assert!(lines.lines().count() > 100);
    let m = io::read_mask(&mask).unwrap();
    assert_eq!(m.grid().spacing, 0.03125);
    assert_eq!(m.cells(Region::Open).len(), 32 * 32);
}

#[test]
fn slit_disk_is_a_domain_flag() {
    let tmp = tempfile::tempdir().unwrap();
    write(
        &tmp.path().join("slit.json"),
        r#"{"op":"difference","args":[
            {"prim":"ball","c":[0,0],"r":1},
            {"prim":"box","lo":[0,-0.0001],"hi":[2,0.0001]}]}"#,
    );
    write(
        &tmp.path().join("cfg.json"),
        r#"{
            "name": "cli-slit",
            "domains": [{"name": "slit", "shape": "slit.json", "shift": [0, -0.5]}],
            "p": 2,
            "levels": [0.03125],
            "seed": 7,
            "quasiconvexity_pairs": 2000,
            "output": "out"
        }"#,
    );
    let out = sobex(&[
        "certify",
        "--config",
        tmp.path().join("cfg.json").to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn bad_input_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(sobex(&["certify"]).status.code(), Some(1));
    assert_eq!(sobex(&["frobnicate"]).status.code(), Some(1));
    let missing = tmp.path().join("nope.json");
    assert_eq!(
        sobex(&["norms", "--config", missing.to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );
    write(
        &tmp.path().join("bad.json"),
        r#"{"name": "x", "levels": [0.1, 0.2]}"#,
    );
    let bad = tmp.path().join("bad.json");
    assert_eq!(
        sobex(&["certify", "--config", bad.to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(sobex(&["--help"]).status.code(), Some(0));
}

#[test]
fn extend_matches_library() {
    let tmp = tempfile::tempdir().unwrap();
    let shape_path = tmp.path().join("square.json");
    write(&shape_path, r#"{"prim":"box","lo":[0,0],"hi":[1,1]}"#);
    let shape = Shape::load(&shape_path).unwrap();
    let h = 1.0 / 16.0;
    let mask = rasterize_spec(&shape, h, 3, &[]).unwrap();
    let u = ScalarField::sample_on(&mask, Region::Closed, |x| x[0] * x[0] - x[1]);
    let field = tmp.path().join("u.fld");
    io::write(&field, &io::encode_field(&u)).unwrap();
    let eu_path = tmp.path().join("eu.fld");
    let csv = tmp.path().join("eu.csv");
    let out = sobex(&[
        "extend",
        "--factor1",
        shape_path.to_str().unwrap(),
        "--field",
        field.to_str().unwrap(),
        "--out",
        eu_path.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let eu = io::read_field(&eu_path).unwrap();
    let grid = shape_grid(&shape, h, 3, &[]).unwrap();
    let map = ExtensionMap::build(
        &rasterize(&shape, &grid).unwrap(),
        &ExtensionOptions::default(),
    )
    .unwrap();
    assert_eq!(eu, map.apply(&u).unwrap());
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("x,y,value"));
    assert_eq!(text.lines().count(), eu.values.len() + 1);
}

#[test]
fn product_command_writes_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let iv = tmp.path().join("interval.json");
    write(&iv, r#"{"prim":"box","lo":[0],"hi":[1]}"#);
    let out_dir = tmp.path().join("out");
    let out = sobex(&[
        "--jobs",
        "2",
        "product",
        "--factor1",
        iv.to_str().unwrap(),
        "--factor2",
        iv.to_str().unwrap(),
        "--levels",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let table = std::fs::read_to_string(out_dir.join("product.csv")).unwrap();
    assert!(table.starts_with("schema_version,"));
    assert!(table.lines().count() > 2);
}
