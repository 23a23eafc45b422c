use std::path::Path;

#[test]
fn shipped_configs_resolve() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut count = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = skt_sim::load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.resolve().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            count += 1;
        }
    }
    assert!(count >= 3);
}

#[test]
fn full_config_matches_preset() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let full = skt_sim::load_config(&dir.join("two_species_full.toml")).unwrap();
    let preset = skt_sim::presets::preset_config("skt-two-species", &Default::default()).unwrap();
    assert_eq!(full.coefficients, preset.coefficients);
    assert_eq!(full.grid, preset.grid);
    assert_eq!(full.scheme, preset.scheme);
    assert_eq!(full.initial, preset.initial);
}
