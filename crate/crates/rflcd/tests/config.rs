use rflcd::cli::Cli;
use rflcd::config::{help_text, undocumented_keys, RunConfig, KEYS};
use rflcd::Error;
use rflcd_core::model::ModelConfig;

#[test]
fn every_key_is_documented_and_every_documented_key_exists() {
    let (missing_docs, stale) = undocumented_keys();
    assert!(missing_docs.is_empty(), "undocumented keys: {missing_docs:?}");
    assert!(stale.is_empty(), "documented keys that do not exist: {stale:?}");
}

#[test]
fn help_lists_every_key_with_its_default() {
    use clap::CommandFactory;
    let help = Cli::command().render_long_help().to_string();
    let defaults = RunConfig::default().entries();
    for (key, _) in KEYS {
        assert!(help.contains(key), "{key} missing from --help");
    }
    for (key, value) in defaults {
        assert!(help.contains(&format!("{key} = {value}")), "{key} = {value} missing from --help");
    }
    assert_eq!(help_text().lines().filter(|l| l.starts_with("  ") && l.contains(" = ")).count(), KEYS.len());
}

#[test]
fn defaults_survive_a_toml_round_trip() {
    let cfg = RunConfig::default();
    assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
}

#[test]
fn partial_files_fill_in_defaults() {
    let cfg = RunConfig::parse("[optim]\nepochs = 3\n").unwrap();
    assert_eq!(cfg.optim.epochs, 3);
    assert_eq!(cfg.optim.batch_size, RunConfig::default().optim.batch_size);
}

#[test]
fn unknown_keys_in_files_are_errors() {
    let e = RunConfig::parse("[optim]\nepoch = 3\n").unwrap_err();
    assert!(matches!(e, Error::Config(_)));
    assert!(e.to_string().contains("epoch"), "{e}");
    assert!(RunConfig::parse("[optimizer]\n").is_err());
}

#[test]
fn unknown_override_keys_name_the_key() {
    let e = RunConfig::default().with_overrides(&["model.lff=false"]).unwrap_err();
    assert!(e.to_string().contains("model.lff"), "{e}");
    assert_eq!(e.exit_code(), 1);
    assert!(RunConfig::default().with_overrides(&["model.lf"]).is_err());
}

#[test]
fn invalid_values_name_the_key() {
    for (item, key) in [
        ("optim.lr=-1", "optim.lr"),
        ("model.fusion=mean", "model.fusion"),
        ("data.val_fraction=1.5", "data.val_fraction"),
        ("model.c2fg_top=4", "model.c2fg_top"),
        ("optim.batch_size=0", "optim.batch_size"),
    ] {
        let e = RunConfig::default().with_overrides(&[item]).unwrap_err();
        assert!(e.to_string().contains(key), "{item}: {e}");
        assert_eq!(e.exit_code(), 1);
    }
}

#[test]
fn overrides_parse_typed_values_and_bare_paths() {
    let cfg = RunConfig::default()
        .with_overrides(&["optim.lr=0.01", "optim.epochs=3", "data.root=some/dir", "model.fusion=gwf", "data.augment=false"])
        .unwrap();
    assert_eq!(cfg.optim.lr, 0.01);
    assert_eq!(cfg.optim.epochs, 3);
    assert_eq!(cfg.data.root, std::path::PathBuf::from("some/dir"));
    assert_eq!(cfg.model.fusion, "gwf");
    assert!(cfg.augment_config().is_none());
}

#[test]
fn module_toggles_give_the_ablation_rows() {
    let ladder = ModelConfig::ablation_ladder(8);
    let rows = [
        vec!["model.lf=false", "model.c2fg=false", "model.dms=false"],
        vec!["model.lf=false", "model.c2fg=false"],
        vec!["model.lf=false"],
        vec![],
    ];
    for ((name, want), overrides) in ladder.iter().zip(rows) {
        let got = RunConfig::default().with_overrides(&overrides).unwrap().model_config().unwrap();
        assert_eq!(&got, want, "{name}");
    }
}

#[test]
fn default_schedule_halves_every_eight_epochs() {
    let s = RunConfig::default().schedule();
    assert_eq!([s.lr(0), s.lr(7), s.lr(8), s.lr(16)], [0.001, 0.001, 0.0005, 0.00025]);
}
