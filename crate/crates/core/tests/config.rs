use kdv_delay::config::*;
use kdv_delay::model::DelayKind;
use kdv_delay::simulate::{DelayChannel, IcKind, InitialHistory};
use kdv_delay::Error;

#[test]
fn empty_document_is_the_default() {
    let c = Config::from_toml_str("").unwrap();
    assert_eq!(c, Config::default());
    assert_eq!(c.ic.history, "zero");
    assert_eq!(Config::figure_one().ic.history, "trace");
}

#[test]
fn figure_one_round_trips() {
    let c = Config::figure_one();
    let back = Config::from_toml_str(&c.to_toml_string()).unwrap();
    assert_eq!(back, c);
    let s = c.setup().unwrap();
    assert_eq!((s.grid.nx, s.rho.nrho), (256, 256));
    assert_eq!(s.ic.kind, IcKind::Sine);
    assert_eq!(s.ic.history, InitialHistory::Trace);
    assert_eq!(s.scheme.channel, DelayChannel::Transport);
    assert_eq!(s.scheme.horizon, 600.0);
    let p = c.problem().unwrap();
    assert_eq!((p.alpha, p.beta, p.d, p.l, p.m), (1.0, 0.5, 0.5, 5.0, 3.0));
}

#[test]
fn unknown_keys_are_rejected() {
    for text in ["nx = 3", "[grid]\nnz = 3", "[physics]\nx = 1"] {
        assert!(
            matches!(Config::from_toml_str(text), Err(Error::Config(_))),
            "{text}"
        );
    }
}

#[test]
fn version_is_checked() {
    assert!(Config::from_toml_str("version = 1").is_ok());
    let err = Config::from_toml_str("version = 2").unwrap_err();
    assert!(err.to_string().contains("version"));
}

#[test]
fn overrides_apply_in_order() {
    let ov: Vec<String> = [
        "gains.alpha=2.5",
        "scheme.channel=history",
        "grid.nx=64",
        "grid.nx=32",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let c = Config::from_toml_with_overrides("", &ov).unwrap();
    assert_eq!(c.gains.alpha, 2.5);
    assert_eq!(c.scheme.channel, "history");
    assert_eq!(c.grid.nx, 32);
    let bad = |o: &str| Config::from_toml_with_overrides("", &[o.to_string()]);
    assert!(bad("gains.alpha").is_err());
    assert!(bad("gains..alpha=1").is_err());
    assert!(bad("gains.gamma=1").is_err());
    assert!(bad("grid.nx=fine").is_err());
}

#[test]
fn resolution_presets() {
    assert_eq!(resolution_preset("coarse").unwrap(), 128);
    assert_eq!(resolution_preset("reference").unwrap(), 256);
    assert_eq!(resolution_preset("fine").unwrap(), 512);
    assert!(resolution_preset("ultra").is_err());
    let mut c = Config::figure_one();
    c.time.dt = Some(0.1);
    c.apply_resolution("fine").unwrap();
    assert_eq!((c.grid.nx, c.grid.nrho, c.time.dt), (512, 512, None));
}

#[test]
fn materialized_writes_dt() {
    let c = Config::figure_one().materialized().unwrap();
    assert_eq!(c.time.dt, Some((5.0 / 256.0 / 4.0f64).min(0.01)));
    assert!(c.to_toml_string().contains("dt ="));
}

#[test]
fn constant_delay_defaults() {
    let c = Config::from_toml_str("[delay]\nkind = \"constant\"\ntau0 = 1.5").unwrap();
    let p = c.delay_profile().unwrap();
    // M and d keep their section defaults.
    assert_eq!((p.tau(3.0), p.m(), p.d()), (1.5, 3.0, 0.5));
    let missing = Config::from_toml_str("[delay]\nkind = \"constant\"").unwrap();
    assert!(missing
        .delay_profile()
        .unwrap_err()
        .to_string()
        .contains("tau0"));
}

#[test]
fn tabulated_delay_reads_relative_to_config() {
    let dir = std::env::temp_dir().join(format!("kdv-config-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("tau.dat"), "# t tau\n0 1.0\n1, 1.5\n\n3 1.5\n").unwrap();
    let path = dir.join("run.toml");
    std::fs::write(
        &path,
        "[delay]\nkind = \"tabulated\"\nfile = \"tau.dat\"\nM = 2.0\nd = 0.5\n",
    )
    .unwrap();
    let c = Config::load(&path, &[]).unwrap();
    let p = c.delay_profile().unwrap();
    assert!(matches!(p.kind(), DelayKind::Tabulated { times, .. } if times.len() == 3));
    assert_eq!(p.tau(0.5), 1.25);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn table_parser() {
    assert_eq!(
        parse_table("0 1\n2\t3 # c\n").unwrap(),
        (vec![0.0, 2.0], vec![1.0, 3.0])
    );
    assert!(matches!(parse_table("0 1 2"), Err(Error::DelayTable(_))));
    assert!(matches!(parse_table("0 x"), Err(Error::DelayTable(_))));
}

#[test]
fn bad_values_surface_at_setup() {
    let with = |o: &str| Config::from_toml_with_overrides("", &[o.to_string()]).unwrap();
    assert!(with("scheme.channel=fifo").setup().is_err());
    assert!(with("ic.kind=square").setup().is_err());
    assert!(with("scheme.theta=0.3").setup().is_err());
    assert!(with("certificate.variant=other").variant().is_err());
    assert!(with("delay.kind=random").delay_profile().is_err());
}
