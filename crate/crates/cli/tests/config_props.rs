use proptest::prelude::*;

use speechprep_cli::config::{load, BackendSpec};
use speechprep_cli::RunConfig;

fn spec() -> impl Strategy<Value = BackendSpec> {
    prop_oneof![
        Just(BackendSpec::Stub),
        (prop::collection::vec("[a-z./-]{1,8}", 1..4), prop::option::of(0.5f64..600.0))
            .prop_map(|(command, timeout_s)| BackendSpec::Subprocess { command, timeout_s }),
        ("/[a-z]{1,8}\\.sock", prop::option::of(0.5f64..600.0)).prop_map(|(p, timeout_s)| BackendSpec::Socket {
            path: p.into(),
            timeout_s
        }),
    ]
}

proptest! {
    #[test]
    fn dotted_overrides_set_exactly_their_field(
        q in 1.0f64..5.0, c in 0.0f64..1.0, gap in 0.0f64..2.0, par in 1usize..64,
    ) {
        let overrides = vec![
            ("filter.min_quality".to_string(), q.to_string()),
            ("filter.min_language_confidence".to_string(), c.to_string()),
            ("stitch.max_gap_s".to_string(), gap.to_string()),
            ("parallelism".to_string(), par.to_string()),
        ];
        let cfg = load("", &overrides).unwrap();
        let mut want = RunConfig::default();
        want.filter.min_quality = q;
        want.filter.min_language_confidence = c;
        want.stitch.max_gap_s = gap;
        want.parallelism = par;
        prop_assert_eq!(cfg, want);
    }

    #[test]
    fn dumped_config_loads_back(
        min_s in 0.5f64..10.0, extra in 0.5f64..40.0, target in -40.0f64..-1.0,
        langs in prop::collection::btree_set("[a-z]{2}", 0..5),
        sep in spec(), asr in spec(),
    ) {
        let mut cfg = RunConfig::default();
        cfg.stitch.min_s = min_s;
        cfg.stitch.max_s = min_s + extra;
        cfg.loudness.target_dbfs = target;
        cfg.filter.allowed_languages = langs;
        cfg.backend.separation = sep;
        cfg.backend.transcription = asr;
        let back = load(&cfg.to_toml(), &[]).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

#[test]
fn shorthand_forms() {
    assert_eq!(BackendSpec::parse_shorthand("stub").unwrap(), BackendSpec::Stub);
    assert_eq!(
        BackendSpec::parse_shorthand("unix:/run/w.sock").unwrap(),
        BackendSpec::Socket {
            path: "/run/w.sock".into(),
            timeout_s: None
        }
    );
    assert_eq!(
        BackendSpec::parse_shorthand("python -m 'my worker'").unwrap(),
        BackendSpec::Subprocess {
            command: vec!["python".into(), "-m".into(), "my worker".into()],
            timeout_s: None
        }
    );
    assert!(BackendSpec::parse_shorthand("'unclosed").is_err());
}
