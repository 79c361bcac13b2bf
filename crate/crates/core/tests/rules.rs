use ecgrag_core::delineation::{ClassicDelineator, Delineator, DelineatorConfig};
use ecgrag_core::features::{extract_features, FeatureSet, Unit, GLOBAL_FEATURES, LEAD_FEATURES};
use ecgrag_core::ptbxl::{Sex, LEAD_NAMES};
use ecgrag_core::rules::{
    evaluate_rules, project_superclasses, Role, RuleError, RuleOutcome, RuleReport, RuleTable, DEFAULT_RULES,
};
use ecgrag_core::synth::{self, Morphology};
use ecgrag_core::{Superclass, SuperclassFlags};
use proptest::prelude::*;
use std::sync::LazyLock;

static TABLE: LazyLock<RuleTable> = LazyLock::new(RuleTable::default_table);

fn set(fs: &mut FeatureSet, key: &str, lead: Option<&str>, v: f64) {
    match lead {
        Some(l) => fs.lead_mut(l).unwrap().set(key, Some(v)),
        None => fs.global.set(key, Some(v)),
    }
}

/// A plain sinus-rhythm feature set that fires only `sinus_rhythm`.
fn normal_features() -> FeatureSet {
    let mut fs = FeatureSet::absent(1);
    for (k, v) in [
        ("heart_rate", 72.0),
        ("rr_interval", 833.0),
        ("sdnn", 20.0),
        ("rr_irregularity", 0.0),
        ("global_pr_interval", 160.0),
        ("global_qrs_duration", 90.0),
        ("global_qt_interval", 380.0),
        ("qtc_bazett", 416.0),
        ("qtc_fridericia", 404.0),
        ("p_axis", 60.0),
        ("qrs_axis", 60.0),
        ("t_axis", 45.0),
    ] {
        set(&mut fs, k, None, v);
    }
    for lead in LEAD_NAMES {
        for (k, v) in [
            ("p_amplitude", 120.0),
            ("p_duration", 90.0),
            ("pr_interval", 160.0),
            ("qrs_duration", 90.0),
            ("r_amplitude", 900.0),
            ("s_amplitude", 300.0),
            ("qrs_positive_peak", 900.0),
            ("qrs_negative_peak", -300.0),
            ("qrs_net_area", 15000.0),
            ("intrinsicoid_deflection", 35.0),
            ("pathological_q", 0.0),
            ("fragmented_qrs_notches", 0.0),
            ("st_level_j", 10.0),
            ("st_level_j60", 20.0),
            ("st_slope", 0.2),
            ("t_amplitude", 250.0),
            ("signal_quality", 0.98),
        ] {
            set(&mut fs, k, Some(lead), v);
        }
    }
    fs
}

fn fired(report: &RuleReport) -> Vec<&str> {
    report.fired().map(|r| r.id.as_str()).collect()
}

#[test]
fn default_table_has_forty_valid_rules() {
    let table = RuleTable::parse(DEFAULT_RULES).expect("no validation errors");
    assert_eq!(table.rules().len(), 40);
    let mut ids: Vec<_> = table.rules().iter().map(|r| r.id.as_str()).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 40);
    assert_eq!(table.version, "1.0.0");
    assert_eq!(table.rules().iter().filter(|r| r.role == Role::Warning).count(), 2);
}

#[test]
fn duplicate_id_is_a_schema_error() {
    let text = DEFAULT_RULES.replace("id = \"short_qt\"", "id = \"long_qt\"");
    match RuleTable::parse(&text) {
        Err(RuleError::Schema { rule, path, .. }) => {
            assert_eq!(rule, "long_qt");
            assert!(path.ends_with(".id"), "{path}");
        }
        other => panic!("expected schema error, got {other:?}"),
    }
}

#[test]
fn misspelled_feature_is_rejected_at_load() {
    let text = DEFAULT_RULES.replace("when = \"global_pr_interval > 200\"", "when = \"'QRSS duration' > 120\"");
    match RuleTable::parse(&text) {
        Err(RuleError::UnknownFeatureReference { rule, feature, .. }) => {
            assert_eq!(rule, "first_degree_av_block");
            assert_eq!(feature, "QRSS duration");
        }
        other => panic!("expected unknown feature, got {other:?}"),
    }
    let text = DEFAULT_RULES.replace("evidence = [\"global_pr_interval\"]", "evidence = [\"global_pr_intervall\"]");
    assert!(matches!(RuleTable::parse(&text), Err(RuleError::UnknownFeatureReference { .. })));
}

#[test]
fn schema_errors_name_the_field() {
    let cases = [
        (DEFAULT_RULES.replace("superclass = \"MI\"\nwhen = \"count[V3", "superclass = \"XX\"\nwhen = \"count[V3"), "superclass"),
        (DEFAULT_RULES.replace("when = \"qtc_bazett > 460\"", "when = \"qtc_bazett >\""), "when"),
        (DEFAULT_RULES.replace("when = \"qtc_bazett > 460\"", "when = \"qt_interval > 460\""), "when"),
    ];
    for (text, field) in cases {
        match RuleTable::parse(&text) {
            Err(RuleError::Schema { path, .. }) => assert!(path.ends_with(field), "{path}"),
            other => panic!("expected schema error on {field}, got {other:?}"),
        }
    }
    let truncated = &DEFAULT_RULES[..DEFAULT_RULES.rfind("[[rule]]").unwrap()];
    assert!(matches!(RuleTable::parse(truncated), Err(RuleError::Schema { .. })));
}

#[test]
fn slow_sinus_rhythm_is_bradycardia() {
    let mut fs = normal_features();
    set(&mut fs, "heart_rate", None, 50.0);
    let report = evaluate_rules(&fs, &RuleTable::default_table());
    assert!(report.outcome("sinus_bradycardia").unwrap().fired);
    assert!(!report.outcome("sinus_rhythm").unwrap().fired);
    let ev = &report.outcome("sinus_bradycardia").unwrap().evidence;
    assert!(ev.iter().any(|e| e.feature == "heart rate" && e.value == 50.0 && e.unit == "bpm"));
}

#[test]
fn normal_features_fire_only_sinus_rhythm() {
    let report = evaluate_rules(&normal_features(), &RuleTable::default_table());
    assert_eq!(fired(&report), ["sinus_rhythm"]);
    assert_eq!(report.superclasses, SuperclassFlags::from_fn(|c| c == Superclass::Norm));
}

#[test]
fn qrs_of_113_ms_is_a_conduction_disturbance() {
    let mut fs = normal_features();
    set(&mut fs, "global_qrs_duration", None, 113.0);
    let report = evaluate_rules(&fs, &RuleTable::default_table());
    assert!(report.outcome("nonspecific_ivcd").unwrap().fired);
    assert!(report.superclasses.get(Superclass::Cd));
    assert!(!report.superclasses.get(Superclass::Norm));
    let ev = &report.outcome("nonspecific_ivcd").unwrap().evidence;
    assert!(ev.iter().any(|e| e.feature == "global QRS duration" && e.value == 113.0));
}

#[test]
fn absent_features_fire_no_disease_rule() {
    let report = evaluate_rules(&FeatureSet::absent(3), &RuleTable::default_table());
    for r in &report.rules {
        assert_eq!(r.fired, r.role == Role::Warning && r.id == "noisy_or_flat_lead", "{}", r.id);
    }
    assert_eq!(report.warnings, ["noisy or flat lead warning"]);
    assert_eq!(report.superclasses, SuperclassFlags::NONE);
}

fn report_with(fired: &[&str]) -> RuleReport {
    let table = RuleTable::default_table();
    let rules = table
        .rules()
        .iter()
        .map(|r| RuleOutcome {
            id: r.id.clone(),
            name: r.name.clone(),
            role: r.role,
            superclass: r.superclass,
            fired: fired.contains(&r.id.as_str()),
            evidence: vec![],
        })
        .collect();
    RuleReport {
        rules,
        superclasses: SuperclassFlags::NONE,
        warnings: vec![],
    }
}

#[test]
fn projection_examples() {
    let only = |c: &[Superclass]| SuperclassFlags::from_fn(|x| c.contains(&x));
    assert_eq!(project_superclasses(&report_with(&["sinus_rhythm"])), only(&[Superclass::Norm]));
    assert_eq!(project_superclasses(&report_with(&["lbbb", "st_depression"])), only(&[Superclass::Cd, Superclass::Sttc]));
    assert_eq!(project_superclasses(&report_with(&["sinus_rhythm", "baseline_wander"])), only(&[Superclass::Norm]));
    assert_eq!(project_superclasses(&report_with(&["sinus_rhythm", "left_axis_deviation"])), SuperclassFlags::NONE);
    assert_eq!(project_superclasses(&report_with(&[])), SuperclassFlags::NONE);
}

#[test]
fn report_json_shape() {
    let report = evaluate_rules(&normal_features(), &RuleTable::default_table());
    let v = serde_json::to_value(&report).unwrap();
    assert_eq!(v["rules"].as_array().unwrap().len(), 40);
    assert_eq!(v["rules"][0]["id"], "sinus_rhythm");
    assert_eq!(v["rules"][0]["fired"], true);
    assert_eq!(v["superclasses"]["NORM"], true);
    assert!(v["warnings"].as_array().unwrap().is_empty());
    let back: RuleReport = serde_json::from_value(v).unwrap();
    assert_eq!(back, report);
}

#[test]
fn threshold_rules_flip_once() {
    let table = RuleTable::default_table();
    let cases: [(&str, &str, f64, f64); 4] = [
        ("first_degree_av_block", "global_pr_interval", 150.0, 300.0),
        ("long_qt", "qtc_bazett", 380.0, 520.0),
        ("nonspecific_ivcd", "global_qrs_duration", 80.0, 160.0),
        ("sinus_tachycardia", "heart_rate", 60.0, 180.0),
    ];
    for (id, key, lo, hi) in cases {
        let mut last = false;
        let mut flips = 0;
        let mut v = lo;
        while v <= hi {
            let mut fs = normal_features();
            set(&mut fs, key, None, v);
            let now = evaluate_rules(&fs, &table).outcome(id).unwrap().fired;
            if now != last {
                flips += 1;
                assert!(now, "{id} turned off at {key}={v}");
            }
            last = now;
            v += 0.5;
        }
        assert_eq!(flips, 1, "{id}");
    }
}

#[test]
fn evaluation_is_pure() {
    let table = RuleTable::default_table();
    let fs = normal_features();
    let before = fs.clone();
    let a = evaluate_rules(&fs, &table);
    let b = evaluate_rules(&fs, &table);
    assert_eq!(a, b);
    assert_eq!(fs, before);
}

fn synthetic_report(m: Morphology, hr: f64, seed: u64) -> RuleReport {
    let spec = synth::scenario(m, hr, 500, seed);
    let (record, _) = synth::generate_record(seed as u32, &spec, Some(55.0), Sex::Male);
    let fids = ClassicDelineator::new(DelineatorConfig::default()).delineate(&record).unwrap();
    evaluate_rules(&extract_features(&record, &fids), &RuleTable::default_table())
}

#[test]
fn synthetic_morphologies_map_to_their_superclass() {
    let cases = [
        (Morphology::Normal, Superclass::Norm),
        (Morphology::Rbbb, Superclass::Cd),
        (Morphology::Ivcd113, Superclass::Cd),
        (Morphology::Lvh, Superclass::Hyp),
        (Morphology::InferiorMi, Superclass::Mi),
        (Morphology::StDepression, Superclass::Sttc),
    ];
    for (m, class) in cases {
        for seed in 0..3 {
            let report = synthetic_report(m, 72.0, seed);
            assert!(report.superclasses.get(class), "{m:?} seed {seed}: fired {:?}", fired(&report));
            let others: Vec<_> = report.superclasses.iter().filter(|(c, on)| *on && *c != class).collect();
            assert!(others.is_empty(), "{m:?} seed {seed}: extra {others:?}, fired {:?}", fired(&report));
        }
    }
    let report = synthetic_report(Morphology::AtrialFibrillation, 90.0, 1);
    assert!(report.outcome("atrial_fibrillation").unwrap().fired, "{:?}", fired(&report));
    assert!(!report.superclasses.get(Superclass::Norm));
}

fn value_for(unit: Unit, u: f64) -> f64 {
    let lerp = |a: f64, b: f64| a + (b - a) * u;
    match unit {
        Unit::Microvolt => lerp(-3000.0, 3000.0),
        Unit::Millisecond => lerp(0.0, 600.0),
        Unit::MicrovoltMs => lerp(-60000.0, 60000.0),
        Unit::MicrovoltPerMs => lerp(-12.0, 12.0),
        Unit::Count => (u * 4.0).floor(),
        Unit::Flag => (u >= 0.5) as u8 as f64,
        Unit::Ratio => lerp(0.0, 5.0),
        Unit::Score => u,
        Unit::Bpm => lerp(30.0, 200.0),
        Unit::Degree => lerp(-179.0, 180.0),
        Unit::Fraction => u,
    }
}

fn arb_features() -> impl Strategy<Value = FeatureSet> {
    let n = LEAD_FEATURES.len() * 12 + GLOBAL_FEATURES.len();
    prop::collection::vec(prop::option::weighted(0.85, 0.0f64..1.0), n).prop_map(|us| {
        let mut fs = FeatureSet::absent(0);
        let mut it = us.into_iter();
        for d in GLOBAL_FEATURES.iter() {
            fs.global.set(d.key, it.next().unwrap().map(|u| value_for(d.unit, u)));
        }
        for lead in LEAD_NAMES {
            let lf = fs.lead_mut(lead).unwrap();
            for d in LEAD_FEATURES.iter() {
                lf.set(d.key, it.next().unwrap().map(|u| value_for(d.unit, u)));
            }
        }
        fs
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn norm_excludes_every_disease_superclass(fs in arb_features()) {
        let table = &*TABLE;
        let report = evaluate_rules(&fs, table);
        let flags = report.superclasses;
        if flags.get(Superclass::Norm) {
            prop_assert!(!flags.get(Superclass::Cd) && !flags.get(Superclass::Hyp) && !flags.get(Superclass::Mi) && !flags.get(Superclass::Sttc));
        }
        prop_assert_eq!(project_superclasses(&report), flags);
        prop_assert_eq!(evaluate_rules(&fs, table), report);
    }
}
