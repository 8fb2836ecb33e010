use mcseg::experiments::{train, ClassifierParams};
use mcseg::phantom::{
    default_confusable_spec, generate, make_subject, phantom_labels, SubjectSpec,
};

#[test]
fn canonical_geometry() {
    let spec = default_confusable_spec(1);
    let labels = phantom_labels(&spec).unwrap();
    let h = labels.histogram();
    assert_eq!(h.len(), 4);
    assert!(h.iter().all(|&c| c > 0));
    let ratio = h[0] as f64 / h[1..].iter().sum::<usize>() as f64;
    assert!((3.0..=6.0).contains(&ratio), "background:nuclei {ratio}");
}

#[test]
fn same_seed_same_volumes() {
    let mut spec = default_confusable_spec(9);
    spec.dims = [20, 18, 16];
    let a = generate(&spec).unwrap();
    let b = generate(&spec).unwrap();
    assert_eq!(a.0.data(), b.0.data());
    assert_eq!(a.1, b.1);
    spec.seed = 10;
    assert_ne!(generate(&spec).unwrap().0.data(), a.0.data());
}

#[test]
fn zero_deformation_keeps_labels() {
    let mut spec = default_confusable_spec(2);
    spec.dims = [24, 24, 24];
    let (v, l) = generate(&spec).unwrap();
    let s = SubjectSpec {
        deform_amplitude: 0.0,
        extra_noise: 0.0,
        seed: 3,
    };
    let (sv, sl) = make_subject(&v, &l, &s).unwrap();
    assert_eq!(sl, l);
    assert_eq!(sv.data(), v.data());
}

#[test]
fn oversized_deformation_is_rejected() {
    let mut spec = default_confusable_spec(2);
    spec.dims = [16, 16, 16];
    let (v, l) = generate(&spec).unwrap();
    let s = SubjectSpec {
        deform_amplitude: 500.0,
        extra_noise: 0.0,
        seed: 3,
    };
    assert!(make_subject(&v, &l, &s).is_err());
}

fn mean_entropy(p: &mcseg::LabelField) -> f64 {
    let total: f64 = p
        .rows()
        .map(|r| {
            r.iter()
                .filter(|&&v| v > 0.0)
                .map(|&v| -v * v.ln())
                .sum::<f64>()
        })
        .sum();
    total / p.shape().len() as f64
}

#[test]
fn subjects_are_harder_than_a_fresh_template_realization() {
    let mut spec = default_confusable_spec(1);
    spec.dims = [32, 32, 32];
    let (tv, tl) = generate(&spec).unwrap();
    let trained = train(&tv, &tl, None, &ClassifierParams::parzen()).unwrap();
    let fresh = generate(&mcseg::phantom::PhantomSpec {
        seed: 1001,
        ..spec.clone()
    })
    .unwrap();
    let (sv, _) = make_subject(&tv, &tl, &SubjectSpec::canonical(500)).unwrap();
    let h_fresh = mean_entropy(&trained.classify(&fresh.0, None).unwrap());
    let h_subject = mean_entropy(&trained.classify(&sv, None).unwrap());
    assert!(
        h_subject > h_fresh,
        "subject {h_subject} vs template {h_fresh}"
    );
}
