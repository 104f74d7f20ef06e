use std::collections::BTreeSet;

use proptest::prelude::*;
use streetctx::labeler::*;

fn enumeration() -> impl Iterator<Item = SegmentAttributes> {
    SideUse::ALL.into_iter().flat_map(|s| {
        Transport::ALL.into_iter().flat_map(move |t| Special::ALL.into_iter().map(move |sp| SegmentAttributes::new(s, t, sp)))
    })
}

#[test]
fn classification_is_total_and_onto() {
    let labels: Vec<StreetContext> = enumeration().map(|a| classify_street(&a)).collect();
    assert_eq!(labels.len(), 4 * 5 * 4);
    let image: BTreeSet<StreetContext> = labels.into_iter().collect();
    assert_eq!(image, StreetContext::ALL.into_iter().collect());
    let sf = context_catalog("SanFrancisco").unwrap();
    assert!(image.iter().all(|&l| sf.contains(l)));
}

#[test]
fn special_takes_precedence() {
    for special in [Special::Alley, Special::Park, Special::Industrial] {
        let outs: BTreeSet<StreetContext> = SideUse::ALL
            .into_iter()
            .flat_map(|s| Transport::ALL.into_iter().map(move |t| classify_street(&SegmentAttributes::new(s, t, special))))
            .collect();
        assert_eq!(outs.len(), 1, "{special:?}");
    }
}

#[test]
fn catalog_sizes() {
    assert_eq!(context_catalog("SanFrancisco").unwrap().catalog().len(), 11);
    let boston = context_catalog("Boston").unwrap();
    assert_eq!(boston.catalog().len(), 10);
    assert!(!boston.contains(StreetContext::DowntownResidential));
    assert_eq!(remap_to_profile(StreetContext::DowntownResidential, &boston).unwrap(), StreetContext::DowntownCommercial);
}

proptest! {
    #[test]
    fn side_use_crosses_threshold_once(threshold in 0.0f64..=1.0, mut fracs in prop::collection::vec(0.0f64..=1.0, 2..40)) {
        fracs.sort_by(f64::total_cmp);
        let commercial: Vec<bool> =
            fracs.iter().map(|&f| derive_side_use_with(f, threshold).unwrap() == SideUse::Commercial).collect();
        let crossings = commercial.windows(2).filter(|w| w[0] != w[1]).count();
        prop_assert!(crossings <= 1);
        prop_assert!(commercial.windows(2).all(|w| !w[0] || w[1]), "once commercial, stays commercial");
    }

    #[test]
    fn out_of_range_fractions_fail(f in prop_oneof![-10.0f64..-1e-9, 1.0f64 + 1e-9..10.0]) {
        prop_assert!(derive_side_use(f).is_err());
    }
}
