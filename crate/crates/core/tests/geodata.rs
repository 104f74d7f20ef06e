mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use streetctx::geodata::*;

fn lat_lon() -> impl Strategy<Value = LatLon> {
    (-90.0f64..=90.0, -180.0f64..=180.0).prop_map(|(lat, lon)| LatLon::new(lat, lon).unwrap())
}

fn polyline() -> impl Strategy<Value = Vec<LatLon>> {
    prop::collection::vec(lat_lon(), 2..8).prop_filter("no consecutive repeats", |v| v.windows(2).all(|w| w[0] != w[1]))
}

fn collection() -> impl Strategy<Value = SegmentCollection> {
    prop::collection::vec((polyline(), prop::collection::btree_map("[a-z_]{1,6}", "[ -~]{0,8}", 0..4)), 0..6).prop_map(|segs| {
        let segs = segs
            .into_iter()
            .enumerate()
            .map(|(i, (v, mut attrs))| {
                attrs.remove("id");
                StreetSegment::new(format!("seg-{i}"), v, attrs).unwrap()
            })
            .collect();
        SegmentCollection::new(segs).unwrap()
    })
}

proptest! {
    #[test]
    fn geojson_round_trip_is_identity(c in collection()) {
        let back = parse_geojson_streets(&c.to_geojson()).unwrap();
        prop_assert_eq!(back.len(), c.len());
        for (a, b) in c.segments().iter().zip(back.segments()) {
            prop_assert_eq!(a.id(), b.id());
            prop_assert_eq!(&a.attributes, &b.attributes);
            for (p, q) in a.vertices().iter().zip(b.vertices()) {
                prop_assert_eq!(p.lat.to_bits(), q.lat.to_bits());
                prop_assert_eq!(p.lon.to_bits(), q.lon.to_bits());
            }
            prop_assert_eq!(a.vertices().len(), b.vertices().len());
        }
    }

    #[test]
    fn shapefile_fixture_parses_exactly(records in prop::collection::vec(prop::collection::vec(polyline(), 1..3), 1..5)) {
        let raw: Vec<Vec<Vec<(f64, f64)>>> =
            records.iter().map(|parts| parts.iter().map(|p| p.iter().map(|v| (v.lon, v.lat)).collect()).collect()).collect();
        let parsed = parse_shapefile_polylines(&common::shp_bytes(&raw), None).unwrap();
        let expected: Vec<&Vec<LatLon>> = records.iter().flatten().collect();
        prop_assert_eq!(parsed.len(), expected.len());
        for (seg, want) in parsed.segments().iter().zip(expected) {
            prop_assert_eq!(seg.vertices(), want.as_slice());
        }
        // the library writer agrees byte for byte with the independent encoder
        prop_assert_eq!(write_shapefile_polylines(&records), common::shp_bytes(&raw));
    }

    #[test]
    fn length_reversal_and_concatenation(a in polyline(), b in polyline()) {
        let seg = |v: Vec<LatLon>| StreetSegment::new("s", v, BTreeMap::new()).unwrap();
        let la = polyline_length_m(&seg(a.clone()));
        let mut rev = a.clone();
        rev.reverse();
        prop_assert!((polyline_length_m(&seg(rev)) - la).abs() <= 1e-9 * la);

        // b re-anchored so it starts where a ends
        let mut joined = a.clone();
        let tail: Vec<LatLon> = b.iter().skip(1).copied().filter(|v| v != a.last().unwrap()).collect();
        prop_assume!(!tail.is_empty() && tail.windows(2).all(|w| w[0] != w[1]));
        let mut second = vec![*a.last().unwrap()];
        second.extend(&tail);
        joined.extend(&tail);
        let total = la + polyline_length_m(&seg(second));
        prop_assert!((polyline_length_m(&seg(joined)) - total).abs() <= 1e-9 * total);
    }
}

#[test]
fn haversine_matches_closed_form() {
    let seg = StreetSegment::new(
        "s",
        vec![LatLon::new(0.0, 0.0).unwrap(), LatLon::new(0.0, 1.0).unwrap(), LatLon::new(0.0, 2.0).unwrap()],
        BTreeMap::new(),
    )
    .unwrap();
    let degree = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
    assert!((polyline_length_m(&seg) - 2.0 * degree).abs() < 1e-6);
    assert!((degree - 111_194.93).abs() < 0.01);
}

#[test]
fn shapefile_labels_attach_to_records() {
    let raw = vec![
        vec![vec![(-71.0, 42.0), (-71.001, 42.001)]],
        vec![vec![(-71.0, 42.1), (-71.0, 42.2)], vec![(-71.1, 42.1), (-71.2, 42.1)]],
    ];
    let c = parse_shapefile_polylines(&common::shp_bytes(&raw), Some("record_index,key,value\n1,transport,Highway\n")).unwrap();
    let ids: Vec<&str> = c.segments().iter().map(|s| s.id()).collect();
    assert_eq!(ids, ["0_0", "1_0", "1_1"]);
    assert!(c.segments()[0].attributes.is_empty());
    assert!(c.segments()[1..].iter().all(|s| s.attributes["transport"] == "Highway"));
}
