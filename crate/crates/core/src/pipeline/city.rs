//! Procedural street networks for offline runs.

use std::collections::BTreeMap;

use crate::geodata::{LatLon, SegmentCollection, StreetSegment};
use crate::labeler::{representative_attributes, SideUse, StreetContext};
use crate::rng::Rng;

/// Classes of the default synthetic corpus: codes 0 to 5, which cover all
/// four motif quadrants.
pub const SYNTHETIC_CLASSES: [StreetContext; 6] = [
    StreetContext::Alley,
    StreetContext::CommercialThroughway,
    StreetContext::DowntownCommercial,
    StreetContext::DowntownResidential,
    StreetContext::Highway,
    StreetContext::HighwayRamp,
];

const ORIGIN: (f64, f64) = (42.33, -71.10);
const GRID_COLUMNS: usize = 25;
const CELL_DEG: f64 = 0.002;

/// `per_class * classes.len()` unlabeled segments on a jittered grid.
///
/// Segment `i` carries the raw attributes (`commercial_frac`, `transport`,
/// `special`) of class `classes[i % classes.len()]`, so the labeler
/// recovers that class. Ids are `s0000`, `s0001`, ...
pub fn synthetic_city(per_class: usize, classes: &[StreetContext], seed: u64) -> SegmentCollection {
    let mut rng = Rng::seed_from_u64(seed);
    let total = per_class * classes.len();
    let mut segments = Vec::with_capacity(total);
    for i in 0..total {
        let label = classes[i % classes.len()];
        let (row, col) = (i / GRID_COLUMNS, i % GRID_COLUMNS);
        let mut lat = ORIGIN.0 + row as f64 * CELL_DEG + rng.uniform(0.0, 0.2 * CELL_DEG);
        let mut lon = ORIGIN.1 + col as f64 * CELL_DEG + rng.uniform(0.0, 0.2 * CELL_DEG);
        let heading = rng.uniform(0.0, std::f64::consts::TAU);
        let n_vertices = 2 + rng.below(3) as usize;
        let mut vertices = vec![LatLon { lat, lon }];
        for _ in 1..n_vertices {
            // roughly 40 to 120 m per edge with a gentle bend
            let step = rng.uniform(4e-4, 1.1e-3);
            let turn = heading + rng.uniform(-0.4, 0.4);
            lat += step * turn.cos();
            lon += step * turn.sin();
            vertices.push(LatLon { lat, lon });
        }
        let attrs = representative_attributes(label);
        let frac = match attrs.side_use {
            SideUse::Commercial => rng.uniform(0.55, 1.0),
            _ => rng.uniform(0.0, 0.45),
        };
        let mut attributes = BTreeMap::new();
        attributes.insert("commercial_frac".to_string(), format!("{frac:.3}"));
        attributes.insert("transport".to_string(), format!("{:?}", attrs.transport));
        attributes.insert("special".to_string(), format!("{:?}", attrs.special));
        segments.push(StreetSegment::new(format!("s{i:04}"), vertices, attributes).expect("generated segment is valid"));
    }
    SegmentCollection::new(segments).expect("ids are unique")
}
