//! Parses a small GeoJSON street network and a PolyLine shapefile, then
//! labels the segments under both city profiles.
//!
//! `cargo run --example ingest_and_label`

use streetctx::geodata::{
    parse_geojson_streets, parse_shapefile_polylines, polyline_length_m, write_shapefile_polylines, LatLon,
};
use streetctx::labeler::{
    context_catalog, label_collection, parse_attribute_csv, CONTEXT_ATTRIBUTE, DEFAULT_COMMERCIAL_THRESHOLD,
};

const STREETS: &str = r#"{
  "type": "FeatureCollection",
  "features": [
    {"type": "Feature", "properties": {"id": "washington", "transport": "Downtown"},
     "geometry": {"type": "LineString", "coordinates": [[-71.0603, 42.3555], [-71.0611, 42.3541]]}},
    {"type": "Feature", "properties": {"id": "i93", "transport": "Highway"},
     "geometry": {"type": "LineString", "coordinates": [[-71.0580, 42.3500], [-71.0575, 42.3440], [-71.0570, 42.3400]]}},
    {"type": "Feature", "properties": {"id": "back-lane", "transport": "Neighborhood", "special": "Alley"},
     "geometry": {"type": "LineString", "coordinates": [[-71.0702, 42.3590], [-71.0707, 42.3593]]}}
  ]
}"#;

const ATTRIBUTES: &str = "segment_id,commercial_frac,transport,special\nwashington,0.3,Downtown,None\n";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rows = parse_attribute_csv(ATTRIBUTES)?;
    for profile in ["SanFrancisco", "Boston"] {
        let mut streets = parse_geojson_streets(STREETS)?;
        label_collection(&mut streets, &rows, &context_catalog(profile)?, DEFAULT_COMMERCIAL_THRESHOLD)?;
        println!("{profile}:");
        for s in streets.segments() {
            println!("  {:<10} {:>7.1} m  {}", s.id(), polyline_length_m(s), s.attributes[CONTEXT_ATTRIBUTE]);
        }
    }

    // geometry-only shapefile with attributes from a sidecar CSV
    let p = |lat, lon| LatLon::new(lat, lon).unwrap();
    let shp = write_shapefile_polylines(&[
        vec![vec![p(37.79, -122.40), p(37.80, -122.41)]],
        vec![vec![p(37.77, -122.42), p(37.78, -122.42)], vec![p(37.78, -122.43), p(37.78, -122.44)]],
    ]);
    let labels =
        "record_index,key,value\n0,transport,Throughway\n0,commercial_frac,0.8\n1,transport,Neighborhood\n1,special,Park\n";
    let mut parsed = parse_shapefile_polylines(&shp, Some(labels))?;
    label_collection(&mut parsed, &[], &context_catalog("SanFrancisco")?, DEFAULT_COMMERCIAL_THRESHOLD)?;
    println!("shapefile:");
    for s in parsed.segments() {
        println!("  {:<4} {}", s.id(), s.attributes[CONTEXT_ATTRIBUTE]);
    }
    Ok(())
}
