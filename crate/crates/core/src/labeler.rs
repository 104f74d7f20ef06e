//! Rule-based street context labeling following the San Francisco
//! three-stage scheme: side use, transportation context, special conditions.
//!
//! Precedence is special condition, then highway transport, then the
//! side-use by transport product. `Mixed` side use resolves as commercial
//! and `None` as residential; both fallbacks are flagged as low confidence.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodata::SegmentCollection;

/// Attribute key carrying the assigned label on a segment.
pub const CONTEXT_ATTRIBUTE: &str = "street_context";
/// Attribute key set to `low` when a side-use fallback was used.
pub const CONFIDENCE_ATTRIBUTE: &str = "street_context_confidence";
/// Default commercial-fraction threshold for [`derive_side_use`].
pub const DEFAULT_COMMERCIAL_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("commercial fraction {0} is outside [0, 1]")]
    FractionOutOfRange(f64),
    #[error("unknown city profile '{name}' (known profiles: SanFrancisco, Boston, Custom:<Label,...>)")]
    UnknownProfile { name: String },
    #[error("invalid custom catalog: {0}")]
    InvalidCatalog(String),
    #[error("label {label} cannot be mapped into profile {profile}")]
    Unmappable { label: StreetContext, profile: String },
    #[error("unknown street context '{0}'")]
    UnknownContext(String),
    #[error("unknown {kind} value '{value}'")]
    UnknownValue { kind: &'static str, value: String },
    #[error("attributes CSV: {0}")]
    Csv(String),
    #[error("segment '{0}' has no attribute row and no transport attribute")]
    MissingAttributes(String),
}

macro_rules! contexts {
    ($($name:ident = $code:literal),+ $(,)?) => {
        /// Street context classes, with stable codes in alphabetical order.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum StreetContext { $($name = $code),+ }

        impl StreetContext {
            pub const ALL: [StreetContext; 11] = [$(StreetContext::$name),+];

            pub fn name(self) -> &'static str {
                match self { $(StreetContext::$name => stringify!($name)),+ }
            }
        }

        impl FromStr for StreetContext {
            type Err = LabelError;
            fn from_str(s: &str) -> Result<Self, LabelError> {
                match s.trim() {
                    $(stringify!($name) => Ok(StreetContext::$name),)+
                    other => Err(LabelError::UnknownContext(other.to_string())),
                }
            }
        }
    };
}

contexts! {
    Alley = 0,
    CommercialThroughway = 1,
    DowntownCommercial = 2,
    DowntownResidential = 3,
    Highway = 4,
    HighwayRamp = 5,
    Industrial = 6,
    NeighborhoodCommercial = 7,
    NeighborhoodResidential = 8,
    Park = 9,
    ResidentialThroughway = 10,
}

impl StreetContext {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for StreetContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SideUse {
    Commercial,
    Residential,
    Mixed,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transport {
    Throughway,
    Highway,
    HighwayRamp,
    Downtown,
    Neighborhood,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Special {
    None,
    Alley,
    Park,
    Industrial,
}

impl SideUse {
    pub const ALL: [SideUse; 4] = [SideUse::Commercial, SideUse::Residential, SideUse::Mixed, SideUse::None];
}

impl Transport {
    pub const ALL: [Transport; 5] =
        [Transport::Throughway, Transport::Highway, Transport::HighwayRamp, Transport::Downtown, Transport::Neighborhood];
}

impl Special {
    pub const ALL: [Special; 4] = [Special::None, Special::Alley, Special::Park, Special::Industrial];
}

fn normalize_token(s: &str) -> String {
    s.trim().chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase()
}

impl FromStr for SideUse {
    type Err = LabelError;
    fn from_str(s: &str) -> Result<Self, LabelError> {
        match normalize_token(s).as_str() {
            "commercial" => Ok(SideUse::Commercial),
            "residential" => Ok(SideUse::Residential),
            "mixed" => Ok(SideUse::Mixed),
            "" | "none" => Ok(SideUse::None),
            _ => Err(LabelError::UnknownValue { kind: "side_use", value: s.to_string() }),
        }
    }
}

impl FromStr for Transport {
    type Err = LabelError;
    fn from_str(s: &str) -> Result<Self, LabelError> {
        match normalize_token(s).as_str() {
            "throughway" => Ok(Transport::Throughway),
            "highway" => Ok(Transport::Highway),
            "highwayramp" | "ramp" => Ok(Transport::HighwayRamp),
            "downtown" => Ok(Transport::Downtown),
            "neighborhood" => Ok(Transport::Neighborhood),
            _ => Err(LabelError::UnknownValue { kind: "transport", value: s.to_string() }),
        }
    }
}

impl FromStr for Special {
    type Err = LabelError;
    fn from_str(s: &str) -> Result<Self, LabelError> {
        match normalize_token(s).as_str() {
            "" | "none" => Ok(Special::None),
            "alley" => Ok(Special::Alley),
            "park" => Ok(Special::Park),
            "industrial" => Ok(Special::Industrial),
            _ => Err(LabelError::UnknownValue { kind: "special", value: s.to_string() }),
        }
    }
}

/// Inputs of the classification rules for one segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentAttributes {
    pub side_use: SideUse,
    pub transport: Transport,
    pub special: Special,
    /// Share of side parcels that are commercial, when known.
    pub commercial_frac: Option<f64>,
}

impl SegmentAttributes {
    pub fn new(side_use: SideUse, transport: Transport, special: Special) -> Self {
        Self { side_use, transport, special, commercial_frac: None }
    }

    /// Builds attributes from a commercial fraction, deriving the side use.
    pub fn from_fraction(
        commercial_frac: f64,
        threshold: f64,
        transport: Transport,
        special: Special,
    ) -> Result<Self, LabelError> {
        let side_use = derive_side_use_with(commercial_frac, threshold)?;
        Ok(Self { side_use, transport, special, commercial_frac: Some(commercial_frac) })
    }

    /// True when the side use had to fall back (`Mixed` or `None`).
    pub fn low_confidence(&self) -> bool {
        matches!(self.side_use, SideUse::Mixed | SideUse::None)
    }
}

/// Side use from the commercial parcel fraction at the default 0.5 threshold.
pub fn derive_side_use(commercial_frac: f64) -> Result<SideUse, LabelError> {
    derive_side_use_with(commercial_frac, DEFAULT_COMMERCIAL_THRESHOLD)
}

/// `frac >= threshold` is commercial, anything below is residential.
pub fn derive_side_use_with(commercial_frac: f64, threshold: f64) -> Result<SideUse, LabelError> {
    if !(0.0..=1.0).contains(&commercial_frac) {
        return Err(LabelError::FractionOutOfRange(commercial_frac));
    }
    Ok(if commercial_frac >= threshold { SideUse::Commercial } else { SideUse::Residential })
}

/// Total classification function from attributes to a street context.
pub fn classify_street(attrs: &SegmentAttributes) -> StreetContext {
    use StreetContext as C;
    match attrs.special {
        Special::Alley => return C::Alley,
        Special::Park => return C::Park,
        Special::Industrial => return C::Industrial,
        Special::None => {}
    }
    let commercial = match attrs.side_use {
        SideUse::Commercial | SideUse::Mixed => true,
        SideUse::Residential | SideUse::None => false,
    };
    match (attrs.transport, commercial) {
        (Transport::Highway, _) => C::Highway,
        (Transport::HighwayRamp, _) => C::HighwayRamp,
        (Transport::Throughway, true) => C::CommercialThroughway,
        (Transport::Throughway, false) => C::ResidentialThroughway,
        (Transport::Downtown, true) => C::DowntownCommercial,
        (Transport::Downtown, false) => C::DowntownResidential,
        (Transport::Neighborhood, true) => C::NeighborhoodCommercial,
        (Transport::Neighborhood, false) => C::NeighborhoodResidential,
    }
}

/// Attributes that [`classify_street`] maps to `label`, with an explicit
/// side use. Used to build labeled fixtures from target classes.
pub fn representative_attributes(label: StreetContext) -> SegmentAttributes {
    use StreetContext as C;
    use Transport as T;
    let (side, transport, special) = match label {
        C::Alley => (SideUse::Residential, T::Neighborhood, Special::Alley),
        C::Park => (SideUse::Residential, T::Neighborhood, Special::Park),
        C::Industrial => (SideUse::Commercial, T::Neighborhood, Special::Industrial),
        C::Highway => (SideUse::Residential, T::Highway, Special::None),
        C::HighwayRamp => (SideUse::Residential, T::HighwayRamp, Special::None),
        C::CommercialThroughway => (SideUse::Commercial, T::Throughway, Special::None),
        C::ResidentialThroughway => (SideUse::Residential, T::Throughway, Special::None),
        C::DowntownCommercial => (SideUse::Commercial, T::Downtown, Special::None),
        C::DowntownResidential => (SideUse::Residential, T::Downtown, Special::None),
        C::NeighborhoodCommercial => (SideUse::Commercial, T::Neighborhood, Special::None),
        C::NeighborhoodResidential => (SideUse::Residential, T::Neighborhood, Special::None),
    };
    SegmentAttributes::new(side, transport, special)
}

/// A city's label catalog.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CityProfile {
    pub name: String,
    catalog: Vec<StreetContext>,
}

impl CityProfile {
    pub fn custom(name: impl Into<String>, catalog: Vec<StreetContext>) -> Result<Self, LabelError> {
        if catalog.is_empty() {
            return Err(LabelError::InvalidCatalog("catalog is empty".into()));
        }
        let mut seen = catalog.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != catalog.len() {
            return Err(LabelError::InvalidCatalog("catalog contains duplicates".into()));
        }
        Ok(Self { name: name.into(), catalog })
    }

    pub fn catalog(&self) -> &[StreetContext] {
        &self.catalog
    }

    pub fn contains(&self, label: StreetContext) -> bool {
        self.catalog.contains(&label)
    }

    /// Position of `label` in the catalog, used as the model class index.
    pub fn index_of(&self, label: StreetContext) -> Option<usize> {
        self.catalog.iter().position(|&c| c == label)
    }
}

/// Resolves a profile name: `SanFrancisco`, `Boston`, or
/// `Custom:Label,Label,...`.
pub fn context_catalog(profile: &str) -> Result<CityProfile, LabelError> {
    match profile.trim() {
        "SanFrancisco" => CityProfile::custom("SanFrancisco", StreetContext::ALL.to_vec()),
        "Boston" => CityProfile::custom(
            "Boston",
            StreetContext::ALL.into_iter().filter(|&c| c != StreetContext::DowntownResidential).collect(),
        ),
        other => match other.strip_prefix("Custom:") {
            Some(list) => {
                let labels = list
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(str::parse)
                    .collect::<Result<Vec<StreetContext>, _>>()?;
                CityProfile::custom(other, labels)
            }
            None => Err(LabelError::UnknownProfile { name: other.to_string() }),
        },
    }
}

/// Maps a label into a profile's catalog. `DowntownResidential` falls back
/// to `DowntownCommercial` when the profile lacks it.
pub fn remap_to_profile(label: StreetContext, profile: &CityProfile) -> Result<StreetContext, LabelError> {
    if profile.contains(label) {
        return Ok(label);
    }
    if label == StreetContext::DowntownResidential && profile.contains(StreetContext::DowntownCommercial) {
        return Ok(StreetContext::DowntownCommercial);
    }
    Err(LabelError::Unmappable { label, profile: profile.name.clone() })
}

/// One row of the bulk attribute CSV
/// (`segment_id,commercial_frac,transport,special`).
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeRow {
    pub segment_id: String,
    pub commercial_frac: Option<f64>,
    pub transport: Transport,
    pub special: Special,
}

pub fn parse_attribute_csv(text: &str) -> Result<Vec<AttributeRow>, LabelError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| LabelError::Csv(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["segment_id", "commercial_frac", "transport", "special"] {
        return Err(LabelError::Csv("header must be segment_id,commercial_frac,transport,special".into()));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| LabelError::Csv(e.to_string()))?;
        let commercial_frac = match rec[1].trim() {
            "" => None,
            s => Some(s.parse::<f64>().map_err(|_| LabelError::Csv(format!("row {}: bad commercial_frac '{s}'", i + 1)))?),
        };
        rows.push(AttributeRow {
            segment_id: rec[0].to_string(),
            commercial_frac,
            transport: rec[2].parse()?,
            special: rec[3].parse()?,
        });
    }
    Ok(rows)
}

pub fn write_attribute_csv(rows: &[AttributeRow]) -> String {
    let mut out = String::from("segment_id,commercial_frac,transport,special\n");
    for r in rows {
        let frac = r.commercial_frac.map(|f| f.to_string()).unwrap_or_default();
        let special = match r.special {
            Special::None => "None",
            Special::Alley => "Alley",
            Special::Park => "Park",
            Special::Industrial => "Industrial",
        };
        out.push_str(&format!("{},{},{:?},{}\n", r.segment_id, frac, r.transport, special));
    }
    out
}

/// Labels every segment, writing [`CONTEXT_ATTRIBUTE`] (and the confidence
/// flag when a fallback was used). Attribute rows take priority; segments
/// without a row use their own `commercial_frac`/`side_use`, `transport`
/// and `special` attributes. Labels outside the profile are remapped.
pub fn label_collection(
    collection: &mut SegmentCollection,
    rows: &[AttributeRow],
    profile: &CityProfile,
    threshold: f64,
) -> Result<(), LabelError> {
    let by_id: HashMap<&str, &AttributeRow> = rows.iter().map(|r| (r.segment_id.as_str(), r)).collect();
    for seg in collection.segments_mut() {
        let attrs = match by_id.get(seg.id()) {
            Some(row) => attributes_from_parts(row.commercial_frac, None, row.transport, row.special, threshold)?,
            None => {
                let a = &seg.attributes;
                let transport = a.get("transport").ok_or_else(|| LabelError::MissingAttributes(seg.id().to_string()))?.parse()?;
                let frac = a
                    .get("commercial_frac")
                    .map(|s| s.parse::<f64>().map_err(|_| LabelError::UnknownValue { kind: "commercial_frac", value: s.clone() }))
                    .transpose()?;
                let side = a.get("side_use").map(|s| s.parse()).transpose()?;
                let special = a.get("special").map(|s| s.parse()).transpose()?.unwrap_or(Special::None);
                attributes_from_parts(frac, side, transport, special, threshold)?
            }
        };
        let label = remap_to_profile(classify_street(&attrs), profile)?;
        seg.attributes.insert(CONTEXT_ATTRIBUTE.into(), label.name().into());
        if attrs.low_confidence() && attrs.special == Special::None {
            seg.attributes.insert(CONFIDENCE_ATTRIBUTE.into(), "low".into());
        } else {
            seg.attributes.remove(CONFIDENCE_ATTRIBUTE);
        }
    }
    Ok(())
}

fn attributes_from_parts(
    frac: Option<f64>,
    side: Option<SideUse>,
    transport: Transport,
    special: Special,
    threshold: f64,
) -> Result<SegmentAttributes, LabelError> {
    match frac {
        Some(f) => SegmentAttributes::from_fraction(f, threshold, transport, special),
        None => Ok(SegmentAttributes::new(side.unwrap_or(SideUse::None), transport, special)),
    }
}
