//! Single-layer coating design for low walk-off loss.
//!
//! A quarter-wave layer gives the extreme reflectivity reachable with one
//! film; detuning the layer thickness reaches anything between that and the
//! bare-substrate Fresnel value. The figure of merit is the ratio of
//! simple-insertion to realigned loss, which is 1 when the surface
//! reflectivity satisfies the self-alignment condition.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::analytic::{
    fresnel_reflectivity, optimized_coefficient, self_alignment_reflectivity,
    simple_insertion_coefficient,
};
use crate::error::{Error, Result};
use crate::output::{self, FORMAT_VERSION};
use crate::scalar::Scalar;

/// Material table shipped with the crate (indices at 1.55 um plus the 1342 nm
/// fused silica used in the laser experiment).
pub const BUILTIN_MATERIALS: &str = include_str!("../data/materials.txt");

/// Reference wavelength of the standard design table, in metres.
pub const TABLE_WAVELENGTH: f64 = 1.55e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MaterialRole {
    Substrate,
    Coating,
    Either,
}

impl MaterialRole {
    pub fn is_substrate(self) -> bool {
        matches!(self, MaterialRole::Substrate | MaterialRole::Either)
    }

    pub fn is_coating(self) -> bool {
        matches!(self, MaterialRole::Coating | MaterialRole::Either)
    }
}

impl FromStr for MaterialRole {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "substrate" => Ok(MaterialRole::Substrate),
            "coating" => Ok(MaterialRole::Coating),
            "either" => Ok(MaterialRole::Either),
            other => Err(format!("unknown role `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaterialEntry {
    pub name: String,
    pub refractive_index: f64,
    /// Metres.
    pub reference_wavelength: f64,
    pub role: MaterialRole,
    pub notes: String,
}

impl MaterialEntry {
    pub fn new(
        name: impl Into<String>,
        refractive_index: f64,
        reference_wavelength: f64,
        role: MaterialRole,
    ) -> Result<Self> {
        if !(refractive_index > 1.0 && refractive_index.is_finite()) {
            return Err(Error::invalid(
                "refractive_index",
                "material index must exceed 1",
            ));
        }
        if !(reference_wavelength > 0.0) {
            return Err(Error::invalid("reference_wavelength", "must be positive"));
        }
        Ok(Self {
            name: name.into(),
            refractive_index,
            reference_wavelength,
            role,
            notes: String::new(),
        })
    }
}

impl fmt::Display for MaterialEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (n = {})", self.name, self.refractive_index)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MaterialDatabase {
    pub entries: Vec<MaterialEntry>,
}

impl MaterialDatabase {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_MATERIALS).expect("bundled material table parses")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Whitespace-separated `name index wavelength_um role [notes]`, `#`
    /// comments and blank lines ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| Error::Parse {
                line: i + 1,
                reason,
            };
            let mut fields = line.split_whitespace();
            let mut next = |what: &str| fields.next().ok_or_else(|| err(format!("missing {what}")));
            let name = next("name")?.to_string();
            let index: f64 = next("refractive index")?
                .parse()
                .map_err(|e| err(format!("refractive index: {e}")))?;
            let wavelength_um: f64 = next("wavelength")?
                .parse()
                .map_err(|e| err(format!("wavelength: {e}")))?;
            let role: MaterialRole = next("role")?.parse().map_err(err)?;
            let notes = fields.collect::<Vec<_>>().join(" ");
            let mut entry = MaterialEntry::new(name, index, wavelength_um * 1e-6, role)
                .map_err(|e| err(e.to_string()))?;
            entry.notes = notes;
            entries.push(entry);
        }
        if entries.is_empty() {
            return Err(Error::EmptyInput("material database"));
        }
        Ok(Self { entries })
    }

    pub fn find(&self, name: &str) -> Option<&MaterialEntry> {
        self.entries
            .iter()
            .find(|e| e.name.eq_ignore_ascii_case(name))
    }

    fn at_wavelength(&self, wavelength: f64) -> impl Iterator<Item = &MaterialEntry> {
        self.entries
            .iter()
            .filter(move |e| (e.reference_wavelength - wavelength).abs() <= 1e-6 * wavelength)
    }

    pub fn substrates_at(&self, wavelength: f64) -> Vec<MaterialEntry> {
        self.at_wavelength(wavelength)
            .filter(|e| e.role.is_substrate())
            .cloned()
            .collect()
    }

    pub fn coatings_at(&self, wavelength: f64) -> Vec<MaterialEntry> {
        self.at_wavelength(wavelength)
            .filter(|e| e.role.is_coating())
            .cloned()
            .collect()
    }
}

/// Reflectivity of one quarter-wave film of index `n_coating` on `n_substrate`
/// seen from a medium of index `n_incident`.
pub fn quarter_wave_reflectivity<T: Scalar>(n_substrate: T, n_coating: T, n_incident: T) -> T {
    let film = n_coating * n_coating;
    let outer = n_incident * n_substrate;
    let amplitude = (outer - film) / (outer + film);
    amplitude * amplitude
}

/// `L_sim / L_opt` for a surface reflectivity `r` on an etalon of index `n`.
pub fn loss_ratio<T: Scalar>(n_substrate: T, r: T) -> Result<T> {
    if !(r > T::zero() && r < T::one()) {
        return Err(Error::invalid("reflectivity", "loss ratio needs 0 < R < 1"));
    }
    if !(n_substrate >= T::one() && n_substrate.is_finite()) {
        return Err(Error::invalid(
            "refractive_index",
            "must be finite and >= 1",
        ));
    }
    Ok(simple_insertion_coefficient(r, n_substrate) / optimized_coefficient(r))
}

/// Reflectivities reachable by thinning a single film from quarter-wave down
/// to nothing, as an ordered pair.
pub fn accessible_range<T: Scalar>(n_substrate: T, n_coating: T) -> (T, T) {
    let bare = fresnel_reflectivity(n_substrate);
    let extreme = quarter_wave_reflectivity(n_substrate, n_coating, T::one());
    if bare <= extreme {
        (bare, extreme)
    } else {
        (extreme, bare)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignCell {
    pub substrate: String,
    pub n_substrate: f64,
    /// `None` for the uncoated surface.
    pub coating: Option<String>,
    pub n_coating: Option<f64>,
    pub reflectivity: f64,
    /// `None` only when the film is a perfect antireflection layer (R = 0).
    pub loss_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignTable {
    pub format_version: u32,
    pub cells: Vec<DesignCell>,
}

/// One uncoated row per substrate, then every substrate/quarter-wave-coating
/// pair in input order.
pub fn generate_design_table(
    substrates: &[MaterialEntry],
    coatings: &[MaterialEntry],
) -> Result<DesignTable> {
    if substrates.is_empty() {
        return Err(Error::EmptyInput("substrate list"));
    }
    if coatings.is_empty() {
        return Err(Error::EmptyInput("coating list"));
    }
    let mut cells = Vec::with_capacity(substrates.len() * (coatings.len() + 1));
    for s in substrates {
        let r = fresnel_reflectivity(s.refractive_index);
        cells.push(DesignCell {
            substrate: s.name.clone(),
            n_substrate: s.refractive_index,
            coating: None,
            n_coating: None,
            reflectivity: r,
            loss_ratio: loss_ratio(s.refractive_index, r).ok(),
        });
    }
    for c in coatings {
        for s in substrates {
            let r = quarter_wave_reflectivity(s.refractive_index, c.refractive_index, 1.0);
            cells.push(DesignCell {
                substrate: s.name.clone(),
                n_substrate: s.refractive_index,
                coating: Some(c.name.clone()),
                n_coating: Some(c.refractive_index),
                reflectivity: r,
                loss_ratio: loss_ratio(s.refractive_index, r).ok(),
            });
        }
    }
    Ok(DesignTable {
        format_version: FORMAT_VERSION,
        cells,
    })
}

impl DesignTable {
    pub fn cell(&self, substrate: &str, coating: Option<&str>) -> Option<&DesignCell> {
        self.cells
            .iter()
            .find(|c| c.substrate == substrate && c.coating.as_deref() == coating)
    }

    /// Columns `substrate,n_substrate,coating,n_coating,reflectivity,loss_ratio`;
    /// empty coating fields mark the uncoated rows.
    pub fn write_csv<W: Write>(&self, mut out: W, timestamp: Option<u64>) -> Result<()> {
        output::write_header(&mut out, "design-table", timestamp, &[])?;
        output::write_csv_rows(out, &self.cells)
    }

    pub fn to_json(&self, timestamp: Option<u64>) -> Result<String> {
        #[derive(Serialize)]
        struct Doc<'a> {
            format_version: u32,
            timestamp: Option<u64>,
            cells: &'a [DesignCell],
        }
        Ok(serde_json::to_string_pretty(&Doc {
            format_version: self.format_version,
            timestamp,
            cells: &self.cells,
        })?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoatingDesign {
    pub substrate: MaterialEntry,
    pub coating: Option<MaterialEntry>,
    /// Quarter-wave reflectivity (Fresnel reflectivity when uncoated).
    pub layer_reflectivity: f64,
    /// Loss ratio at `layer_reflectivity`.
    pub loss_ratio: f64,
    pub accessible_range: (f64, f64),
    /// Self-alignment reflectivity of the substrate.
    pub target_reflectivity: f64,
    /// Whether detuning the film thickness can hit `target_reflectivity`.
    pub reachable: bool,
}

/// Candidate coatings ranked by how close their quarter-wave loss ratio is to 1
/// (ties by name).
pub fn recommend_coating(
    substrate: &MaterialEntry,
    coatings: &[MaterialEntry],
) -> Result<Vec<CoatingDesign>> {
    if coatings.is_empty() {
        return Err(Error::EmptyInput("coating candidates"));
    }
    let n = substrate.refractive_index;
    let target = self_alignment_reflectivity(n);
    let mut designs: Vec<CoatingDesign> = coatings
        .iter()
        .map(|c| {
            let r = quarter_wave_reflectivity(n, c.refractive_index, 1.0);
            let range = accessible_range(n, c.refractive_index);
            CoatingDesign {
                substrate: substrate.clone(),
                coating: Some(c.clone()),
                layer_reflectivity: r,
                loss_ratio: loss_ratio(n, r).unwrap_or(f64::INFINITY),
                accessible_range: range,
                target_reflectivity: target,
                reachable: range.0 <= target && target <= range.1,
            }
        })
        .collect();
    designs.sort_by(|a, b| {
        let ka = (a.loss_ratio - 1.0).abs();
        let kb = (b.loss_ratio - 1.0).abs();
        ka.total_cmp(&kb).then_with(|| {
            let name = |d: &CoatingDesign| {
                d.coating
                    .as_ref()
                    .map(|c| c.name.clone())
                    .unwrap_or_default()
            };
            name(a).cmp(&name(b))
        })
    });
    Ok(designs)
}
