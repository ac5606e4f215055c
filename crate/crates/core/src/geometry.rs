//! Box-model geometry of an N/P nanosheet pair and its voxelization.
//!
//! Every feature is an axis-aligned box in nanometres. Wrapped features
//! (gate-all-around stacks, wrap-around contacts, rail liners) are built by
//! carving holes out of an enclosing box, so a finished [`Scene`] is a set of
//! disjoint boxes. Anything not covered by a box is inter-layer dielectric.
//!
//! Coordinates: `x` runs source to drain, `y` across the sheet width, `z` up.
//! The substrate occupies `z < substrate_thickness`; the heat-sink planes are
//! the bottom of the substrate and the top of the BEOL slab.

use serde::{Deserialize, Serialize};

use crate::{Device, Error, Flavor, Result};

/// How the two devices of a pair are placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arrangement {
    /// NSFET: N and P next to each other along `y`.
    SideBySide,
    /// CFET: N stacked over P along `z`.
    Stacked,
}

impl Arrangement {
    /// Flavor whose layout this arrangement describes.
    pub fn flavor(self) -> Flavor {
        match self {
            Arrangement::SideBySide => Flavor::Nsfet,
            Arrangement::Stacked => Flavor::Cfet,
        }
    }
}

/// Doping levels in cm^-3. Carried for reference only; their thermal effect
/// is already folded into the effective conductivities of the material table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Doping {
    pub channel_n: f64,
    pub channel_p: f64,
    pub sd_n: f64,
    pub sd_p: f64,
}

impl Default for Doping {
    fn default() -> Self {
        Doping { channel_n: 1e16, channel_p: 1e16, sd_n: 5e20, sd_p: 5e20 }
    }
}

/// Structural parameters of a device pair, lengths in nm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceGeometry {
    pub gate_length: f64,
    pub nanosheet_width: f64,
    pub nanosheet_thickness: f64,
    pub sd_length: f64,
    pub bpr_height: f64,
    pub gate_oxide: f64,
    pub high_k: f64,
    pub sheet_count: usize,
    pub sheet_vertical_pitch: f64,
    pub arrangement: Arrangement,
    /// Edge-to-edge gap between the two device envelopes.
    pub np_spacing: f64,
    pub substrate_thickness: f64,
    #[serde(default = "default_beol")]
    pub beol_thickness: f64,
    #[serde(default)]
    pub doping: Doping,
}

fn default_beol() -> f64 {
    5.0
}

impl DeviceGeometry {
    /// Side-by-side pair with 12 nm sheets.
    pub fn nsfet() -> Self {
        DeviceGeometry {
            gate_length: 12.0,
            nanosheet_width: 12.0,
            nanosheet_thickness: 5.0,
            sd_length: 10.0,
            bpr_height: 70.0,
            gate_oxide: 0.5,
            high_k: 1.5,
            sheet_count: 3,
            sheet_vertical_pitch: 12.0,
            arrangement: Arrangement::SideBySide,
            np_spacing: 15.0,
            substrate_thickness: 100.0,
            beol_thickness: default_beol(),
            doping: Doping::default(),
        }
    }

    /// Stacked pair with 25 nm sheets, N on top.
    pub fn cfet() -> Self {
        DeviceGeometry { nanosheet_width: 25.0, arrangement: Arrangement::Stacked, np_spacing: 15.0, ..Self::nsfet() }
    }

    pub fn for_flavor(flavor: Flavor) -> Self {
        match flavor {
            Flavor::Nsfet => Self::nsfet(),
            Flavor::Cfet => Self::cfet(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lengths = [
            ("gate_length", self.gate_length),
            ("nanosheet_width", self.nanosheet_width),
            ("nanosheet_thickness", self.nanosheet_thickness),
            ("sd_length", self.sd_length),
            ("bpr_height", self.bpr_height),
            ("gate_oxide", self.gate_oxide),
            ("high_k", self.high_k),
            ("sheet_vertical_pitch", self.sheet_vertical_pitch),
            ("np_spacing", self.np_spacing),
            ("substrate_thickness", self.substrate_thickness),
            ("beol_thickness", self.beol_thickness),
        ];
        for (name, v) in lengths {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.sheet_count == 0 {
            return Err(Error::Config("sheet_count must be at least 1".into()));
        }
        let dielectric = self.gate_oxide + self.high_k;
        if self.sheet_vertical_pitch - self.nanosheet_thickness < 2.0 * dielectric + GATE_METAL_MIN {
            return Err(Error::Config(format!(
                "sheet pitch {} leaves no room for the gate stack around {} nm sheets",
                self.sheet_vertical_pitch, self.nanosheet_thickness
            )));
        }
        if self.substrate_thickness < self.bpr_height + 2.0 * RAIL_LINER + 2.0 {
            return Err(Error::Config(format!("substrate ({} nm) too thin for a {} nm buried rail", self.substrate_thickness, self.bpr_height)));
        }
        Ok(())
    }
}

// Engineering dimensions not stated by the device tables (nm).
const GATE_METAL_MIN: f64 = 1.0;
const GATE_CAP_METAL: f64 = 3.0;
const GATE_SIDE_METAL: f64 = 3.0;
const BOTTOM_ISOLATION: f64 = 2.0;
const SD_OVERHANG: f64 = 2.0;
const SD_CAP: f64 = 2.0;
const CONTACT_WRAP: f64 = 3.0;
const CONTACT_TOP: f64 = 4.0;
const CONTACT_SPACER: f64 = 2.0;
const RAIL_WIDTH: f64 = 10.0;
const RAIL_LINER: f64 = 1.0;
const VIA_WIDTH: f64 = 6.0;
const X_MARGIN: f64 = 5.0;
const Y_MARGIN: f64 = 4.0;

/// Thermal properties of one material.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialProps {
    pub name: String,
    /// Thermal conductivity at 300 K, W/(K m).
    pub k300: f64,
    /// Specific heat, J/(kg K).
    pub cp: f64,
    /// kg/m^3.
    pub density: f64,
    /// `k(T) = k300 (T/300)^(-k_exponent)`.
    #[serde(default)]
    pub k_exponent: f64,
}

impl MaterialProps {
    pub fn new(name: &str, k300: f64, cp: f64, density: f64) -> Self {
        MaterialProps { name: name.to_string(), k300, cp, density, k_exponent: 0.0 }
    }

    pub fn conductivity(&self, temp: f64) -> f64 {
        if self.k_exponent == 0.0 {
            self.k300
        } else {
            self.k300 * (temp / 300.0).powf(-self.k_exponent)
        }
    }

    /// Volumetric heat capacity, J/(K m^3).
    pub fn volumetric_heat_capacity(&self) -> f64 {
        self.cp * self.density
    }
}

/// Material names used by [`build_pair`].
pub mod names {
    pub const CHANNEL: &str = "channel";
    pub const SD_N: &str = "sd_n";
    pub const SD_P: &str = "sd_p";
    pub const SIO2: &str = "sio2";
    pub const HFO2: &str = "hfo2";
    pub const TIN: &str = "tin";
    pub const SI_BULK: &str = "si_bulk";
    pub const RU: &str = "ru";
    pub const CU: &str = "cu";
    pub const W: &str = "w";
}

/// Lookup table of materials by name. Order is significant: it fixes region ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MaterialTable(pub Vec<MaterialProps>);

impl MaterialTable {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.0.iter().position(|m| m.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&MaterialProps> {
        self.0.iter().find(|m| m.name == name)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for m in &self.0 {
            if !(m.k300 > 0.0 && m.cp > 0.0 && m.density > 0.0) {
                return Err(Error::Config(format!("material `{}` needs positive k300, cp and density", m.name)));
            }
        }
        for (i, m) in self.0.iter().enumerate() {
            if self.0[..i].iter().any(|o| o.name == m.name) {
                return Err(Error::Config(format!("material `{}` listed twice", m.name)));
            }
        }
        Ok(())
    }
}

impl Default for MaterialTable {
    /// Room-temperature effective properties. Densities are handbook values;
    /// the high-k entry is a typical amorphous thin-film value.
    fn default() -> Self {
        use names::*;
        MaterialTable(vec![
            MaterialProps::new(CHANNEL, 10.0, 714.0, 2330.0),
            MaterialProps::new(SD_N, 2.2, 714.0, 2330.0),
            MaterialProps::new(SD_P, 0.67, 642.0, 3500.0),
            MaterialProps::new(SIO2, 1.4, 301.0, 2200.0),
            MaterialProps::new(HFO2, 1.0, 140.0, 9680.0),
            MaterialProps::new(TIN, 19.2, 224.0, 5220.0),
            MaterialProps::new(SI_BULK, 148.0, 714.0, 2330.0),
            MaterialProps::new(RU, 115.0, 238.0, 12370.0),
            MaterialProps::new(CU, 400.0, 383.0, 8960.0),
            MaterialProps::new(W, 175.0, 132.0, 19300.0),
        ])
    }
}

/// Axis-aligned box, nm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Aabb { min, max }
    }

    pub fn volume(&self) -> f64 {
        (0..3).map(|a| (self.max[a] - self.min[a]).max(0.0)).product()
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|a| self.max[a] - self.min[a] <= 1e-9)
    }

    pub fn intersection(&self, other: &Aabb) -> Option<Aabb> {
        let mut out = *self;
        for a in 0..3 {
            out.min[a] = self.min[a].max(other.min[a]);
            out.max[a] = self.max[a].min(other.max[a]);
        }
        (!out.is_empty()).then_some(out)
    }

    pub fn union_bounds(&self, other: &Aabb) -> Aabb {
        let mut out = *self;
        for a in 0..3 {
            out.min[a] = self.min[a].min(other.min[a]);
            out.max[a] = self.max[a].max(other.max[a]);
        }
        out
    }

    /// Grow in `y` and `z` only.
    fn grow_yz(&self, d: f64) -> Aabb {
        Aabb::new([self.min[0], self.min[1] - d, self.min[2] - d], [self.max[0], self.max[1] + d, self.max[2] + d])
    }

    /// Pieces of `self` outside `hole`, disjoint, at most six.
    pub fn subtract(&self, hole: &Aabb) -> Vec<Aabb> {
        let Some(cut) = self.intersection(hole) else {
            return vec![*self];
        };
        let mut pieces = Vec::new();
        let mut rest = *self;
        for a in 0..3 {
            if cut.min[a] > rest.min[a] {
                let mut lo = rest;
                lo.max[a] = cut.min[a];
                pieces.push(lo);
                rest.min[a] = cut.min[a];
            }
            if cut.max[a] < rest.max[a] {
                let mut hi = rest;
                hi.min[a] = cut.max[a];
                pieces.push(hi);
                rest.max[a] = cut.max[a];
            }
        }
        pieces.retain(|p| !p.is_empty());
        pieces
    }

    /// `self` minus every hole.
    pub fn carve(&self, holes: &[Aabb]) -> Vec<Aabb> {
        let mut pieces = vec![*self];
        for hole in holes {
            pieces = pieces.iter().flat_map(|p| p.subtract(hole)).collect();
        }
        pieces
    }
}

/// What a box is, independent of its material.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Substrate,
    Rail,
    RailLiner,
    RailVia,
    Channel,
    GateOxide,
    HighK,
    Gate,
    SourceDrain,
    Contact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneBox {
    pub label: String,
    pub material: String,
    pub role: Role,
    pub device: Option<Device>,
    #[serde(flatten)]
    pub aabb: Aabb,
}

/// Disjoint labelled boxes inside a bounding domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub bounds: Aabb,
    pub fill_material: String,
    /// Top of the substrate, nm.
    pub substrate_top: f64,
    pub boxes: Vec<SceneBox>,
}

impl Scene {
    pub fn new(bounds: Aabb, fill_material: &str) -> Self {
        Scene { bounds, fill_material: fill_material.to_string(), substrate_top: bounds.min[2], boxes: Vec::new() }
    }

    pub fn push(&mut self, label: impl Into<String>, material: &str, role: Role, device: Option<Device>, aabb: Aabb) {
        if aabb.is_empty() {
            return;
        }
        self.boxes.push(SceneBox { label: label.into(), material: material.to_string(), role, device, aabb });
    }

    fn push_pieces(&mut self, label: &str, material: &str, role: Role, device: Option<Device>, pieces: Vec<Aabb>) {
        for (i, p) in pieces.into_iter().enumerate() {
            self.push(format!("{label}.{i}"), material, role, device, p);
        }
    }

    /// Rejects overlapping boxes of different materials and boxes outside the domain.
    pub fn check(&self) -> Result<()> {
        for (i, a) in self.boxes.iter().enumerate() {
            for b in &self.boxes[i + 1..] {
                if a.material != b.material && a.aabb.intersection(&b.aabb).is_some() {
                    return Err(Error::Overlap { a: a.label.clone(), b: b.label.clone() });
                }
            }
            let inside = (0..3).all(|ax| a.aabb.min[ax] >= self.bounds.min[ax] - 1e-9 && a.aabb.max[ax] <= self.bounds.max[ax] + 1e-9);
            if !inside {
                return Err(Error::Geometry(format!("box `{}` leaves the domain", a.label)));
            }
        }
        Ok(())
    }

    pub fn device_boxes(&self, device: Device, role: Role) -> impl Iterator<Item = &SceneBox> {
        self.boxes.iter().filter(move |b| b.device == Some(device) && b.role == role)
    }
}

/// Footprint of one device, used for placement and for the rail/gate links.
#[derive(Debug, Clone, Copy)]
struct DeviceFrame {
    device: Device,
    y0: f64,
    base: f64,
    on_substrate: bool,
}

struct DeviceExtent {
    gate: Aabb,
    source_contact: Aabb,
    top: f64,
}

fn sheet_box(g: &DeviceGeometry, f: &DeviceFrame, s: usize) -> Aabb {
    let x0 = g.sd_length;
    let z0 = f.base + (g.sheet_vertical_pitch - g.nanosheet_thickness) + s as f64 * g.sheet_vertical_pitch;
    Aabb::new([x0, f.y0, z0], [x0 + g.gate_length, f.y0 + g.nanosheet_width, z0 + g.nanosheet_thickness])
}

fn footprint_width(g: &DeviceGeometry) -> f64 {
    g.nanosheet_width + 2.0 * (SD_OVERHANG + CONTACT_WRAP)
}

fn device_height(g: &DeviceGeometry) -> f64 {
    let top_sheet = (g.sheet_vertical_pitch - g.nanosheet_thickness) + (g.sheet_count - 1) as f64 * g.sheet_vertical_pitch + g.nanosheet_thickness;
    let gate_top = top_sheet + g.gate_oxide + g.high_k + GATE_CAP_METAL;
    let contact_top = top_sheet + SD_CAP + CONTACT_TOP;
    gate_top.max(contact_top)
}

fn add_device(scene: &mut Scene, g: &DeviceGeometry, f: &DeviceFrame) -> DeviceExtent {
    let d = f.device;
    let tag = d.tag();
    let lsd = g.sd_length;
    let (xg0, xg1) = (lsd, lsd + g.gate_length);
    let x_end = xg1 + lsd;
    let w = g.nanosheet_width;
    let dielectric = g.gate_oxide + g.high_k;

    let sheets: Vec<Aabb> = (0..g.sheet_count).map(|s| sheet_box(g, f, s)).collect();
    let top_sheet = sheets.last().map(|s| s.max[2]).unwrap_or(f.base);

    for (s, sheet) in sheets.iter().enumerate() {
        scene.push(format!("{tag}.channel{s}"), names::CHANNEL, Role::Channel, Some(d), *sheet);
        let ox = sheet.grow_yz(g.gate_oxide);
        let hk = sheet.grow_yz(dielectric);
        scene.push_pieces(&format!("{tag}.oxide{s}"), names::SIO2, Role::GateOxide, Some(d), ox.carve(&[*sheet]));
        scene.push_pieces(&format!("{tag}.highk{s}"), names::HFO2, Role::HighK, Some(d), hk.carve(&[ox]));
    }

    // Gate metal around the dielectric shells. The lower device keeps a thin
    // isolation gap above the substrate; the upper one sits on a shared gate.
    let gate_bottom = if f.on_substrate { f.base + BOTTOM_ISOLATION } else { f.base };
    let gate = Aabb::new(
        [xg0, f.y0 - dielectric - GATE_SIDE_METAL, gate_bottom],
        [xg1, f.y0 + w + dielectric + GATE_SIDE_METAL, top_sheet + dielectric + GATE_CAP_METAL],
    );
    let shells: Vec<Aabb> = sheets.iter().map(|s| s.grow_yz(dielectric)).collect();
    scene.push_pieces(&format!("{tag}.gate"), names::TIN, Role::Gate, Some(d), gate.carve(&shells));

    let sd_material = match d {
        Device::N => names::SD_N,
        Device::P => names::SD_P,
    };
    let sd_top = top_sheet + SD_CAP;
    let mut source_contact = None;
    for (side, (x0, x1)) in [("s", (0.0, xg0)), ("d", (xg1, x_end))] {
        let sd = Aabb::new([x0, f.y0 - SD_OVERHANG, f.base], [x1, f.y0 + w + SD_OVERHANG, sd_top]);
        scene.push(format!("{tag}.{side}"), sd_material, Role::SourceDrain, Some(d), sd);
        let (cx0, cx1) = if side == "s" { (x0, x1 - CONTACT_SPACER) } else { (x0 + CONTACT_SPACER, x1) };
        let wrap_bottom = sheets[0].min[2];
        let contact =
            Aabb::new([cx0, f.y0 - SD_OVERHANG - CONTACT_WRAP, wrap_bottom], [cx1, f.y0 + w + SD_OVERHANG + CONTACT_WRAP, sd_top + CONTACT_TOP]);
        scene.push_pieces(&format!("{tag}.{side}.contact"), names::W, Role::Contact, Some(d), contact.carve(&[sd]));
        if side == "s" {
            source_contact = Some(contact);
        }
    }

    DeviceExtent { gate, source_contact: source_contact.expect("source side always built"), top: f.base + device_height(g) }
}

/// Lays out the pair described by `geom` as disjoint labelled boxes.
///
/// N and P share one gate line (bridged across the gap), the P source contact
/// drops to a buried rail through a via, and a dielectric BEOL slab caps the
/// domain. `materials` must provide every name in [`names`] used here.
pub fn build_pair(geom: &DeviceGeometry, materials: &MaterialTable) -> Result<Scene> {
    geom.validate()?;
    materials.validate()?;
    for name in [names::CHANNEL, names::SD_N, names::SD_P, names::SIO2, names::HFO2, names::TIN, names::SI_BULK, names::RU, names::W] {
        if materials.get(name).is_none() {
            return Err(Error::Config(format!("material table lacks `{name}`")));
        }
    }

    let sub_top = geom.substrate_thickness;
    let fw = footprint_width(geom);
    let inset = SD_OVERHANG + CONTACT_WRAP;
    let y_start = Y_MARGIN;
    let (n_frame, p_frame) = match geom.arrangement {
        Arrangement::SideBySide => (
            DeviceFrame { device: Device::N, y0: y_start + inset, base: sub_top, on_substrate: true },
            DeviceFrame { device: Device::P, y0: y_start + fw + geom.np_spacing + inset, base: sub_top, on_substrate: true },
        ),
        Arrangement::Stacked => (
            DeviceFrame { device: Device::N, y0: y_start + inset, base: sub_top + device_height(geom) + geom.np_spacing, on_substrate: false },
            DeviceFrame { device: Device::P, y0: y_start + inset, base: sub_top, on_substrate: true },
        ),
    };

    // Rail sits beyond the P source contact in y.
    let p_contact_ymax = p_frame.y0 + geom.nanosheet_width + inset;
    let rail_y0 = p_contact_ymax - (RAIL_WIDTH - VIA_WIDTH) / 2.0;
    let y_end = rail_y0 + RAIL_WIDTH + RAIL_LINER + Y_MARGIN;
    let x_len = 2.0 * geom.sd_length + geom.gate_length;
    let dev_top = n_frame.base.max(p_frame.base) + device_height(geom);
    let bounds = Aabb::new([-X_MARGIN, 0.0, 0.0], [x_len + X_MARGIN, y_end, dev_top + geom.beol_thickness]);

    let mut scene = Scene::new(bounds, names::SIO2);
    scene.substrate_top = sub_top;

    let rail_inset = RAIL_LINER + 2.0;
    let rail =
        Aabb::new([bounds.min[0] + rail_inset, rail_y0, sub_top - geom.bpr_height], [bounds.max[0] - rail_inset, rail_y0 + RAIL_WIDTH, sub_top]);
    let liner = Aabb::new(
        [rail.min[0] - RAIL_LINER, rail.min[1] - RAIL_LINER, rail.min[2] - RAIL_LINER],
        [rail.max[0] + RAIL_LINER, rail.max[1] + RAIL_LINER, sub_top],
    );
    let substrate = Aabb::new(bounds.min, [bounds.max[0], bounds.max[1], sub_top]);
    scene.push_pieces("substrate", names::SI_BULK, Role::Substrate, None, substrate.carve(&[liner]));
    scene.push_pieces("rail.liner", names::SIO2, Role::RailLiner, None, liner.carve(&[rail]));
    scene.push("rail", names::RU, Role::Rail, None, rail);

    let p_ext = add_device(&mut scene, geom, &p_frame);
    let n_ext = add_device(&mut scene, geom, &n_frame);

    let via = Aabb::new([0.0, p_contact_ymax, sub_top], [VIA_WIDTH, p_contact_ymax + VIA_WIDTH, p_ext.source_contact.max[2]]);
    scene.push("rail.via", names::RU, Role::RailVia, None, via);

    // Shared gate line between the two devices.
    let bridge = match geom.arrangement {
        Arrangement::SideBySide => Aabb::new(
            [n_ext.gate.min[0], n_ext.gate.max[1], n_ext.gate.min[2]],
            [n_ext.gate.max[0], p_ext.gate.min[1], n_ext.gate.max[2].min(p_ext.gate.max[2])],
        ),
        Arrangement::Stacked => {
            Aabb::new([p_ext.gate.min[0], p_ext.gate.min[1], p_ext.gate.max[2]], [p_ext.gate.max[0], p_ext.gate.max[1], n_ext.gate.min[2]])
        }
    };
    scene.push("gate.bridge", names::TIN, Role::Gate, None, bridge);
    debug_assert!(n_ext.top.max(p_ext.top) <= dev_top + 1e-9);

    scene.check()?;
    Ok(scene)
}

/// Regular voxel discretization of a [`Scene`].
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub dims: [usize; 3],
    /// Voxel edge lengths, nm.
    pub voxel_size: [f64; 3],
    /// Material index per voxel, x fastest then y then z.
    pub region: Vec<u16>,
    pub materials: MaterialTable,
    /// Heated voxels per device, indexed by [`Device::index`].
    pub heaters: [Vec<usize>; 2],
    /// Voxels averaged for the device temperature, indexed by [`Device::index`].
    pub monitors: [Vec<usize>; 2],
}

impl VoxelGrid {
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        [i, j, k]
    }

    pub fn heater(&self, d: Device) -> &[usize] {
        &self.heaters[d.index()]
    }

    pub fn monitor(&self, d: Device) -> &[usize] {
        &self.monitors[d.index()]
    }

    /// Voxel volume in m^3.
    pub fn voxel_volume_m3(&self) -> f64 {
        self.voxel_size.iter().map(|v| v * 1e-9).product()
    }

    /// A homogeneous block with the given devices heating/monitoring voxel sets.
    /// Mostly useful for analytic checks of the solver.
    pub fn uniform(dims: [usize; 3], voxel_size: [f64; 3], material: MaterialProps) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        VoxelGrid {
            dims,
            voxel_size,
            region: vec![0; n],
            materials: MaterialTable(vec![material]),
            heaters: [Vec::new(), Vec::new()],
            monitors: [Vec::new(), Vec::new()],
        }
    }
}

/// Assigns each voxel the material covering most of its volume.
///
/// Uncovered volume counts toward the scene's fill material; ties go to the
/// material listed first in `materials`. Heater and monitor sets are the
/// voxels lying at least half inside a channel box of each device.
pub fn voxelize(scene: &Scene, materials: &MaterialTable, voxel_size: f64) -> Result<VoxelGrid> {
    if scene.boxes.is_empty() {
        return Err(Error::Geometry("scene has no boxes".into()));
    }
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(Error::Config(format!("voxel size must be positive, got {voxel_size}")));
    }
    let thinnest_channel = scene
        .boxes
        .iter()
        .filter(|b| b.role == Role::Channel)
        .map(|b| (0..3).map(|a| b.aabb.max[a] - b.aabb.min[a]).fold(f64::INFINITY, f64::min))
        .fold(f64::INFINITY, f64::min);
    if thinnest_channel.is_finite() && voxel_size > thinnest_channel + 1e-9 {
        return Err(Error::Geometry(format!("voxel size {voxel_size} nm exceeds the thinnest channel feature ({thinnest_channel} nm)")));
    }

    let b = scene.bounds;
    let mut dims = [0usize; 3];
    for a in 0..3 {
        let n = ((b.max[a] - b.min[a]) / voxel_size).round();
        if n < 1.0 {
            return Err(Error::Geometry("domain is thinner than one voxel".into()));
        }
        dims[a] = n as usize;
    }
    let nvox = dims[0] * dims[1] * dims[2];
    let vol = voxel_size.powi(3);

    let material_ids: Vec<usize> = scene
        .boxes
        .iter()
        .map(|bx| {
            materials.index_of(&bx.material).ok_or_else(|| Error::Config(format!("box `{}` uses unknown material `{}`", bx.label, bx.material)))
        })
        .collect::<Result<_>>()?;
    let fill = materials.index_of(&scene.fill_material).ok_or_else(|| Error::Config(format!("unknown fill material `{}`", scene.fill_material)))?;

    let mut covered = vec![0f32; nvox];
    let mut acc = vec![0f32; nvox];
    let mut best = vec![0f32; nvox];
    let mut region = vec![u16::MAX; nvox];

    let for_each_overlap = |aabb: &Aabb, f: &mut dyn FnMut(usize, f64)| {
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..3 {
            let l = ((aabb.min[a] - b.min[a]) / voxel_size).floor().max(0.0) as usize;
            let h = ((aabb.max[a] - b.min[a]) / voxel_size).ceil().max(0.0) as usize;
            lo[a] = l.min(dims[a]);
            hi[a] = h.min(dims[a]);
        }
        for k in lo[2]..hi[2] {
            let oz = overlap_1d(aabb.min[2], aabb.max[2], b.min[2] + k as f64 * voxel_size, voxel_size);
            if oz <= 0.0 {
                continue;
            }
            for j in lo[1]..hi[1] {
                let oy = overlap_1d(aabb.min[1], aabb.max[1], b.min[1] + j as f64 * voxel_size, voxel_size);
                if oy <= 0.0 {
                    continue;
                }
                for i in lo[0]..hi[0] {
                    let ox = overlap_1d(aabb.min[0], aabb.max[0], b.min[0] + i as f64 * voxel_size, voxel_size);
                    if ox > 0.0 {
                        f(i + dims[0] * (j + dims[1] * k), ox * oy * oz);
                    }
                }
            }
        }
    };

    for (m, _) in materials.0.iter().enumerate() {
        if !material_ids.contains(&m) {
            continue;
        }
        acc.iter_mut().for_each(|v| *v = 0.0);
        for (bx, _) in scene.boxes.iter().zip(&material_ids).filter(|(_, &id)| id == m) {
            for_each_overlap(&bx.aabb, &mut |idx, v| acc[idx] += v as f32);
        }
        for idx in 0..nvox {
            let a = acc[idx].min(vol as f32);
            if a > 0.0 {
                covered[idx] += a;
                if a > best[idx] {
                    best[idx] = a;
                    region[idx] = m as u16;
                }
            }
        }
    }
    for idx in 0..nvox {
        let open = vol as f32 - covered[idx];
        if region[idx] == u16::MAX || open > best[idx] || (open == best[idx] && fill < region[idx] as usize) {
            region[idx] = fill as u16;
        }
    }

    let channel_id = materials.index_of(names::CHANNEL);
    let mut heaters: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for d in Device::BOTH {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for bx in scene.device_boxes(d, Role::Channel) {
            for_each_overlap(&bx.aabb, &mut |idx, v| acc[idx] += v as f32);
        }
        heaters[d.index()] = (0..nvox).filter(|&idx| acc[idx] as f64 >= 0.5 * vol && Some(region[idx] as usize) == channel_id).collect();
    }
    let has_channels = scene.boxes.iter().any(|bx| bx.role == Role::Channel);
    if has_channels && heaters.iter().any(|h| h.is_empty()) {
        return Err(Error::Geometry("a device channel vanished at this voxel size".into()));
    }

    Ok(VoxelGrid { dims, voxel_size: [voxel_size; 3], region, materials: materials.clone(), monitors: heaters.clone(), heaters })
}

fn overlap_1d(lo: f64, hi: f64, cell_lo: f64, size: f64) -> f64 {
    (hi.min(cell_lo + size) - lo.max(cell_lo)).max(0.0)
}

/// On-disk geometry configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryConfig {
    pub geometry: DeviceGeometry,
    pub materials: MaterialTable,
    pub voxel_size_nm: f64,
}

impl GeometryConfig {
    pub fn for_flavor(flavor: Flavor) -> Self {
        GeometryConfig { geometry: DeviceGeometry::for_flavor(flavor), materials: MaterialTable::default(), voxel_size_nm: 1.0 }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: GeometryConfig = serde_json::from_str(text)?;
        cfg.geometry.validate()?;
        cfg.materials.validate()?;
        Ok(cfg)
    }

    pub fn build(&self) -> Result<(Scene, VoxelGrid)> {
        let scene = build_pair(&self.geometry, &self.materials)?;
        let grid = voxelize(&scene, &self.materials, self.voxel_size_nm)?;
        Ok((scene, grid))
    }
}
