//! Per-device controller-row-address remapping.
//!
//! Each DRAM in a rank applies its own bijective map from controller row
//! addresses to internal bank rows (plus the usual spare-row repair
//! indirection). When the maps are chosen so that no two controller addresses
//! are internal neighbors in more than one device, a successful RowHammer
//! attack corrupts a given victim controller address in at most one device,
//! which symbol-level SDDC can correct.
//!
//! The default map is a circular left shift of the row address by the device
//! ID; an LFSR-based permutation is available behind the same interface.
//! [`RankGeometry::verify_unique_neighbors`] checks the unique-neighbor
//! property exhaustively rather than assuming it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A controller row address, always `< 2^width` for the configured width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RowAddress(pub u32);

/// An internal row index in one device. Values `>= 2^width` address the
/// spare-row region (`2^width + spare_index`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InternalRow(pub u32);

impl std::fmt::Display for RowAddress {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#06x}", self.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RemapError {
    #[error("row address {0:#x} does not fit in {1} bits")]
    AddressOutOfRange(u32, u8),
    #[error("spare row {0:#x} has no controller address (unused spare)")]
    UnmappedSpare(u32),
    #[error("internal row {0:#x} was repaired away and holds no data")]
    VacatedRow(u32),
    #[error("device {device}: repair table invalid: {reason}")]
    BadRepairTable { device: u8, reason: String },
}

/// The remapping function applied by one device before repair indirection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RemapFn {
    /// Circular left shift by `shift` bits within the row-address width.
    Rotate { shift: u8 },
    /// `steps` applications of a Galois LFSR step with the given tap mask.
    /// The tap mask must have bit 0 set (required for invertibility); state 0
    /// is a fixed point, all other states permute.
    LfsrPermute { taps: u32, steps: u32 },
}

impl RemapFn {
    pub fn identity() -> Self {
        RemapFn::Rotate { shift: 0 }
    }

    fn rotate_left(value: u32, shift: u8, width: u8) -> u32 {
        let mask = ((1u64 << width) - 1) as u32;
        let s = shift % width;
        if s == 0 {
            return value & mask;
        }
        ((value << s) | (value >> (width - s))) & mask
    }

    fn lfsr_step(value: u32, taps: u32, width: u8) -> u32 {
        let mask = ((1u64 << width) - 1) as u32;
        let msb = (value >> (width - 1)) & 1;
        let mut next = (value << 1) & mask;
        if msb == 1 {
            next ^= taps & mask;
        }
        next
    }

    fn lfsr_unstep(value: u32, taps: u32, width: u8) -> u32 {
        let mask = ((1u64 << width) - 1) as u32;
        // Bit 0 of the stepped value equals the consumed msb because the tap
        // mask has bit 0 set and the shifted-in bit is 0.
        let msb = value & 1;
        let mut prev = value;
        if msb == 1 {
            prev ^= taps & mask;
        }
        (prev >> 1) | (msb << (width - 1))
    }

    /// Forward map over the regular address space (no repair indirection).
    pub fn apply(&self, value: u32, width: u8) -> u32 {
        match *self {
            RemapFn::Rotate { shift } => Self::rotate_left(value, shift, width),
            RemapFn::LfsrPermute { taps, steps } => {
                let mut v = value;
                for _ in 0..steps {
                    v = Self::lfsr_step(v, taps, width);
                }
                v
            }
        }
    }

    /// Inverse of [`RemapFn::apply`].
    pub fn invert(&self, value: u32, width: u8) -> u32 {
        match *self {
            RemapFn::Rotate { shift } => Self::rotate_left(value, width - (shift % width), width),
            RemapFn::LfsrPermute { taps, steps } => {
                let mut v = value;
                for _ in 0..steps {
                    v = Self::lfsr_unstep(v, taps, width);
                }
                v
            }
        }
    }
}

/// One device's complete controller-address-to-internal-row mapping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviceMap {
    pub device_id: u8,
    /// Row-address width in bits.
    pub width: u8,
    pub remap: RemapFn,
    /// Repaired internal rows: post-remap internal row -> spare index.
    #[serde(default)]
    pub repairs: BTreeMap<u32, u32>,
    #[serde(default)]
    pub spare_count: u32,
}

impl DeviceMap {
    pub fn rotate(device_id: u8, width: u8, shift: u8) -> Self {
        DeviceMap {
            device_id,
            width,
            remap: RemapFn::Rotate { shift },
            repairs: BTreeMap::new(),
            spare_count: 0,
        }
    }

    pub fn rows(&self) -> u32 {
        1u32 << self.width
    }

    /// First spare-region internal row index.
    pub fn spare_base(&self) -> u32 {
        self.rows()
    }

    pub fn validate(&self) -> Result<(), RemapError> {
        let mut seen = std::collections::HashSet::new();
        for (&row, &spare) in &self.repairs {
            if row >= self.rows() {
                return Err(RemapError::BadRepairTable {
                    device: self.device_id,
                    reason: format!("repaired row {row:#x} outside address space"),
                });
            }
            if spare >= self.spare_count {
                return Err(RemapError::BadRepairTable {
                    device: self.device_id,
                    reason: format!("spare index {spare} >= spare_count {}", self.spare_count),
                });
            }
            if !seen.insert(spare) {
                return Err(RemapError::BadRepairTable {
                    device: self.device_id,
                    reason: format!("spare index {spare} used twice"),
                });
            }
        }
        Ok(())
    }

    /// Map a controller row address to the internal row that stores its data.
    pub fn map_row(&self, addr: RowAddress) -> Result<InternalRow, RemapError> {
        if addr.0 >= self.rows() {
            return Err(RemapError::AddressOutOfRange(addr.0, self.width));
        }
        let r = self.remap.apply(addr.0, self.width);
        Ok(match self.repairs.get(&r) {
            Some(&spare) => InternalRow(self.spare_base() + spare),
            None => InternalRow(r),
        })
    }

    /// Recover the controller address stored at an internal row.
    ///
    /// Fails for unused spare rows and for defective rows that were repaired
    /// away; neither holds addressable data.
    pub fn inverse_map(&self, internal: InternalRow) -> Result<RowAddress, RemapError> {
        let base = self.spare_base();
        if internal.0 >= base {
            let spare = internal.0 - base;
            let row = self
                .repairs
                .iter()
                .find(|(_, &s)| s == spare)
                .map(|(&r, _)| r)
                .ok_or(RemapError::UnmappedSpare(internal.0))?;
            return Ok(RowAddress(self.remap.invert(row, self.width)));
        }
        if self.repairs.contains_key(&internal.0) {
            return Err(RemapError::VacatedRow(internal.0));
        }
        Ok(RowAddress(self.remap.invert(internal.0, self.width)))
    }

    /// Internal rows at exactly `level` physical rows from `internal`, staying
    /// inside the row's region. The regular array and the spare region are
    /// separate structures; rows at the region boundary are one-sided.
    pub fn internal_neighbors(&self, internal: InternalRow, level: u32) -> Vec<InternalRow> {
        let base = self.spare_base();
        let (lo, hi) = if internal.0 < base {
            (0, base)
        } else {
            (base, base + self.spare_count)
        };
        let mut out = Vec::with_capacity(2);
        if internal.0 >= lo + level {
            out.push(InternalRow(internal.0 - level));
        }
        if internal.0 + level < hi {
            out.push(InternalRow(internal.0 + level));
        }
        out
    }

    /// Controller addresses whose data sits `level` rows from the aggressor's
    /// internal row in this device. Edge rows yield one-sided sets.
    pub fn victim_addresses(&self, aggressor: RowAddress, level: u32) -> Result<Vec<RowAddress>, RemapError> {
        let internal = self.map_row(aggressor)?;
        let mut out: Vec<RowAddress> = self
            .internal_neighbors(internal, level)
            .into_iter()
            .filter_map(|n| self.inverse_map(n).ok())
            .collect();
        out.sort_unstable();
        Ok(out)
    }

    /// The aggressor controller address whose internal row sits `level` rows
    /// from `victim`'s internal row, on the chosen side.
    pub fn aggressor_for_victim(
        &self,
        victim: RowAddress,
        level: u32,
        upper: bool,
    ) -> Result<RowAddress, RemapError> {
        let internal = self.map_row(victim)?;
        let base = self.spare_base();
        let (lo, hi) = if internal.0 < base {
            (0, base)
        } else {
            (base, base + self.spare_count)
        };
        let target = if upper {
            internal.0.checked_add(level).filter(|&t| t < hi)
        } else {
            internal.0.checked_sub(level).filter(|&t| t >= lo)
        };
        let target = target.ok_or(RemapError::UnmappedSpare(internal.0))?;
        self.inverse_map(InternalRow(target))
    }
}

/// Verification status of a uniqueness report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyStatus {
    Exhaustive,
    Sampled,
    NotVerified,
}

/// Result of checking the unique-neighbor property over a rank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniquenessReport {
    /// Controller address pairs that are internal neighbors (within the
    /// checked radius) in two or more devices, with the devices involved.
    pub violations: Vec<(u32, u32, Vec<u8>)>,
    /// Number of (device, internal neighbor pair) combinations examined.
    pub checked_pairs: u64,
    pub status: VerifyStatus,
}

impl UniquenessReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty() && self.status == VerifyStatus::Exhaustive
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Options for [`RankGeometry::verify_unique_neighbors`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VerifyOptions {
    /// Widths up to this many bits are verified exhaustively.
    pub max_exhaustive_width: u8,
    /// Internal rows sampled per device above the exhaustive cap; zero
    /// disables sampling and yields `NotVerified`.
    pub sample_rows: u64,
    pub sample_seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            max_exhaustive_width: 20,
            sample_rows: 1 << 20,
            sample_seed: 0,
        }
    }
}

/// Per-device shielding analysis of the spare-row region.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShieldingReport {
    pub device_id: u8,
    /// True when every pair of used spare rows is separated by at least
    /// `blast_radius` unused spares.
    pub shielded: bool,
    /// Used spare index pairs closer than the blast radius.
    pub gap_violations: Vec<(u32, u32)>,
    /// Controller address pairs made neighbors through this device's spare
    /// region that are also neighbor pairs in another device (binning fail).
    pub duplicated_pairs: Vec<(u32, u32, Vec<u8>)>,
}

/// A rank of devices sharing one controller address space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankGeometry {
    pub data_devices: u8,
    pub ecc_devices: u8,
    pub row_width: u8,
    pub banks_per_rank: u16,
    /// Maximum victim distance R.
    pub blast_radius: u8,
    pub device_maps: Vec<DeviceMap>,
}

impl RankGeometry {
    /// The shift-by-device-ID mapping: device `d` rotates addresses left by
    /// `d` bits.
    pub fn shift_by_id(data_devices: u8, ecc_devices: u8, row_width: u8) -> Self {
        let total = data_devices + ecc_devices;
        RankGeometry {
            data_devices,
            ecc_devices,
            row_width,
            banks_per_rank: 32,
            blast_radius: 1,
            device_maps: (0..total)
                .map(|d| DeviceMap::rotate(d, row_width, d % row_width))
                .collect(),
        }
    }

    /// All devices map identically (remapping disabled).
    pub fn no_remap(data_devices: u8, ecc_devices: u8, row_width: u8) -> Self {
        let total = data_devices + ecc_devices;
        RankGeometry {
            data_devices,
            ecc_devices,
            row_width,
            banks_per_rank: 32,
            blast_radius: 1,
            device_maps: (0..total).map(|d| DeviceMap::rotate(d, row_width, 0)).collect(),
        }
    }

    pub fn devices(&self) -> u8 {
        self.data_devices + self.ecc_devices
    }

    pub fn rows(&self) -> u32 {
        1u32 << self.row_width
    }

    pub fn device(&self, id: u8) -> &DeviceMap {
        &self.device_maps[id as usize]
    }

    pub fn validate(&self) -> Result<(), RemapError> {
        for dev in &self.device_maps {
            dev.validate()?;
        }
        Ok(())
    }

    /// True when `(a, b)` are internal rows at distance `<= radius` in the
    /// same region of device `dev`.
    fn neighbors_in_device(&self, dev: &DeviceMap, a: RowAddress, b: RowAddress, radius: u32) -> bool {
        let (ia, ib) = match (dev.map_row(a), dev.map_row(b)) {
            (Ok(x), Ok(y)) => (x.0, y.0),
            _ => return false,
        };
        let base = dev.spare_base();
        if (ia < base) != (ib < base) {
            return false;
        }
        let d = ia.abs_diff(ib);
        d >= 1 && d <= radius
    }

    /// Exhaustively (or by sampling above the width cap) enumerate, for every
    /// device, every internal neighbor pair within `radius`, and report every
    /// controller address pair that is a neighbor pair in two or more devices.
    pub fn verify_unique_neighbors(&self, radius: u32, opts: VerifyOptions) -> UniquenessReport {
        use std::collections::HashMap;

        let exhaustive = self.row_width <= opts.max_exhaustive_width;
        if !exhaustive && opts.sample_rows == 0 {
            return UniquenessReport {
                violations: Vec::new(),
                checked_pairs: 0,
                status: VerifyStatus::NotVerified,
            };
        }

        // Row set to enumerate: full space, or a deterministic sample of it.
        let rows: Vec<u32> = if exhaustive {
            (0..self.rows()).collect()
        } else {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(opts.sample_seed);
            (0..opts.sample_rows).map(|_| rng.gen_range(0..self.rows())).collect()
        };

        let mut checked: u64 = 0;
        let mut multi: HashMap<(u32, u32), Vec<u8>> = HashMap::new();

        for dev in &self.device_maps {
            let base = dev.spare_base();
            let mut record = |lo: InternalRow, hi: InternalRow, multi: &mut HashMap<(u32, u32), Vec<u8>>| {
                if let (Ok(a), Ok(b)) = (dev.inverse_map(lo), dev.inverse_map(hi)) {
                    checked += 1;
                    let key = (a.0.min(b.0), a.0.max(b.0));
                    // Only retain pairs that can become violations: check the
                    // other devices directly instead of storing everything.
                    let mut owners = Vec::new();
                    for other in &self.device_maps {
                        if self.neighbors_in_device(other, RowAddress(key.0), RowAddress(key.1), radius) {
                            owners.push(other.device_id);
                        }
                    }
                    if owners.len() >= 2 {
                        multi.insert(key, owners);
                    }
                }
            };
            for &i in &rows {
                for level in 1..=radius {
                    if i + level < base {
                        record(InternalRow(i), InternalRow(i + level), &mut multi);
                    }
                }
            }
            // Spare region pairs (always enumerated in full; spare counts are
            // small).
            for s in 0..dev.spare_count {
                for level in 1..=radius {
                    if s + level < dev.spare_count {
                        record(InternalRow(base + s), InternalRow(base + s + level), &mut multi);
                    }
                }
            }
        }

        let mut violations: Vec<(u32, u32, Vec<u8>)> =
            multi.into_iter().map(|((a, b), devs)| (a, b, devs)).collect();
        violations.sort_unstable();

        UniquenessReport {
            violations,
            checked_pairs: checked,
            status: if exhaustive { VerifyStatus::Exhaustive } else { VerifyStatus::Sampled },
        }
    }

    /// Shielding and binning analysis for one device's repair table.
    pub fn check_repair_shielding(&self, device_id: u8) -> ShieldingReport {
        let dev = self.device(device_id);
        let radius = self.blast_radius as u32;

        let mut used: Vec<u32> = dev.repairs.values().copied().collect();
        used.sort_unstable();
        let mut gap_violations = Vec::new();
        for w in used.windows(2) {
            // Unused spares strictly between the two used entries.
            if w[1] - w[0] - 1 < radius {
                gap_violations.push((w[0], w[1]));
            }
        }

        // Controller pairs induced through the spare region of this device,
        // checked for duplication in any other device.
        let base = dev.spare_base();
        let mut duplicated = Vec::new();
        for s in 0..dev.spare_count {
            for level in 1..=radius {
                if s + level >= dev.spare_count {
                    continue;
                }
                let (lo, hi) = (InternalRow(base + s), InternalRow(base + s + level));
                if let (Ok(a), Ok(b)) = (dev.inverse_map(lo), dev.inverse_map(hi)) {
                    let key = (a.0.min(b.0), a.0.max(b.0));
                    let owners: Vec<u8> = self
                        .device_maps
                        .iter()
                        .filter(|other| {
                            self.neighbors_in_device(other, RowAddress(key.0), RowAddress(key.1), radius)
                        })
                        .map(|other| other.device_id)
                        .collect();
                    if owners.len() >= 2 {
                        duplicated.push((key.0, key.1, owners));
                    }
                }
            }
        }
        duplicated.sort_unstable();
        duplicated.dedup();

        ShieldingReport {
            device_id,
            shielded: gap_violations.is_empty(),
            gap_violations,
            duplicated_pairs: duplicated,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fig4_shift_example() {
        let dev = DeviceMap::rotate(2, 16, 2);
        assert_eq!(dev.map_row(RowAddress(0x8000)).unwrap(), InternalRow(0x0002));
    }

    #[test]
    fn fig5a_table_rows() {
        for shift in 0..=2u8 {
            let dev = DeviceMap::rotate(shift, 16, shift);
            assert_eq!(dev.map_row(RowAddress(0x0000)).unwrap(), InternalRow(0));
            assert_eq!(dev.map_row(RowAddress(0x0001)).unwrap(), InternalRow(1 << shift));
        }
    }

    #[test]
    fn zero_is_rotation_fixed_point() {
        for shift in 0..16u8 {
            let dev = DeviceMap::rotate(0, 16, shift);
            assert_eq!(dev.map_row(RowAddress(0)).unwrap(), InternalRow(0));
        }
    }

    #[test]
    fn inverse_examples() {
        let dev = DeviceMap::rotate(1, 16, 1);
        assert_eq!(dev.inverse_map(InternalRow(0x0002)).unwrap(), RowAddress(0x0001));
        assert_eq!(dev.inverse_map(InternalRow(0x0000)).unwrap(), RowAddress(0x0000));
    }

    #[test]
    fn round_trip_exhaustive_width16() {
        for shift in 0..16u8 {
            let dev = DeviceMap::rotate(0, 16, shift);
            for a in 0..(1u32 << 16) {
                let m = dev.map_row(RowAddress(a)).unwrap();
                assert_eq!(dev.inverse_map(m).unwrap(), RowAddress(a));
            }
        }
    }

    #[test]
    fn lfsr_permute_round_trip() {
        let remap = RemapFn::LfsrPermute { taps: 0xB401, steps: 5 };
        let dev = DeviceMap {
            device_id: 0,
            width: 16,
            remap,
            repairs: BTreeMap::new(),
            spare_count: 0,
        };
        let mut seen = std::collections::HashSet::new();
        for a in 0..(1u32 << 16) {
            let m = dev.map_row(RowAddress(a)).unwrap();
            assert!(seen.insert(m.0), "LFSR permutation not injective at {a:#x}");
            assert_eq!(dev.inverse_map(m).unwrap(), RowAddress(a));
        }
    }

    #[test]
    fn fig5b_victims() {
        let dev0 = DeviceMap::rotate(0, 16, 0);
        let dev1 = DeviceMap::rotate(1, 16, 1);
        assert_eq!(
            dev0.victim_addresses(RowAddress(0x0001), 1).unwrap(),
            vec![RowAddress(0x0000), RowAddress(0x0002)]
        );
        assert_eq!(
            dev1.victim_addresses(RowAddress(0x0001), 1).unwrap(),
            vec![RowAddress(0x8000), RowAddress(0x8001)]
        );
    }

    #[test]
    fn edge_rows_one_sided() {
        let dev0 = DeviceMap::rotate(0, 16, 0);
        assert_eq!(dev0.victim_addresses(RowAddress(0x0000), 1).unwrap(), vec![RowAddress(0x0001)]);
        assert_eq!(dev0.victim_addresses(RowAddress(0xFFFF), 1).unwrap(), vec![RowAddress(0xFFFE)]);
    }

    #[test]
    fn victim_symmetry_sampled() {
        let dev = DeviceMap::rotate(3, 16, 3);
        for a in (1..0xFFFEu32).step_by(97) {
            for &v in &dev.victim_addresses(RowAddress(a), 1).unwrap() {
                let back = dev.victim_addresses(v, 1).unwrap();
                assert!(back.contains(&RowAddress(a)), "symmetry broke at {a:#x} / {v:?}");
            }
        }
    }

    #[test]
    fn repaired_row_goes_to_spare() {
        let mut dev = DeviceMap::rotate(0, 8, 0);
        dev.spare_count = 8;
        dev.repairs.insert(0x42, 3);
        assert_eq!(dev.map_row(RowAddress(0x42)).unwrap(), InternalRow(256 + 3));
        assert_eq!(dev.inverse_map(InternalRow(256 + 3)).unwrap(), RowAddress(0x42));
        assert_eq!(dev.inverse_map(InternalRow(0x42)), Err(RemapError::VacatedRow(0x42)));
        assert_eq!(dev.inverse_map(InternalRow(256 + 5)), Err(RemapError::UnmappedSpare(256 + 5)));
    }

    #[test]
    fn aggressor_for_victim_matches_fig5b() {
        // To flip controller address 0x0000, hammer 0x0001 in device 0 but
        // 0x8000 in device 1.
        let dev0 = DeviceMap::rotate(0, 16, 0);
        let dev1 = DeviceMap::rotate(1, 16, 1);
        assert_eq!(dev0.aggressor_for_victim(RowAddress(0), 1, true).unwrap(), RowAddress(0x0001));
        assert_eq!(dev1.aggressor_for_victim(RowAddress(0), 1, true).unwrap(), RowAddress(0x8000));
    }

    #[test]
    fn identical_shifts_violate_everywhere() {
        let rank = RankGeometry {
            data_devices: 2,
            ecc_devices: 0,
            row_width: 8,
            banks_per_rank: 32,
            blast_radius: 1,
            device_maps: vec![DeviceMap::rotate(0, 8, 0), DeviceMap::rotate(1, 8, 0)],
        };
        let report = rank.verify_unique_neighbors(1, VerifyOptions::default());
        assert_eq!(report.violations.len(), 255);
        assert!(report.violations.iter().all(|(_, _, d)| d == &vec![0, 1]));
    }

    #[test]
    fn shielding_empty_table_vacuous() {
        let mut rank = RankGeometry::shift_by_id(2, 0, 8);
        rank.device_maps[0].spare_count = 16;
        let report = rank.check_repair_shielding(0);
        assert!(report.shielded);
        assert!(report.gap_violations.is_empty());
    }

    #[test]
    fn shielding_adjacent_spares_flagged() {
        let mut rank = RankGeometry::shift_by_id(2, 0, 8);
        let dev = &mut rank.device_maps[0];
        dev.spare_count = 16;
        dev.repairs.insert(0x10, 4);
        dev.repairs.insert(0x20, 5);
        let report = rank.check_repair_shielding(0);
        assert!(!report.shielded);
        assert_eq!(report.gap_violations, vec![(4, 5)]);
    }
}
