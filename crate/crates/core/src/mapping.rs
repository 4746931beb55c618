//! Bijections between linear physical addresses and DRAM coordinates.
//!
//! Three field orders are supported (MSB to LSB):
//!
//! * `umdam`: Row, Col_M, Bank, Rank, Channel, Col_L, Offset
//! * `conventional`: Row, Column, Bank, Rank, Channel, Offset
//! * `pim_opt`: Channel, Rank, Bank, Row, Column, Offset
//!
//! A [`DramCoord`] always names a physical cell in split-column form, so the
//! same coordinate means the same cell under every scheme. Under the schemes
//! with an undivided column, `col_m` holds the high bits and `col_l` the low
//! bits of the column index.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dram::{derive_bitfields, total_capacity_bytes, BitFields, DramConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Umdam,
    Conventional,
    PimOpt,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Umdam, Scheme::Conventional, Scheme::PimOpt];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Umdam => "umdam",
            Scheme::Conventional => "conventional",
            Scheme::PimOpt => "pim_opt",
        }
    }

    /// Field order, most significant first.
    pub fn fields(self) -> &'static [Field] {
        use Field::*;
        match self {
            Scheme::Umdam => &[Row, ColM, Bank, Rank, Channel, ColL, Offset],
            Scheme::Conventional => &[Row, Column, Bank, Rank, Channel, Offset],
            Scheme::PimOpt => &[Channel, Rank, Bank, Row, Column, Offset],
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "umdam" => Ok(Scheme::Umdam),
            "conventional" | "conv" => Ok(Scheme::Conventional),
            "pim_opt" | "pim" => Ok(Scheme::PimOpt),
            other => Err(Error::Argument(format!("unknown mapping scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    Row,
    ColM,
    Bank,
    Rank,
    Channel,
    ColL,
    /// Undivided column: `col_m` and `col_l` concatenated.
    Column,
    Offset,
}

/// One byte position in DRAM.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DramCoord {
    pub row: u32,
    pub col_m: u32,
    pub bank: u32,
    pub rank: u32,
    pub channel: u32,
    pub col_l: u32,
    pub offset: u32,
}

impl DramCoord {
    pub fn home(&self) -> BankId {
        BankId {
            channel: self.channel,
            rank: self.rank,
            bank: self.bank,
        }
    }

    /// Column index within the row, in bursts.
    pub fn column(&self, fields: &BitFields) -> u32 {
        (self.col_m << fields.col_l) | self.col_l
    }
}

impl fmt::Display for DramCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "row={} col_M={} bank={} rank={} channel={} col_L={} offset={}",
            self.row, self.col_m, self.bank, self.rank, self.channel, self.col_l, self.offset
        )
    }
}

/// A (channel, rank, bank) triple; one PIM lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BankId {
    pub channel: u32,
    pub rank: u32,
    pub bank: u32,
}

impl BankId {
    /// Lane index with channel as the least significant digit.
    pub fn lane(&self, cfg: &DramConfig) -> u32 {
        (self.bank * cfg.ranks_per_channel + self.rank) * cfg.channels + self.channel
    }

    pub fn from_lane(lane: u32, cfg: &DramConfig) -> Self {
        BankId {
            channel: lane % cfg.channels,
            rank: (lane / cfg.channels) % cfg.ranks_per_channel,
            bank: lane / (cfg.channels * cfg.ranks_per_channel),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    field: Field,
    shift: u32,
    width: u32,
}

/// A scheme bound to a configuration, with field positions precomputed.
#[derive(Debug, Clone)]
pub struct AddressMapper {
    scheme: Scheme,
    fields: BitFields,
    capacity: u64,
    slots: Vec<Slot>,
}

impl AddressMapper {
    pub fn new(scheme: Scheme, cfg: &DramConfig) -> Result<Self> {
        let fields = derive_bitfields(cfg)?;
        let capacity = total_capacity_bytes(cfg)?;
        let mut slots = Vec::with_capacity(7);
        let mut shift = 0;
        for &field in scheme.fields().iter().rev() {
            let width = width_of(&fields, field);
            slots.push(Slot {
                field,
                shift,
                width,
            });
            shift += width;
        }
        debug_assert_eq!(1u64 << shift, capacity);
        Ok(AddressMapper {
            scheme,
            fields,
            capacity,
            slots,
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn bitfields(&self) -> &BitFields {
        &self.fields
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    /// LSB position of `field` under this scheme, if the scheme has it.
    pub fn position(&self, field: Field) -> Option<u32> {
        self.slots
            .iter()
            .find(|s| s.field == field)
            .map(|s| s.shift)
    }

    pub fn encode(&self, addr: u64) -> Result<DramCoord> {
        if addr >= self.capacity {
            return Err(Error::AddressOutOfRange {
                value: addr,
                capacity: self.capacity,
            });
        }
        Ok(self.encode_unchecked(addr))
    }

    #[inline]
    pub(crate) fn encode_unchecked(&self, addr: u64) -> DramCoord {
        let mut c = DramCoord::default();
        for s in &self.slots {
            let v = ((addr >> s.shift) & mask(s.width)) as u32;
            match s.field {
                Field::Row => c.row = v,
                Field::ColM => c.col_m = v,
                Field::Bank => c.bank = v,
                Field::Rank => c.rank = v,
                Field::Channel => c.channel = v,
                Field::ColL => c.col_l = v,
                Field::Offset => c.offset = v,
                Field::Column => {
                    c.col_m = v >> self.fields.col_l;
                    c.col_l = v & mask(self.fields.col_l) as u32;
                }
            }
        }
        c
    }

    pub fn decode(&self, coord: &DramCoord) -> Result<u64> {
        check_coord(&self.fields, coord)?;
        Ok(self.decode_unchecked(coord))
    }

    #[inline]
    pub(crate) fn decode_unchecked(&self, c: &DramCoord) -> u64 {
        let mut addr = 0u64;
        for s in &self.slots {
            let v = match s.field {
                Field::Row => c.row,
                Field::ColM => c.col_m,
                Field::Bank => c.bank,
                Field::Rank => c.rank,
                Field::Channel => c.channel,
                Field::ColL => c.col_l,
                Field::Offset => c.offset,
                Field::Column => c.column(&self.fields),
            };
            addr |= (v as u64) << s.shift;
        }
        addr
    }

    /// Smallest stride of a sequential byte stream at which the channel
    /// changes. A single-channel device never switches; the whole capacity
    /// is returned.
    pub fn channel_switch_period(&self) -> u64 {
        if self.fields.channel == 0 {
            return self.capacity;
        }
        1u64 << self
            .position(Field::Channel)
            .expect("every scheme has a channel field")
    }
}

fn width_of(f: &BitFields, field: Field) -> u32 {
    match field {
        Field::Row => f.row,
        Field::ColM => f.col_m,
        Field::Bank => f.bank,
        Field::Rank => f.rank,
        Field::Channel => f.channel,
        Field::ColL => f.col_l,
        Field::Column => f.column(),
        Field::Offset => f.offset,
    }
}

#[inline]
fn mask(width: u32) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

/// Rejects coordinates with a field wider than its bit allocation.
pub fn check_coord(f: &BitFields, c: &DramCoord) -> Result<()> {
    let checks = [
        ("row", c.row, f.row),
        ("col_m", c.col_m, f.col_m),
        ("bank", c.bank, f.bank),
        ("rank", c.rank, f.rank),
        ("channel", c.channel, f.channel),
        ("col_l", c.col_l, f.col_l),
        ("offset", c.offset, f.offset),
    ];
    for (field, value, width) in checks {
        if (value as u64) > mask(width) {
            return Err(Error::CoordOverflow {
                field,
                value: value as u64,
                width,
            });
        }
    }
    Ok(())
}

pub fn encode(scheme: Scheme, cfg: &DramConfig, addr: u64) -> Result<DramCoord> {
    AddressMapper::new(scheme, cfg)?.encode(addr)
}

pub fn decode(scheme: Scheme, cfg: &DramConfig, coord: &DramCoord) -> Result<u64> {
    AddressMapper::new(scheme, cfg)?.decode(coord)
}

pub fn channel_switch_period(scheme: Scheme, cfg: &DramConfig) -> Result<u64> {
    Ok(AddressMapper::new(scheme, cfg)?.channel_switch_period())
}
