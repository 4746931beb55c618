//! Tile-based weight placement.
//!
//! A K x N weight matrix (K is the reduction dimension, N indexes output
//! neurons) is cut into tiles `tile_height` elements tall, where
//! `tile_height * element_size` equals the interleave granularity, and
//! `tile_width` columns wide, one column per bank in the package. Inside a
//! tile the data is column-major; tiles are ordered column-major too. Every
//! element then gets its DRAM coordinate from three independent pieces:
//!
//! * `(col_L, offset)` from the byte offset of the element within its tile column,
//! * `(bank, rank, channel)` from the column index within the tile, channel first,
//! * `(row, col_M)` from the linear tile index `tile_col * num_tile_rows + tile_row`.
//!
//! Under the `umdam` address mapping this coordinate is exactly the linear
//! address `base + tile_index * tile_bytes + local_col * granularity + byte`,
//! so each tile is one contiguous run for the NPU while every matrix column
//! stays in one bank for PIM.
//!
//! The same module also provides the two baseline placements used when the
//! UMDAM mapping is not available: [`TiledLayout`] (same tile order under an
//! arbitrary mapping, what the NPU consumes) and [`PimOptLayout`] (each
//! column contiguous inside its bank).

use serde::Serialize;

use crate::dram::{derive_bitfields, total_capacity_bytes, BitFields, DramConfig};
use crate::error::{Error, Result};
use crate::mapping::{AddressMapper, BankId, DramCoord, Scheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TileGeometry {
    pub tile_height_elems: u64,
    pub tile_width_elems: u64,
    pub num_tile_rows: u64,
    pub num_tile_cols: u64,
}

impl TileGeometry {
    pub fn new(cfg: &DramConfig, k: u64, n: u64) -> Self {
        let tile_height_elems = cfg.interleave_granularity_bytes / cfg.element_size_bytes;
        let tile_width_elems = cfg.total_banks() as u64;
        TileGeometry {
            tile_height_elems,
            tile_width_elems,
            num_tile_rows: k.div_ceil(tile_height_elems),
            num_tile_cols: n.div_ceil(tile_width_elems),
        }
    }

    pub fn num_tiles(&self) -> u64 {
        self.num_tile_rows * self.num_tile_cols
    }

    pub fn padded_rows(&self) -> u64 {
        self.num_tile_rows * self.tile_height_elems
    }

    pub fn padded_cols(&self) -> u64 {
        self.num_tile_cols * self.tile_width_elems
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MatrixDims {
    pub rows: u64,
    pub cols: u64,
    pub padded_rows: u64,
    pub padded_cols: u64,
}

/// One tile-height slice of one matrix column: `tile_height` consecutive
/// elements, `interleave_granularity` bytes. Every layout here keeps a
/// granule contiguous, so granules are the unit of re-layout copies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Granule {
    pub tile_row: u64,
    pub col: u64,
}

/// Common view over every weight placement.
pub trait WeightLayout: Sync {
    fn config(&self) -> &DramConfig;
    fn dims(&self) -> MatrixDims;
    fn geometry(&self) -> TileGeometry;
    /// Address mapping under which [`WeightLayout::linear_address`] is meaningful.
    fn scheme(&self) -> Scheme;

    /// Coordinate of element `(i, j)`; valid for the padded extent.
    fn coord(&self, i: u64, j: u64) -> DramCoord;

    fn linear_address(&self, i: u64, j: u64) -> u64;

    fn column_home(&self, j: u64) -> BankId {
        self.coord(0, j).home()
    }

    /// Granules in ascending linear-address order.
    fn granules(&self) -> Box<dyn Iterator<Item = Granule> + Send + '_>;

    fn footprint_bytes(&self) -> u64 {
        let d = self.dims();
        d.padded_rows * d.padded_cols * self.config().element_size_bytes
    }

    fn granule_bytes(&self) -> u64 {
        self.config().interleave_granularity_bytes
    }
}

fn check_dims(k: u64, n: u64) -> Result<()> {
    if k == 0 || n == 0 {
        return Err(Error::Argument(format!(
            "matrix dims must be nonzero, got {k}x{n}"
        )));
    }
    Ok(())
}

/// Tile-ordered granules: tile index ascending, then column within tile.
fn tiled_granules(g: TileGeometry) -> impl Iterator<Item = Granule> + Send {
    (0..g.num_tiles()).flat_map(move |t| {
        let tile_col = t / g.num_tile_rows;
        let tile_row = t % g.num_tile_rows;
        (0..g.tile_width_elems).map(move |lc| Granule {
            tile_row,
            col: tile_col * g.tile_width_elems + lc,
        })
    })
}

/// UMDAM placement of one weight matrix.
#[derive(Debug, Clone)]
pub struct LayoutPlan {
    cfg: DramConfig,
    fields: BitFields,
    rows: u64,
    cols: u64,
    geometry: TileGeometry,
    base: u64,
    base_tile: u64,
}

/// Bytes in one full tile (`granularity * banks`).
pub fn tile_bytes(cfg: &DramConfig) -> u64 {
    cfg.interleave_granularity_bytes * cfg.total_banks() as u64
}

pub fn plan_layout(cfg: &DramConfig, k: u64, n: u64, base: u64) -> Result<LayoutPlan> {
    check_dims(k, n)?;
    let fields = derive_bitfields(cfg)?;
    let capacity = total_capacity_bytes(cfg)?;
    let tb = tile_bytes(cfg);
    if !base.is_multiple_of(tb) {
        return Err(Error::Argument(format!(
            "base {base:#x} is not aligned to the {tb}-byte tile size"
        )));
    }
    let geometry = TileGeometry::new(cfg, k, n);
    let footprint = geometry.num_tiles() * tb;
    let end = base.saturating_add(footprint);
    if end > capacity {
        return Err(Error::Capacity {
            needed: end,
            available: capacity,
        });
    }
    Ok(LayoutPlan {
        cfg: cfg.clone(),
        fields,
        rows: k,
        cols: n,
        geometry,
        base,
        base_tile: base / tb,
    })
}

impl LayoutPlan {
    pub fn base(&self) -> u64 {
        self.base
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }

    pub fn cols(&self) -> u64 {
        self.cols
    }

    pub fn bitfields(&self) -> &BitFields {
        &self.fields
    }

    pub fn element_address(&self, i: u64, j: u64) -> Result<DramCoord> {
        if i >= self.rows || j >= self.cols {
            return Err(Error::Argument(format!(
                "element ({i}, {j}) outside {}x{} matrix",
                self.rows, self.cols
            )));
        }
        Ok(self.coord(i, j))
    }

    pub fn column_home(&self, j: u64) -> Result<BankId> {
        if j >= self.cols {
            return Err(Error::Argument(format!(
                "column {j} outside {} columns",
                self.cols
            )));
        }
        Ok(WeightLayout::column_home(self, j))
    }

    /// Granules a PIM lane reads to stream column `j`, in tile-row order.
    /// Only the real (unpadded) rows are included.
    pub fn pim_column_plan(&self, j: u64) -> Result<Vec<(DramCoord, u64)>> {
        if j >= self.cols {
            return Err(Error::Argument(format!(
                "column {j} outside {} columns",
                self.cols
            )));
        }
        let th = self.geometry.tile_height_elems;
        let elem = self.cfg.element_size_bytes;
        Ok((0..self.geometry.num_tile_rows)
            .map(|tr| {
                let first = tr * th;
                let rows = th.min(self.rows - first);
                (self.coord(first, j), rows * elem)
            })
            .collect())
    }

    /// Linear tile index (including the base offset) of the tile at
    /// `(tile_row, tile_col)`.
    pub fn tile_index(&self, tile_row: u64, tile_col: u64) -> u64 {
        self.base_tile + tile_col * self.geometry.num_tile_rows + tile_row
    }
}

impl WeightLayout for LayoutPlan {
    fn config(&self) -> &DramConfig {
        &self.cfg
    }

    fn dims(&self) -> MatrixDims {
        MatrixDims {
            rows: self.rows,
            cols: self.cols,
            padded_rows: self.geometry.padded_rows(),
            padded_cols: self.geometry.padded_cols(),
        }
    }

    fn geometry(&self) -> TileGeometry {
        self.geometry
    }

    fn scheme(&self) -> Scheme {
        Scheme::Umdam
    }

    #[inline]
    fn coord(&self, i: u64, j: u64) -> DramCoord {
        let g = &self.geometry;
        let (tile_row, local_row) = (i / g.tile_height_elems, i % g.tile_height_elems);
        let (tile_col, local_col) = (j / g.tile_width_elems, j % g.tile_width_elems);
        let byte = local_row * self.cfg.element_size_bytes;
        let home = BankId::from_lane(local_col as u32, &self.cfg);
        let tile = self.tile_index(tile_row, tile_col);
        DramCoord {
            row: (tile >> self.fields.col_m) as u32,
            col_m: (tile & ((1 << self.fields.col_m) - 1)) as u32,
            bank: home.bank,
            rank: home.rank,
            channel: home.channel,
            col_l: (byte >> self.fields.offset) as u32,
            offset: (byte & ((1 << self.fields.offset) - 1)) as u32,
        }
    }

    fn linear_address(&self, i: u64, j: u64) -> u64 {
        tiled_offset(&self.cfg, &self.geometry, i, j) + self.base
    }

    fn granules(&self) -> Box<dyn Iterator<Item = Granule> + Send + '_> {
        Box::new(tiled_granules(self.geometry))
    }
}

/// Byte offset of `(i, j)` in tile-major, column-major-within-tile order.
fn tiled_offset(cfg: &DramConfig, g: &TileGeometry, i: u64, j: u64) -> u64 {
    let (tile_row, local_row) = (i / g.tile_height_elems, i % g.tile_height_elems);
    let (tile_col, local_col) = (j / g.tile_width_elems, j % g.tile_width_elems);
    let tile = tile_col * g.num_tile_rows + tile_row;
    (tile * g.tile_width_elems + local_col) * cfg.interleave_granularity_bytes
        + local_row * cfg.element_size_bytes
}

/// The NPU's tile-major format stored contiguously from `base` and
/// interpreted through an arbitrary address mapping. With `Scheme::Umdam`
/// it coincides with [`LayoutPlan`].
#[derive(Debug, Clone)]
pub struct TiledLayout {
    cfg: DramConfig,
    mapper: AddressMapper,
    rows: u64,
    cols: u64,
    geometry: TileGeometry,
    base: u64,
}

impl TiledLayout {
    pub fn new(cfg: &DramConfig, scheme: Scheme, k: u64, n: u64, base: u64) -> Result<Self> {
        check_dims(k, n)?;
        let mapper = AddressMapper::new(scheme, cfg)?;
        let geometry = TileGeometry::new(cfg, k, n);
        let end = base.saturating_add(geometry.num_tiles() * tile_bytes(cfg));
        if end > mapper.capacity() {
            return Err(Error::Capacity {
                needed: end,
                available: mapper.capacity(),
            });
        }
        if !base.is_multiple_of(cfg.interleave_granularity_bytes) {
            return Err(Error::Argument(format!(
                "base {base:#x} is not aligned to the interleave granularity"
            )));
        }
        Ok(TiledLayout {
            cfg: cfg.clone(),
            mapper,
            rows: k,
            cols: n,
            geometry,
            base,
        })
    }

    pub fn base(&self) -> u64 {
        self.base
    }
}

impl WeightLayout for TiledLayout {
    fn config(&self) -> &DramConfig {
        &self.cfg
    }

    fn dims(&self) -> MatrixDims {
        MatrixDims {
            rows: self.rows,
            cols: self.cols,
            padded_rows: self.geometry.padded_rows(),
            padded_cols: self.geometry.padded_cols(),
        }
    }

    fn geometry(&self) -> TileGeometry {
        self.geometry
    }

    fn scheme(&self) -> Scheme {
        self.mapper.scheme()
    }

    #[inline]
    fn coord(&self, i: u64, j: u64) -> DramCoord {
        self.mapper.encode_unchecked(self.linear_address(i, j))
    }

    #[inline]
    fn linear_address(&self, i: u64, j: u64) -> u64 {
        self.base + tiled_offset(&self.cfg, &self.geometry, i, j)
    }

    fn granules(&self) -> Box<dyn Iterator<Item = Granule> + Send + '_> {
        Box::new(tiled_granules(self.geometry))
    }
}

/// PIM-optimized baseline placement: column `j` belongs to lane
/// `j mod lanes` and the columns of one lane are stored back to back inside
/// that bank, starting `bank_offset` bytes into it.
#[derive(Debug, Clone)]
pub struct PimOptLayout {
    cfg: DramConfig,
    fields: BitFields,
    mapper: AddressMapper,
    rows: u64,
    cols: u64,
    geometry: TileGeometry,
    bank_offset: u64,
}

impl PimOptLayout {
    pub fn new(cfg: &DramConfig, k: u64, n: u64, bank_offset: u64) -> Result<Self> {
        check_dims(k, n)?;
        let fields = derive_bitfields(cfg)?;
        let mapper = AddressMapper::new(Scheme::PimOpt, cfg)?;
        let geometry = TileGeometry::new(cfg, k, n);
        if !bank_offset.is_multiple_of(cfg.interleave_granularity_bytes) {
            return Err(Error::Argument(format!(
                "bank offset {bank_offset:#x} is not aligned to the interleave granularity"
            )));
        }
        let layout = PimOptLayout {
            cfg: cfg.clone(),
            fields,
            mapper,
            rows: k,
            cols: n,
            geometry,
            bank_offset,
        };
        let end = bank_offset + layout.bytes_per_bank();
        if end > cfg.bank_capacity_bytes() {
            return Err(Error::Capacity {
                needed: end,
                available: cfg.bank_capacity_bytes(),
            });
        }
        Ok(layout)
    }

    pub fn bytes_per_bank(&self) -> u64 {
        self.geometry.padded_cols() / self.cfg.total_banks() as u64
            * self.geometry.padded_rows()
            * self.cfg.element_size_bytes
    }

    /// Rows of every bank touched by this layout (from the first used row).
    pub fn rows_used(&self) -> u64 {
        (self.bank_offset + self.bytes_per_bank()).div_ceil(self.cfg.row_size_bytes)
    }

    #[inline]
    fn bank_local(&self, i: u64, j: u64) -> (BankId, u64) {
        let lanes = self.cfg.total_banks() as u64;
        let home = BankId::from_lane((j % lanes) as u32, &self.cfg);
        let slot = j / lanes;
        let byte = self.bank_offset
            + (slot * self.geometry.padded_rows() + i) * self.cfg.element_size_bytes;
        (home, byte)
    }
}

impl WeightLayout for PimOptLayout {
    fn config(&self) -> &DramConfig {
        &self.cfg
    }

    fn dims(&self) -> MatrixDims {
        MatrixDims {
            rows: self.rows,
            cols: self.cols,
            padded_rows: self.geometry.padded_rows(),
            padded_cols: self.geometry.padded_cols(),
        }
    }

    fn geometry(&self) -> TileGeometry {
        self.geometry
    }

    fn scheme(&self) -> Scheme {
        Scheme::PimOpt
    }

    #[inline]
    fn coord(&self, i: u64, j: u64) -> DramCoord {
        let (home, byte) = self.bank_local(i, j);
        let f = &self.fields;
        let column = (byte % self.cfg.row_size_bytes) >> f.offset;
        DramCoord {
            row: (byte / self.cfg.row_size_bytes) as u32,
            col_m: (column >> f.col_l) as u32,
            bank: home.bank,
            rank: home.rank,
            channel: home.channel,
            col_l: (column & ((1 << f.col_l) - 1)) as u32,
            offset: (byte & ((1 << f.offset) - 1)) as u32,
        }
    }

    fn linear_address(&self, i: u64, j: u64) -> u64 {
        self.mapper.decode_unchecked(&self.coord(i, j))
    }

    fn column_home(&self, j: u64) -> BankId {
        BankId::from_lane((j % self.cfg.total_banks() as u64) as u32, &self.cfg)
    }

    fn granules(&self) -> Box<dyn Iterator<Item = Granule> + Send + '_> {
        let cfg = &self.cfg;
        let lanes = cfg.total_banks() as u64;
        let slots = self.geometry.padded_cols() / lanes;
        let tile_rows = self.geometry.num_tile_rows;
        // pim_opt puts channel, then rank, then bank in the top bits.
        let homes = (0..cfg.channels).flat_map(move |channel| {
            (0..cfg.ranks_per_channel).flat_map(move |rank| {
                (0..cfg.banks_per_rank).map(move |bank| BankId {
                    channel,
                    rank,
                    bank,
                })
            })
        });
        Box::new(homes.flat_map(move |home| {
            let lane = home.lane(cfg) as u64;
            (0..slots).flat_map(move |slot| {
                (0..tile_rows).map(move |tile_row| Granule {
                    tile_row,
                    col: slot * lanes + lane,
                })
            })
        }))
    }
}
