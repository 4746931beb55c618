//! Structural checks over a weight layout: column locality, address
//! collisions and NPU-side contiguity of tiles.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::exec::Exec;
use crate::layout::WeightLayout;
use crate::mapping::{AddressMapper, Scheme};

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    /// Matrices with at most this many elements are checked exhaustively.
    pub exhaustive_limit: u64,
    /// Random elements drawn for larger matrices.
    pub samples: u64,
    /// Tiles checked for contiguity.
    pub tiles: u64,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            exhaustive_limit: 1 << 22,
            samples: 100_000,
            tiles: 16,
            seed: 0x5eed,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct VerifyReport {
    pub exhaustive: bool,
    pub elements_checked: u64,
    pub columns_checked: u64,
    /// Columns whose elements span more than one (channel, rank, bank).
    pub locality_violations: u64,
    /// Distinct elements sharing a DRAM location.
    pub collisions: u64,
    pub tiles_checked: u64,
    /// Tiles occupying one gap-free linear-address range.
    pub contiguous_tiles: u64,
    /// Channel run length seen walking a contiguous tile, if uniform.
    pub channel_run_bytes: Option<u64>,
}

impl VerifyReport {
    pub fn is_clean(&self) -> bool {
        self.locality_violations == 0 && self.collisions == 0
    }
}

pub fn verify_plan(layout: &dyn WeightLayout, opts: &VerifyOptions) -> VerifyReport {
    let dims = layout.dims();
    let total = dims.rows * dims.cols;
    let mut report = if total <= opts.exhaustive_limit {
        exhaustive(layout, opts.exec)
    } else {
        sampled(layout, opts)
    };
    contiguity(layout, opts, &mut report);
    report
}

/// Scheme-independent key of a DRAM location.
fn physical_mapper(layout: &dyn WeightLayout) -> AddressMapper {
    AddressMapper::new(Scheme::Umdam, layout.config()).expect("layout config was validated")
}

fn count_duplicates(exec: Exec, mut keys: Vec<u64>) -> u64 {
    exec.sort_unstable(&mut keys);
    keys.windows(2).filter(|w| w[0] == w[1]).count() as u64
}

fn exhaustive(layout: &dyn WeightLayout, exec: Exec) -> VerifyReport {
    let dims = layout.dims();
    let violations = exec.sum_range(dims.cols, |j| {
        let home = layout.column_home(j);
        (0..dims.rows).any(|i| layout.coord(i, j).home() != home) as u64
    });
    let phys = physical_mapper(layout);
    let cols: Vec<u64> = (0..dims.cols).collect();
    let keys: Vec<u64> = exec
        .map(cols, |j| {
            (0..dims.rows)
                .map(|i| phys.decode_unchecked(&layout.coord(i, j)))
                .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect();
    VerifyReport {
        exhaustive: true,
        elements_checked: dims.rows * dims.cols,
        columns_checked: dims.cols,
        locality_violations: violations,
        collisions: count_duplicates(exec, keys),
        ..Default::default()
    }
}

fn sampled(layout: &dyn WeightLayout, opts: &VerifyOptions) -> VerifyReport {
    let dims = layout.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut points = HashSet::with_capacity(opts.samples as usize);
    while (points.len() as u64) < opts.samples {
        points.insert((rng.gen_range(0..dims.rows), rng.gen_range(0..dims.cols)));
    }
    let phys = physical_mapper(layout);
    let mut bad_cols = HashSet::new();
    let mut cols = HashSet::new();
    let mut keys = Vec::with_capacity(points.len());
    for &(i, j) in &points {
        let c = layout.coord(i, j);
        cols.insert(j);
        if c.home() != layout.column_home(j) || c.home() != layout.coord(0, j).home() {
            bad_cols.insert(j);
        }
        keys.push(phys.decode_unchecked(&c));
    }
    VerifyReport {
        exhaustive: false,
        elements_checked: points.len() as u64,
        columns_checked: cols.len() as u64,
        locality_violations: bad_cols.len() as u64,
        collisions: count_duplicates(opts.exec, keys),
        ..Default::default()
    }
}

fn contiguity(layout: &dyn WeightLayout, opts: &VerifyOptions, report: &mut VerifyReport) {
    let g = layout.geometry();
    let elem = layout.config().element_size_bytes;
    let n = opts.tiles.min(g.num_tiles());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x711e);
    let mut runs = HashSet::new();
    for k in 0..n {
        let t = if k == 0 {
            0
        } else {
            rng.gen_range(0..g.num_tiles())
        };
        let (tr, tc) = (t % g.num_tile_rows, t / g.num_tile_rows);
        let mut cells: Vec<(u64, u32)> = (0..g.tile_width_elems)
            .flat_map(|lc| {
                let j = tc * g.tile_width_elems + lc;
                (0..g.tile_height_elems).map(move |lr| (tr * g.tile_height_elems + lr, j))
            })
            .map(|(i, j)| (layout.linear_address(i, j), layout.coord(i, j).channel))
            .collect();
        cells.sort_unstable();
        report.tiles_checked += 1;
        let contiguous = cells
            .iter()
            .enumerate()
            .all(|(idx, &(a, _))| a == cells[0].0 + idx as u64 * elem);
        if !contiguous {
            continue;
        }
        report.contiguous_tiles += 1;
        let mut run = 0;
        for w in cells.windows(2) {
            run += elem;
            if w[0].1 != w[1].1 {
                runs.insert(run);
                run = 0;
            }
        }
    }
    report.channel_run_bytes = if runs.len() == 1 {
        runs.into_iter().next()
    } else {
        None
    };
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dram::DramConfig;
    use crate::layout::{plan_layout, Granule, LayoutPlan, MatrixDims, PimOptLayout, TileGeometry};
    use crate::mapping::DramCoord;

    /// Delegates to a plan but moves one element to another bank.
    struct Flipped {
        inner: LayoutPlan,
        at: (u64, u64),
    }

    impl WeightLayout for Flipped {
        fn config(&self) -> &DramConfig {
            self.inner.config()
        }
        fn dims(&self) -> MatrixDims {
            self.inner.dims()
        }
        fn geometry(&self) -> TileGeometry {
            self.inner.geometry()
        }
        fn scheme(&self) -> Scheme {
            Scheme::Umdam
        }
        fn coord(&self, i: u64, j: u64) -> DramCoord {
            let mut c = self.inner.coord(i, j);
            if (i, j) == self.at {
                c.bank ^= 1;
            }
            c
        }
        fn linear_address(&self, i: u64, j: u64) -> u64 {
            self.inner.linear_address(i, j)
        }
        fn column_home(&self, j: u64) -> crate::mapping::BankId {
            WeightLayout::column_home(&self.inner, j)
        }
        fn granules(&self) -> Box<dyn Iterator<Item = Granule> + Send + '_> {
            self.inner.granules()
        }
    }

    #[test]
    fn plan_is_clean_and_contiguous() {
        let p = plan_layout(&DramConfig::lpddr5_table1(), 256, 128, 0).unwrap();
        let r = verify_plan(&p, &VerifyOptions::default());
        assert!(r.exhaustive);
        assert_eq!(r.elements_checked, 32768);
        assert!(r.is_clean());
        assert_eq!(r.contiguous_tiles, r.tiles_checked);
        assert_eq!(r.channel_run_bytes, Some(256));
    }

    #[test]
    fn flipped_bank_is_one_violation() {
        let p = plan_layout(&DramConfig::lpddr5_table1(), 256, 128, 0).unwrap();
        let f = Flipped {
            inner: p,
            at: (37, 9),
        };
        let r = verify_plan(&f, &VerifyOptions::default());
        assert_eq!(r.locality_violations, 1);
    }

    #[test]
    fn sampled_mode_on_large_plan() {
        let p = plan_layout(&DramConfig::lpddr5_table1(), 4096, 4096, 0).unwrap();
        let opts = VerifyOptions {
            exhaustive_limit: 0,
            samples: 20_000,
            ..Default::default()
        };
        let r = verify_plan(&p, &opts);
        assert!(!r.exhaustive);
        assert_eq!(r.elements_checked, 20_000);
        assert!(r.is_clean());
    }

    #[test]
    fn pim_opt_is_local_but_not_tile_contiguous() {
        let l = PimOptLayout::new(&DramConfig::lpddr5_table1(), 256, 128, 0).unwrap();
        let r = verify_plan(&l, &VerifyOptions::default());
        assert!(r.is_clean());
        assert_eq!(r.contiguous_tiles, 0);
    }
}
