//! Test-only reference placement, written independently of the library's
//! layout code: plain loops over tiles and elements, divisions and
//! remainders only.

#![allow(dead_code)]

use rand::Rng;
use umdam_sim::dram::DramConfig;
use umdam_sim::mapping::DramCoord;

/// Reference placement of every element of a padded `k x n` matrix,
/// indexed `[i][j]`.
pub struct Reference {
    pub padded_cols: u64,
    pub cells: Vec<DramCoord>,
}

impl Reference {
    pub fn get(&self, i: u64, j: u64) -> DramCoord {
        self.cells[(i * self.padded_cols + j) as usize]
    }
}

/// Walks every tile and every element inside it, assigning each element
/// its DRAM coordinate. `first_tile` is the tile slot the matrix starts at.
pub fn reference_placement(cfg: &DramConfig, k: u64, n: u64, first_tile: u64) -> Reference {
    let tile_height = cfg.interleave_granularity_bytes / cfg.element_size_bytes;
    let tile_width = (cfg.channels * cfg.ranks_per_channel * cfg.banks_per_rank) as u64;
    let tile_rows = k.div_ceil(tile_height);
    let tile_cols = n.div_ceil(tile_width);
    let padded_rows = tile_rows * tile_height;
    let padded_cols = tile_cols * tile_width;
    let col_m_values = cfg.row_size_bytes / cfg.interleave_granularity_bytes;

    let mut cells = vec![DramCoord::default(); (padded_rows * padded_cols) as usize];
    for tile_row in 0..tile_rows {
        for tile_col in 0..tile_cols {
            for local_row in 0..tile_height {
                for local_col in 0..tile_width {
                    let byte = local_row * cfg.element_size_bytes;
                    let offset = byte % cfg.burst_size_bytes;
                    let col_l = byte / cfg.burst_size_bytes;

                    let channel = local_col % cfg.channels as u64;
                    let rank = (local_col / cfg.channels as u64) % cfg.ranks_per_channel as u64;
                    let bank = local_col / (cfg.channels * cfg.ranks_per_channel) as u64;

                    let tile = first_tile + tile_col * tile_rows + tile_row;
                    let col_m = tile % col_m_values;
                    let row = tile / col_m_values;

                    let i = tile_row * tile_height + local_row;
                    let j = tile_col * tile_width + local_col;
                    cells[(i * padded_cols + j) as usize] = DramCoord {
                        row: row as u32,
                        col_m: col_m as u32,
                        bank: bank as u32,
                        rank: rank as u32,
                        channel: channel as u32,
                        col_l: col_l as u32,
                        offset: offset as u32,
                    };
                }
            }
        }
    }
    Reference { padded_cols, cells }
}

fn pick<R: Rng>(rng: &mut R, xs: &[u64]) -> u64 {
    xs[rng.gen_range(0..xs.len())]
}

/// A random valid geometry with small power-of-two fields.
pub fn random_config<R: Rng>(rng: &mut R) -> DramConfig {
    let burst = pick(rng, &[8, 16, 32, 64]);
    let row = pick(rng, &[512, 1024, 2048, 4096]).max(burst);
    let granularity = burst << rng.gen_range(0..=(row / burst).trailing_zeros());
    let element = pick(rng, &[1, 2, 4]).min(granularity);
    DramConfig {
        channels: pick(rng, &[1, 2, 4, 8]) as u32,
        ranks_per_channel: pick(rng, &[1, 2]) as u32,
        banks_per_rank: pick(rng, &[2, 4, 8, 16]) as u32,
        row_size_bytes: row,
        burst_size_bytes: burst,
        interleave_granularity_bytes: granularity,
        rows_per_bank: pick(rng, &[1 << 10, 1 << 12, 1 << 14]),
        element_size_bytes: element,
        peak_external_bw_bytes_per_s: 51.2e9,
        pim_internal_bw_bytes_per_s: 512e9,
    }
}
