//! DRAM geometry, timing parameters and the address bit-field widths
//! derived from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Package-level DRAM geometry.
///
/// All counts and byte sizes except `element_size_bytes` must be powers of
/// two. A single rank yields a zero-width rank field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DramConfig {
    pub channels: u32,
    pub ranks_per_channel: u32,
    pub banks_per_rank: u32,
    pub row_size_bytes: u64,
    pub burst_size_bytes: u64,
    pub interleave_granularity_bytes: u64,
    pub rows_per_bank: u64,
    pub element_size_bytes: u64,
    pub peak_external_bw_bytes_per_s: f64,
    pub pim_internal_bw_bytes_per_s: f64,
}

impl DramConfig {
    /// LPDDR5 package used throughout the evaluation: 4 channels, 1 rank,
    /// 16 banks, 2 KiB rows, 32 B bursts, 256 B interleaving, FP16 weights.
    pub fn lpddr5_table1() -> Self {
        DramConfig {
            channels: 4,
            ranks_per_channel: 1,
            banks_per_rank: 16,
            row_size_bytes: 2048,
            burst_size_bytes: 32,
            interleave_granularity_bytes: 256,
            rows_per_bank: 1 << 15,
            element_size_bytes: 2,
            peak_external_bw_bytes_per_s: 51.2e9,
            pim_internal_bw_bytes_per_s: 512e9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_pow2("channels", self.channels as u64)?;
        check_pow2("ranks_per_channel", self.ranks_per_channel as u64)?;
        check_pow2("banks_per_rank", self.banks_per_rank as u64)?;
        check_pow2("row_size_bytes", self.row_size_bytes)?;
        check_pow2("burst_size_bytes", self.burst_size_bytes)?;
        check_pow2(
            "interleave_granularity_bytes",
            self.interleave_granularity_bytes,
        )?;
        check_pow2("rows_per_bank", self.rows_per_bank)?;
        if self.rows_per_bank > u32::MAX as u64 {
            return Err(Error::config("rows_per_bank", "must fit in 32 bits"));
        }
        if self.burst_size_bytes > self.interleave_granularity_bytes {
            return Err(Error::config(
                "interleave_granularity_bytes",
                "must be at least burst_size_bytes",
            ));
        }
        if self.interleave_granularity_bytes > self.row_size_bytes {
            return Err(Error::config(
                "interleave_granularity_bytes",
                "must not exceed row_size_bytes",
            ));
        }
        if self.element_size_bytes == 0
            || !self
                .burst_size_bytes
                .is_multiple_of(self.element_size_bytes)
        {
            return Err(Error::config(
                "element_size_bytes",
                "must be nonzero and divide burst_size_bytes",
            ));
        }
        for (field, bw) in [
            (
                "peak_external_bw_bytes_per_s",
                self.peak_external_bw_bytes_per_s,
            ),
            (
                "pim_internal_bw_bytes_per_s",
                self.pim_internal_bw_bytes_per_s,
            ),
        ] {
            if !(bw.is_finite() && bw > 0.0) {
                return Err(Error::config(field, format!("must be positive, got {bw}")));
            }
        }
        total_capacity_bytes(self).map(|_| ())
    }

    /// Banks across the whole package; also the PIM lane count.
    pub fn total_banks(&self) -> u32 {
        self.channels * self.ranks_per_channel * self.banks_per_rank
    }

    pub fn per_channel_bw(&self) -> f64 {
        self.peak_external_bw_bytes_per_s / self.channels as f64
    }

    pub fn bank_capacity_bytes(&self) -> u64 {
        self.rows_per_bank * self.row_size_bytes
    }
}

fn check_pow2(field: &'static str, v: u64) -> Result<()> {
    if v == 0 || !v.is_power_of_two() {
        Err(Error::config(
            field,
            format!("{v} is not a nonzero power of two"),
        ))
    } else {
        Ok(())
    }
}

/// Timing parameters in clock cycles of period `t_ck_ns`. Values are used
/// as given; only `n_rc >= 1` is enforced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingParams {
    pub t_ck_ns: f64,
    pub n_bl: u64,
    pub n_cl: u64,
    pub n_ccd: u64,
    pub n_rc: u64,
    pub n_wr: u64,
    pub n_ras: u64,
    pub n_rp_pb: u64,
    pub n_rcd: u64,
}

impl TimingParams {
    pub fn lpddr5_table1() -> Self {
        TimingParams {
            t_ck_ns: 1.25,
            n_bl: 4,
            n_cl: 20,
            n_ccd: 4,
            n_rc: 30,
            n_wr: 28,
            n_ras: 34,
            n_rp_pb: 15,
            n_rcd: 15,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_ck_ns.is_finite() && self.t_ck_ns > 0.0) {
            return Err(Error::config("t_ck_ns", "must be positive"));
        }
        if self.n_rc == 0 {
            return Err(Error::config("n_rc", "must be at least 1"));
        }
        Ok(())
    }

    /// Data-bus cycles consumed per burst on one channel.
    pub fn burst_cycles(&self) -> u64 {
        self.n_ccd.max(self.n_bl).max(1)
    }

    /// Streaming ceiling implied by the timing parameters: one burst per
    /// `burst_cycles` on every channel.
    pub fn peak_bw(&self, cfg: &DramConfig) -> f64 {
        cfg.channels as f64 * cfg.burst_size_bytes as f64
            / (self.burst_cycles() as f64 * self.t_ck_ns * 1e-9)
    }
}

/// Widths (in bits) of every DRAM address field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitFields {
    pub offset: u32,
    pub col_l: u32,
    pub channel: u32,
    pub rank: u32,
    pub bank: u32,
    pub col_m: u32,
    pub row: u32,
}

impl BitFields {
    /// Undivided column width (`col_m + col_l`).
    pub fn column(&self) -> u32 {
        self.col_m + self.col_l
    }

    pub fn total(&self) -> u32 {
        self.offset + self.col_l + self.channel + self.rank + self.bank + self.col_m + self.row
    }
}

pub fn derive_bitfields(cfg: &DramConfig) -> Result<BitFields> {
    cfg.validate()?;
    let log2 = |v: u64| v.trailing_zeros();
    let offset = log2(cfg.burst_size_bytes);
    let col_l = log2(cfg.interleave_granularity_bytes / cfg.burst_size_bytes);
    let col_m = log2(cfg.row_size_bytes / cfg.burst_size_bytes) - col_l;
    Ok(BitFields {
        offset,
        col_l,
        channel: log2(cfg.channels as u64),
        rank: log2(cfg.ranks_per_channel as u64),
        bank: log2(cfg.banks_per_rank as u64),
        col_m,
        row: log2(cfg.rows_per_bank),
    })
}

pub fn total_capacity_bytes(cfg: &DramConfig) -> Result<u64> {
    [
        cfg.ranks_per_channel as u64,
        cfg.banks_per_rank as u64,
        cfg.rows_per_bank,
        cfg.row_size_bytes,
    ]
    .into_iter()
    .try_fold(cfg.channels as u64, |acc, v| acc.checked_mul(v))
    .filter(|&c| c < (1u64 << 63))
    .ok_or_else(|| {
        Error::config(
            "rows_per_bank",
            "total capacity overflows the address width",
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> DramConfig {
        DramConfig {
            channels: 1,
            ranks_per_channel: 1,
            banks_per_rank: 1,
            rows_per_bank: 1,
            ..DramConfig::lpddr5_table1()
        }
    }

    #[test]
    fn table1_field_widths() {
        let f = derive_bitfields(&DramConfig::lpddr5_table1()).unwrap();
        assert_eq!((f.offset, f.col_l, f.col_m), (5, 3, 3));
        assert_eq!(f.column(), 6);
        assert_eq!((f.channel, f.rank, f.bank), (2, 0, 4));
        assert_eq!(f.row, 15);
    }

    #[test]
    fn granularity_equal_to_burst_leaves_no_col_l() {
        let cfg = DramConfig {
            interleave_granularity_bytes: 32,
            ..DramConfig::lpddr5_table1()
        };
        let f = derive_bitfields(&cfg).unwrap();
        assert_eq!((f.col_l, f.col_m), (0, 6));
    }

    #[test]
    fn capacity_examples() {
        assert_eq!(total_capacity_bytes(&tiny()).unwrap(), 2048);
        let cfg = DramConfig::lpddr5_table1();
        assert_eq!(total_capacity_bytes(&cfg).unwrap(), 4 << 30);
        let doubled = DramConfig { channels: 8, ..cfg };
        assert_eq!(total_capacity_bytes(&doubled).unwrap(), 8 << 30);
    }

    #[test]
    fn widths_sum_to_capacity_bits() {
        for channels in [1, 2, 4, 8] {
            for banks_per_rank in [1, 4, 16] {
                for gran in [32, 64, 256, 2048] {
                    let cfg = DramConfig {
                        channels,
                        banks_per_rank,
                        interleave_granularity_bytes: gran,
                        ..DramConfig::lpddr5_table1()
                    };
                    let f = derive_bitfields(&cfg).unwrap();
                    let cap = total_capacity_bytes(&cfg).unwrap();
                    assert_eq!(1u64 << f.total(), cap);
                }
            }
        }
    }

    #[test]
    fn non_power_of_two_names_field() {
        let cfg = DramConfig {
            banks_per_rank: 12,
            ..DramConfig::lpddr5_table1()
        };
        match derive_bitfields(&cfg) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "banks_per_rank"),
            other => panic!("unexpected {other:?}"),
        }
        let cfg = DramConfig {
            row_size_bytes: 3000,
            ..DramConfig::lpddr5_table1()
        };
        assert!(matches!(
            derive_bitfields(&cfg),
            Err(Error::Config {
                field: "row_size_bytes",
                ..
            })
        ));
    }

    #[test]
    fn granularity_ordering_enforced() {
        let cfg = DramConfig {
            interleave_granularity_bytes: 16,
            ..DramConfig::lpddr5_table1()
        };
        assert!(cfg.validate().is_err());
        let cfg = DramConfig {
            interleave_granularity_bytes: 4096,
            ..DramConfig::lpddr5_table1()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn capacity_overflow_is_config_error() {
        let cfg = DramConfig {
            rows_per_bank: 1 << 31,
            channels: 1 << 20,
            ..DramConfig::lpddr5_table1()
        };
        assert!(matches!(
            total_capacity_bytes(&cfg),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn timing_peak_follows_burst_cycles() {
        let t = TimingParams::lpddr5_table1();
        let cfg = DramConfig::lpddr5_table1();
        assert_eq!(t.burst_cycles(), 4);
        assert!((t.peak_bw(&cfg) - 25.6e9).abs() < 1.0);
    }

    #[test]
    fn unknown_json_keys_rejected() {
        let mut v = serde_json::to_value(DramConfig::lpddr5_table1()).unwrap();
        v["bank_groups"] = 4.into();
        assert!(serde_json::from_value::<DramConfig>(v).is_err());
    }
}
