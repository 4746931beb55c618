//! Per-bank DRAM timing replay.
//!
//! The controller model is open-page with one in-order request queue per
//! channel, fed by a single in-order front end:
//!
//! * Request `n` enters its channel's queue once the request `queue_depth`
//!   places ahead of it in that queue has issued its last column command,
//!   and never before request `n - 1` entered. A full queue stalls the whole
//!   front end.
//! * Once queued, a request whose row is closed in its bank precharges
//!   (`n_RPpb`, no earlier than `n_RAS` after the activate or `n_WR` after
//!   the last write burst) and activates (`n_RCD` before the first column
//!   command, `n_RC` between activates), overlapping with transfers of
//!   requests ahead of it.
//! * Column commands on a channel are issued in arrival order, one burst
//!   every `max(n_CCD, n_BL)` cycles.
//! * `n_CL` is paid once at the tail of a read stream.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::dram::{derive_bitfields, BitFields, DramConfig, TimingParams};
use crate::error::{Error, Result};
use crate::layout::{Granule, WeightLayout};
use crate::mapping::{check_coord, AddressMapper, DramCoord, Scheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessKind {
    Read,
    Write,
}

/// A run of consecutive bursts inside one bank row, starting at `coord`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemRequest {
    pub coord: DramCoord,
    pub kind: AccessKind,
    pub bytes: u32,
    pub issue_order: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerOptions {
    /// Per-channel request queue entries.
    pub queue_depth: usize,
}

impl Default for ControllerOptions {
    fn default() -> Self {
        ControllerOptions { queue_depth: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayResult {
    pub total_cycles: u64,
    pub total_bytes: u64,
    pub effective_bw_bytes_per_s: f64,
    pub row_hit_rate: f64,
    pub per_channel_bytes: Vec<u64>,
    pub requests: u64,
    pub bursts: u64,
    pub row_hits: u64,
}

impl ReplayResult {
    pub fn seconds(&self, timing: &TimingParams) -> f64 {
        self.total_cycles as f64 * timing.t_ck_ns * 1e-9
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct BankState {
    open_row: Option<u32>,
    earliest_activate: u64,
    earliest_column: u64,
    earliest_precharge: u64,
}

#[derive(Debug, Clone)]
struct ChannelState {
    banks: Vec<BankState>,
    banks_per_rank: u32,
    next_column: u64,
    /// Departure cycles (last column command) of queued requests.
    queue: VecDeque<u64>,
    done: u64,
    bytes: u64,
    bursts: u64,
    hits: u64,
    requests: u64,
}

impl ChannelState {
    fn new(cfg: &DramConfig, queue_depth: usize) -> Self {
        ChannelState {
            banks: vec![
                BankState::default();
                (cfg.ranks_per_channel * cfg.banks_per_rank) as usize
            ],
            banks_per_rank: cfg.banks_per_rank,
            next_column: 0,
            queue: VecDeque::with_capacity(queue_depth),
            done: 0,
            bytes: 0,
            bursts: 0,
            hits: 0,
            requests: 0,
        }
    }

    /// Earliest cycle a new request may enter this channel's queue.
    #[inline]
    fn slot_free(&self, depth: usize) -> u64 {
        if self.queue.len() >= depth {
            self.queue[self.queue.len() - depth]
        } else {
            0
        }
    }

    #[inline]
    fn issue(
        &mut self,
        t: &TimingParams,
        depth: usize,
        burst_bytes: u64,
        arrival: u64,
        req: &MemRequest,
    ) {
        let bank =
            &mut self.banks[(req.coord.rank * self.banks_per_rank + req.coord.bank) as usize];
        let bursts = req.bytes as u64 / burst_bytes;
        let mut hits = bursts;
        if bank.open_row != Some(req.coord.row) {
            hits -= 1;
            let mut ready = arrival;
            if bank.open_row.is_some() {
                ready = ready.max(bank.earliest_precharge) + t.n_rp_pb;
            }
            let act = ready.max(bank.earliest_activate);
            bank.open_row = Some(req.coord.row);
            bank.earliest_activate = act + t.n_rc;
            bank.earliest_column = act + t.n_rcd;
            bank.earliest_precharge = bank.earliest_precharge.max(act + t.n_ras);
        }
        let step = t.burst_cycles();
        let start = bank.earliest_column.max(self.next_column).max(arrival);
        let last = start + (bursts - 1) * step;
        self.next_column = last + step;
        let data_end = last + t.n_bl;
        let done = match req.kind {
            AccessKind::Read => {
                bank.earliest_precharge = bank.earliest_precharge.max(data_end);
                data_end + t.n_cl
            }
            AccessKind::Write => {
                bank.earliest_precharge = bank.earliest_precharge.max(data_end + t.n_wr);
                data_end
            }
        };
        self.done = self.done.max(done);
        if self.queue.len() >= depth {
            self.queue.pop_front();
        }
        self.queue.push_back(last);
        self.bytes += req.bytes as u64;
        self.bursts += bursts;
        self.hits += hits;
        self.requests += 1;
    }
}

fn validate(cfg: &DramConfig, fields: &BitFields, req: &MemRequest) -> Result<()> {
    let err = |reason: String| Error::Replay {
        seq: req.issue_order,
        reason,
    };
    check_coord(fields, &req.coord).map_err(|e| err(e.to_string()))?;
    let burst = cfg.burst_size_bytes;
    let bytes = req.bytes as u64;
    if bytes == 0 || !bytes.is_multiple_of(burst) {
        return Err(err(format!(
            "size {bytes} is not a positive multiple of the {burst}-byte burst"
        )));
    }
    if req.coord.offset != 0 {
        return Err(err("request does not start on a burst boundary".into()));
    }
    let columns = cfg.row_size_bytes / burst;
    if req.coord.column(fields) as u64 + bytes / burst > columns {
        return Err(err("request runs past the end of its row".into()));
    }
    Ok(())
}

/// Replays a stream with the default controller options.
pub fn replay(
    cfg: &DramConfig,
    timing: &TimingParams,
    stream: &[MemRequest],
) -> Result<ReplayResult> {
    replay_iter(
        cfg,
        timing,
        &ControllerOptions::default(),
        stream.iter().copied(),
    )
}

pub fn replay_iter<I>(
    cfg: &DramConfig,
    timing: &TimingParams,
    opts: &ControllerOptions,
    stream: I,
) -> Result<ReplayResult>
where
    I: IntoIterator<Item = MemRequest>,
{
    let fields = derive_bitfields(cfg)?;
    timing.validate()?;
    let depth = opts.queue_depth.max(1);
    let burst = cfg.burst_size_bytes;
    let mut channels: Vec<ChannelState> = (0..cfg.channels)
        .map(|_| ChannelState::new(cfg, depth))
        .collect();
    let mut arrival = 0u64;
    for req in stream {
        validate(cfg, &fields, &req)?;
        let ch = &mut channels[req.coord.channel as usize];
        arrival = arrival.max(ch.slot_free(depth));
        ch.issue(timing, depth, burst, arrival, &req);
    }

    let total_cycles = channels.iter().map(|s| s.done).max().unwrap_or(0);
    let total_bytes: u64 = channels.iter().map(|s| s.bytes).sum();
    let bursts: u64 = channels.iter().map(|s| s.bursts).sum();
    let row_hits: u64 = channels.iter().map(|s| s.hits).sum();
    let secs = total_cycles as f64 * timing.t_ck_ns * 1e-9;
    Ok(ReplayResult {
        total_cycles,
        total_bytes,
        effective_bw_bytes_per_s: if secs > 0.0 {
            total_bytes as f64 / secs
        } else {
            0.0
        },
        row_hit_rate: if bursts > 0 {
            row_hits as f64 / bursts as f64
        } else {
            0.0
        },
        per_channel_bytes: channels.iter().map(|s| s.bytes).collect(),
        requests: channels.iter().map(|s| s.requests).sum(),
        bursts,
        row_hits,
    })
}

/// Splits the linear range `[addr, addr + len)` into requests, one per run
/// of bursts that stay in a single bank row with consecutive columns.
pub(crate) fn push_runs(
    mapper: &AddressMapper,
    burst: u64,
    addr: u64,
    len: u64,
    kind: AccessKind,
    out: &mut Vec<MemRequest>,
) {
    let fields = *mapper.bitfields();
    let first = out.len();
    let mut a = addr;
    while a < addr + len {
        let c = mapper.encode_unchecked(a);
        if out.len() > first {
            let prev = out.last_mut().expect("nonempty");
            let p = prev.coord;
            let next_col = p.column(&fields) + (prev.bytes as u64 / burst) as u32;
            if p.home() == c.home() && p.row == c.row && c.column(&fields) == next_col {
                prev.bytes += burst as u32;
                a += burst;
                continue;
            }
        }
        out.push(MemRequest {
            coord: c,
            kind,
            bytes: burst as u32,
            issue_order: 0,
        });
        a += burst;
    }
}

/// Sequential NPU reads of `bytes` starting at `base`, issued one
/// interleave-granularity chunk at a time.
pub fn npu_stream(
    cfg: &DramConfig,
    scheme: Scheme,
    base: u64,
    bytes: u64,
) -> Result<Vec<MemRequest>> {
    let mapper = AddressMapper::new(scheme, cfg)?;
    let burst = cfg.burst_size_bytes;
    if !base.is_multiple_of(burst) || !bytes.is_multiple_of(burst) {
        return Err(Error::Argument(format!(
            "stream base and size must be multiples of the {burst}-byte burst"
        )));
    }
    if base.saturating_add(bytes) > mapper.capacity() {
        return Err(Error::AddressOutOfRange {
            value: base.saturating_add(bytes),
            capacity: mapper.capacity(),
        });
    }
    let chunk = cfg.interleave_granularity_bytes;
    let mut out = Vec::new();
    let mut a = base;
    while a < base + bytes {
        let len = chunk.min(base + bytes - a);
        push_runs(&mapper, burst, a, len, AccessKind::Read, &mut out);
        a += len;
    }
    for (k, r) in out.iter_mut().enumerate() {
        r.issue_order = k as u64;
    }
    Ok(out)
}

/// Copy traffic for moving a weight matrix from one placement to another.
///
/// Destination granules are visited in ascending destination address order;
/// each is read from its source location and then written.
pub struct RelayoutStream<'a> {
    from: &'a dyn WeightLayout,
    to: &'a dyn WeightLayout,
    from_mapper: AddressMapper,
    to_mapper: AddressMapper,
    identical: bool,
}

pub fn relayout_stream<'a>(
    from: &'a dyn WeightLayout,
    to: &'a dyn WeightLayout,
) -> Result<RelayoutStream<'a>> {
    if from.dims() != to.dims() {
        return Err(Error::Argument(format!(
            "re-layout between mismatched matrices {:?} and {:?}",
            from.dims(),
            to.dims()
        )));
    }
    if from.config() != to.config() {
        return Err(Error::Argument(
            "re-layout across different DRAM configurations".into(),
        ));
    }
    let from_mapper = AddressMapper::new(from.scheme(), from.config())?;
    let to_mapper = AddressMapper::new(to.scheme(), to.config())?;
    let th = from.geometry().tile_height_elems;
    let identical = to.granules().all(|g| {
        let (i0, i1) = (g.tile_row * th, g.tile_row * th + th - 1);
        from.coord(i0, g.col) == to.coord(i0, g.col) && from.coord(i1, g.col) == to.coord(i1, g.col)
    });
    Ok(RelayoutStream {
        from,
        to,
        from_mapper,
        to_mapper,
        identical,
    })
}

impl<'a> RelayoutStream<'a> {
    /// Both placements put every element in the same DRAM location.
    pub fn is_identity(&self) -> bool {
        self.identical
    }

    /// Bytes read plus bytes written.
    pub fn traffic_bytes(&self) -> u64 {
        if self.identical {
            0
        } else {
            2 * self.to.footprint_bytes()
        }
    }

    pub fn requests(&self) -> impl Iterator<Item = MemRequest> + '_ {
        let granules: Box<dyn Iterator<Item = Granule> + Send + '_> = if self.identical {
            Box::new(std::iter::empty())
        } else {
            self.to.granules()
        };
        let th = self.to.geometry().tile_height_elems;
        let gran = self.to.granule_bytes();
        let burst = self.to.config().burst_size_bytes;
        let mut buf = Vec::with_capacity(16);
        let mut seq = 0u64;
        granules.flat_map(move |g| {
            buf.clear();
            let i = g.tile_row * th;
            let src = self.from.linear_address(i, g.col);
            let dst = self.to.linear_address(i, g.col);
            push_runs(
                &self.from_mapper,
                burst,
                src,
                gran,
                AccessKind::Read,
                &mut buf,
            );
            push_runs(
                &self.to_mapper,
                burst,
                dst,
                gran,
                AccessKind::Write,
                &mut buf,
            );
            for r in buf.iter_mut() {
                r.issue_order = seq;
                seq += 1;
            }
            buf.clone()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{plan_layout, PimOptLayout, TiledLayout};

    fn table1() -> (DramConfig, TimingParams) {
        (DramConfig::lpddr5_table1(), TimingParams::lpddr5_table1())
    }

    fn read(coord: DramCoord, bytes: u32, seq: u64) -> MemRequest {
        MemRequest {
            coord,
            kind: AccessKind::Read,
            bytes,
            issue_order: seq,
        }
    }

    #[test]
    fn single_closed_bank_read() {
        let (cfg, t) = table1();
        let r = replay(&cfg, &t, &[read(DramCoord::default(), 32, 0)]).unwrap();
        assert_eq!(r.total_cycles, 15 + 20 + 4);
        assert!((r.seconds(&t) - 48.75e-9).abs() < 1e-15);
        assert_eq!(r.row_hit_rate, 0.0);
    }

    #[test]
    fn empty_stream() {
        let (cfg, t) = table1();
        let r = replay(&cfg, &t, &[]).unwrap();
        assert_eq!((r.total_cycles, r.total_bytes), (0, 0));
    }

    #[test]
    fn row_conflict_pays_precharge() {
        let (cfg, t) = table1();
        let other_row = DramCoord {
            row: 1,
            ..Default::default()
        };
        let r = replay(
            &cfg,
            &t,
            &[read(DramCoord::default(), 32, 0), read(other_row, 32, 1)],
        )
        .unwrap();
        // ACT@0, RD@15; PRE no earlier than tRAS=34 -> ACT@49 -> RD@64
        assert_eq!(r.total_cycles, 64 + 4 + 20);
    }

    #[test]
    fn invalid_requests_report_sequence() {
        let (cfg, t) = table1();
        let bad_bank = DramCoord {
            bank: 16,
            ..Default::default()
        };
        let stream = [read(DramCoord::default(), 32, 0), read(bad_bank, 32, 7)];
        assert!(matches!(
            replay(&cfg, &t, &stream),
            Err(Error::Replay { seq: 7, .. })
        ));
        assert!(matches!(
            replay(&cfg, &t, &[read(DramCoord::default(), 48, 3)]),
            Err(Error::Replay { seq: 3, .. })
        ));
        let tail = DramCoord {
            col_m: 7,
            col_l: 7,
            ..Default::default()
        };
        assert!(matches!(
            replay(&cfg, &t, &[read(tail, 64, 4)]),
            Err(Error::Replay { seq: 4, .. })
        ));
    }

    #[test]
    fn npu_stream_shapes() {
        let (cfg, _) = table1();
        let s = npu_stream(&cfg, Scheme::Umdam, 0, 1024).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(
            s.iter().map(|r| r.coord.channel).collect::<Vec<_>>(),
            [0, 1, 2, 3]
        );
        assert!(s.iter().all(|r| r.bytes == 256));

        let s = npu_stream(&cfg, Scheme::Conventional, 0, 1024).unwrap();
        assert_eq!(s.len(), 32);
        for (k, r) in s.iter().enumerate() {
            assert_eq!(r.coord.channel as usize, k % 4);
            assert_eq!(r.bytes, 32);
        }
        assert!(npu_stream(&cfg, Scheme::Umdam, 0, 0).unwrap().is_empty());
    }

    #[test]
    fn conservation_and_ceiling() {
        let (cfg, t) = table1();
        for scheme in Scheme::ALL {
            let s = npu_stream(&cfg, scheme, 0, 1 << 20).unwrap();
            let r = replay(&cfg, &t, &s).unwrap();
            assert_eq!(r.total_bytes, s.iter().map(|x| x.bytes as u64).sum::<u64>());
            assert!(r.effective_bw_bytes_per_s <= t.peak_bw(&cfg));
            assert!(r.effective_bw_bytes_per_s <= cfg.peak_external_bw_bytes_per_s);
            assert!((0.0..=1.0).contains(&r.row_hit_rate));
        }
    }

    #[test]
    fn interleaved_streams_share_channels_evenly() {
        let (cfg, t) = table1();
        for scheme in [Scheme::Umdam, Scheme::Conventional] {
            let s = npu_stream(&cfg, scheme, 0, 1 << 20).unwrap();
            let r = replay(&cfg, &t, &s).unwrap();
            let share = r.total_bytes / cfg.channels as u64;
            for &b in &r.per_channel_bytes {
                assert!(b.abs_diff(share) <= cfg.burst_size_bytes);
            }
        }
    }

    #[test]
    fn sequential_stream_bandwidths() {
        let (cfg, t) = table1();
        let bw = |scheme| {
            let s = npu_stream(&cfg, scheme, 0, 4 << 20).unwrap();
            replay(&cfg, &t, &s).unwrap().effective_bw_bytes_per_s
        };
        let peak = t.peak_bw(&cfg);
        assert!(bw(Scheme::Umdam) >= 0.9 * peak);
        assert!(bw(Scheme::PimOpt) <= 1.1 * cfg.per_channel_bw());
    }

    #[test]
    fn replay_is_deterministic() {
        let (cfg, t) = table1();
        let p = plan_layout(&cfg, 512, 128, 0).unwrap();
        let c = TiledLayout::new(&cfg, Scheme::Conventional, 512, 128, 1 << 20).unwrap();
        let s = relayout_stream(&p, &c).unwrap();
        let opts = ControllerOptions::default();
        let a = replay_iter(&cfg, &t, &opts, s.requests()).unwrap();
        let b = replay_iter(&cfg, &t, &opts, s.requests()).unwrap();
        let v: Vec<_> = s.requests().collect();
        assert_eq!(a, b);
        assert_eq!(a, replay(&cfg, &t, &v).unwrap());
    }

    #[test]
    fn full_channel_queue_stalls_the_front_end() {
        let (cfg, t) = table1();
        let hit = |channel, seq| {
            read(
                DramCoord {
                    channel,
                    ..Default::default()
                },
                32,
                seq,
            )
        };
        // 64 requests to channel 0 then one to channel 1: with a 1-deep
        // queue the last request cannot start before channel 0 drains.
        let mut s: Vec<_> = (0..64).map(|k| hit(0, k)).collect();
        s.push(hit(1, 64));
        let shallow =
            replay_iter(&cfg, &t, &ControllerOptions { queue_depth: 1 }, s.clone()).unwrap();
        let deep = replay_iter(&cfg, &t, &ControllerOptions { queue_depth: 128 }, s).unwrap();
        assert!(shallow.total_cycles > deep.total_cycles);
        assert_eq!(deep.total_cycles, 15 + 63 * 4 + 4 + 20);
    }

    #[test]
    fn relayout_traffic_is_twice_footprint() {
        let (cfg, _) = table1();
        let src = PimOptLayout::new(&cfg, 128, 64, 0).unwrap();
        let dst = TiledLayout::new(&cfg, Scheme::Conventional, 128, 64, 1 << 20).unwrap();
        let s = relayout_stream(&src, &dst).unwrap();
        let bytes: u64 = s.requests().map(|r| r.bytes as u64).sum();
        assert_eq!(bytes, 32 * 1024);
        assert_eq!(s.traffic_bytes(), bytes);
        let reads: u64 = s
            .requests()
            .filter(|r| r.kind == AccessKind::Read)
            .map(|r| r.bytes as u64)
            .sum();
        assert_eq!(reads, 16 * 1024);
    }

    #[test]
    fn identical_layouts_need_no_traffic() {
        let (cfg, _) = table1();
        let a = plan_layout(&cfg, 256, 128, 0).unwrap();
        let b = TiledLayout::new(&cfg, Scheme::Umdam, 256, 128, 0).unwrap();
        let s = relayout_stream(&a, &b).unwrap();
        assert!(s.is_identity());
        assert_eq!(s.requests().count(), 0);
        assert_eq!(s.traffic_bytes(), 0);
    }

    #[test]
    fn mismatched_dims_rejected() {
        let (cfg, _) = table1();
        let a = plan_layout(&cfg, 256, 128, 0).unwrap();
        let b = plan_layout(&cfg, 128, 128, 0).unwrap();
        assert!(matches!(relayout_stream(&a, &b), Err(Error::Argument(_))));
    }
}
