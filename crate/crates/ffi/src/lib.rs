//! C ABI over the streaming engine.
//!
//! A caller creates an engine handle, pushes observer-stream CSV lines one at
//! a time, finishes the stream, and then reads back dislocation segments and
//! opportunity-cost totals. Every fallible call returns an [`NmsStatus`];
//! details of the most recent failure on the calling thread are available
//! from [`nms_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nms_disloc::disloc::{classify, Thresholds};
use nms_disloc::engine::{Analysis, Engine, EngineConfig};
use nms_disloc::ingest::{parse_record, CSV_HEADER};
use nms_disloc::roc::aggregate;
use nms_disloc::{Side, TimeUs};

/// Pass as `stream_end_us` to close open segments at the last event.
pub const NMS_END_AT_LAST_EVENT: u64 = u64::MAX;

/// Result codes shared by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NmsStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// A line failed to parse or violated a record rule.
    Parse = 3,
    /// An event arrived with an earlier timestamp than its predecessor.
    OutOfOrder = 4,
    /// The event was inconsistent with the current market state.
    Data = 5,
    /// The call needs a running engine but the stream was finished, or the
    /// reverse.
    WrongState = 6,
    /// An index argument was past the end.
    OutOfRange = 7,
    /// An internal panic was caught at the boundary.
    Panic = 8,
}

/// One dislocation segment. Prices are in units of 1/10000 USD and times
/// are microseconds since midnight of day zero.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct NmsSegment {
    /// Nul-terminated ticker.
    pub symbol: [c_char; 9],
    /// 0 for bid, 1 for offer.
    pub side: u8,
    /// +1 when the SIP price is above the direct-feed price, -1 below.
    pub direction: i8,
    pub truncated: bool,
    pub actionable: bool,
    pub large: bool,
    pub start_us: u64,
    pub end_us: u64,
    pub min_dp_e4: i64,
    pub max_dp_e4: i64,
    pub min_mag_e4: i64,
    pub max_mag_e4: i64,
}

/// Stream-wide realized opportunity cost, in units of 1/10000 USD.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct NmsRocTotals {
    pub trades: u64,
    pub differing_trades: u64,
    /// Sum of non-positive records.
    pub sip_roc_e4: i64,
    /// Sum of non-negative records.
    pub direct_roc_e4: i64,
    pub net_roc_e4: i64,
    pub total_roc_e4: i64,
}

enum State {
    Running(Box<Engine>),
    Finished(Analysis),
    /// Transient placeholder while `finish` moves the engine out.
    Empty,
}

/// Opaque engine handle.
pub struct NmsEngine {
    state: State,
    thresholds: Thresholds,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn fail(status: NmsStatus, msg: impl Into<String>) -> NmsStatus {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
    status
}

fn guard(f: impl FnOnce() -> NmsStatus) -> NmsStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(NmsStatus::Panic, "internal panic"))
}

/// Creates an engine. With `coalesce_us` set, only the last update
/// within each microsecond count. Free the handle with [`nms_engine_free`].
#[no_mangle]
pub extern "C" fn nms_engine_new(coalesce_us: bool) -> *mut NmsEngine {
    let config = EngineConfig { coalesce_us, ..EngineConfig::default() };
    let engine = NmsEngine { state: State::Running(Box::new(Engine::new(config))), thresholds: Thresholds::default() };
    Box::into_raw(Box::new(engine))
}

/// Releases an engine; null is ignored.
///
/// # Safety
/// `engine` must be null or a handle from [`nms_engine_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nms_engine_free(engine: *mut NmsEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Overrides the segment thresholds used for the `actionable` and `large`
/// flags. Defaults: 545 us and 100 (one cent).
///
/// # Safety
/// `engine` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn nms_engine_set_thresholds(
    engine: *mut NmsEngine,
    duration_us: u64,
    min_mag_e4: i64,
) -> NmsStatus {
    let Some(engine) = engine.as_mut() else { return fail(NmsStatus::NullPointer, "engine is null") };
    engine.thresholds = Thresholds { actionable_us: duration_us, large_min_mag_e4: min_mag_e4 };
    NmsStatus::Ok
}

/// Feeds one CSV line of the observer stream. The header line and blank
/// lines are accepted and ignored.
///
/// # Safety
/// `engine` must be a live handle and `line` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn nms_engine_push_line(engine: *mut NmsEngine, line: *const c_char) -> NmsStatus {
    let Some(engine) = engine.as_mut() else { return fail(NmsStatus::NullPointer, "engine is null") };
    if line.is_null() {
        return fail(NmsStatus::NullPointer, "line is null");
    }
    let Ok(text) = CStr::from_ptr(line).to_str() else { return fail(NmsStatus::InvalidUtf8, "line is not UTF-8") };
    guard(|| {
        let State::Running(eng) = &mut engine.state else {
            return fail(NmsStatus::WrongState, "stream already finished");
        };
        let text = text.trim_end_matches(['\r', '\n']);
        if text.is_empty() || text == CSV_HEADER {
            return NmsStatus::Ok;
        }
        let ev = match parse_record(text) {
            Ok(ev) => ev,
            Err(e) => return fail(NmsStatus::Parse, e.to_string()),
        };
        match eng.process(&ev) {
            Ok(()) => NmsStatus::Ok,
            Err(e @ nms_disloc::engine::EngineError::OutOfOrder { .. }) => fail(NmsStatus::OutOfOrder, e.to_string()),
            Err(e) => fail(NmsStatus::Data, e.to_string()),
        }
    })
}

/// Closes the stream. Segments still open are truncated at `stream_end_us`,
/// or at the last event for [`NMS_END_AT_LAST_EVENT`].
///
/// # Safety
/// `engine` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn nms_engine_finish(engine: *mut NmsEngine, stream_end_us: u64) -> NmsStatus {
    let Some(engine) = engine.as_mut() else { return fail(NmsStatus::NullPointer, "engine is null") };
    guard(|| match std::mem::replace(&mut engine.state, State::Empty) {
        State::Running(eng) => {
            let end = (stream_end_us != NMS_END_AT_LAST_EVENT).then_some(TimeUs(stream_end_us));
            engine.state = State::Finished(eng.finish(end));
            NmsStatus::Ok
        }
        other => {
            engine.state = other;
            fail(NmsStatus::WrongState, "stream already finished")
        }
    })
}

/// # Safety
/// `engine` must be null or a live handle that outlives `'a`.
unsafe fn finished<'a>(engine: *const NmsEngine) -> Result<(&'a Analysis, Thresholds), NmsStatus> {
    let Some(engine) = engine.as_ref() else { return Err(fail(NmsStatus::NullPointer, "engine is null")) };
    match &engine.state {
        State::Finished(a) => Ok((a, engine.thresholds)),
        _ => Err(fail(NmsStatus::WrongState, "stream not finished")),
    }
}

/// Writes the number of segments found.
///
/// # Safety
/// `engine` must be a live, finished handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nms_engine_segment_count(engine: *const NmsEngine, out: *mut usize) -> NmsStatus {
    if out.is_null() {
        return fail(NmsStatus::NullPointer, "out is null");
    }
    match finished(engine) {
        Ok((a, _)) => {
            *out = a.segments.len();
            NmsStatus::Ok
        }
        Err(s) => s,
    }
}

/// Copies segment `index` (ordered by symbol, then start time) into `out`.
///
/// # Safety
/// `engine` must be a live, finished handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nms_engine_segment(engine: *const NmsEngine, index: usize, out: *mut NmsSegment) -> NmsStatus {
    if out.is_null() {
        return fail(NmsStatus::NullPointer, "out is null");
    }
    let (a, thresholds) = match finished(engine) {
        Ok(v) => v,
        Err(s) => return s,
    };
    let Some(s) = a.segments.get(index) else {
        return fail(NmsStatus::OutOfRange, format!("segment {index} of {}", a.segments.len()));
    };
    let flags = classify(s, &thresholds);
    let mut seg = NmsSegment {
        side: match s.side {
            Side::Bid => 0,
            Side::Offer => 1,
        },
        direction: s.direction,
        truncated: s.truncated,
        actionable: flags.actionable,
        large: flags.large,
        start_us: s.start.0,
        end_us: s.end.0,
        min_dp_e4: s.min_dp.0,
        max_dp_e4: s.max_dp.0,
        min_mag_e4: s.min_mag.0,
        max_mag_e4: s.max_mag.0,
        ..NmsSegment::default()
    };
    for (dst, b) in seg.symbol.iter_mut().zip(s.symbol.as_str().bytes()) {
        *dst = b as c_char;
    }
    *out = seg;
    NmsStatus::Ok
}

/// Writes the stream-wide opportunity-cost totals.
///
/// # Safety
/// `engine` must be a live, finished handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nms_engine_roc_totals(engine: *const NmsEngine, out: *mut NmsRocTotals) -> NmsStatus {
    if out.is_null() {
        return fail(NmsStatus::NullPointer, "out is null");
    }
    let (a, _) = match finished(engine) {
        Ok(v) => v,
        Err(s) => return s,
    };
    let t = aggregate(&a.roc_records, &a.trades).total();
    *out = NmsRocTotals {
        trades: t.trades,
        differing_trades: t.differing_trades,
        sip_roc_e4: saturate(t.sip_roc),
        direct_roc_e4: saturate(t.direct_roc),
        net_roc_e4: saturate(t.net_roc()),
        total_roc_e4: saturate(t.total_roc()),
    };
    NmsStatus::Ok
}

fn saturate(v: i128) -> i64 {
    v.clamp(i64::MIN as i128, i64::MAX as i128) as i64
}

/// Returns a copy of the calling thread's most recent error message, or null
/// if there is none. Release it with [`nms_string_free`].
#[no_mangle]
pub extern "C" fn nms_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |s| s.clone().into_raw()))
}

/// Releases a string returned by this library; null is ignored.
///
/// # Safety
/// `s` must be null or a string from [`nms_last_error_message`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nms_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
