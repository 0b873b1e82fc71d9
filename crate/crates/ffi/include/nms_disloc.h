#ifndef NMS_DISLOC_H
#define NMS_DISLOC_H

/* Generated by cbindgen from crates/ffi; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Pass as `stream_end_us` to close open segments at the last event.
 */
#define NMS_END_AT_LAST_EVENT UINT64_MAX

/**
 * Result codes shared by every fallible function.
 */
typedef enum NmsStatus {
  NMS_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  NMS_STATUS_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  NMS_STATUS_INVALID_UTF8 = 2,
  /**
   * A line failed to parse or violated a record rule.
   */
  NMS_STATUS_PARSE = 3,
  /**
   * An event arrived with an earlier timestamp than its predecessor.
   */
  NMS_STATUS_OUT_OF_ORDER = 4,
  /**
   * The event was inconsistent with the current market state.
   */
  NMS_STATUS_DATA = 5,
  /**
   * The call needs a running engine but the stream was finished, or the
   * reverse.
   */
  NMS_STATUS_WRONG_STATE = 6,
  /**
   * An index argument was past the end.
   */
  NMS_STATUS_OUT_OF_RANGE = 7,
  /**
   * An internal panic was caught at the boundary.
   */
  NMS_STATUS_PANIC = 8,
} NmsStatus;

/**
 * Opaque engine handle.
 */
typedef struct NmsEngine NmsEngine;

/**
 * One dislocation segment. Prices are in units of 1/10000 USD and times
 * are microseconds since midnight of day zero.
 */
typedef struct NmsSegment {
  /**
   * Nul-terminated ticker.
   */
  char symbol[9];
  /**
   * 0 for bid, 1 for offer.
   */
  uint8_t side;
  /**
   * +1 when the SIP price is above the direct-feed price, -1 below.
   */
  int8_t direction;
  bool truncated;
  bool actionable;
  bool large;
  uint64_t start_us;
  uint64_t end_us;
  int64_t min_dp_e4;
  int64_t max_dp_e4;
  int64_t min_mag_e4;
  int64_t max_mag_e4;
} NmsSegment;

/**
 * Stream-wide realized opportunity cost, in units of 1/10000 USD.
 */
typedef struct NmsRocTotals {
  uint64_t trades;
  uint64_t differing_trades;
  /**
   * Sum of non-positive records.
   */
  int64_t sip_roc_e4;
  /**
   * Sum of non-negative records.
   */
  int64_t direct_roc_e4;
  int64_t net_roc_e4;
  int64_t total_roc_e4;
} NmsRocTotals;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates an engine. With `coalesce_us` set, only the last update
 * within each microsecond count. Free the handle with [`nms_engine_free`].
 */
struct NmsEngine *nms_engine_new(bool coalesce_us);

/**
 * Releases an engine; null is ignored.
 *
 * # Safety
 * `engine` must be null or a handle from [`nms_engine_new`] not yet freed.
 */
void nms_engine_free(struct NmsEngine *engine);

/**
 * Overrides the segment thresholds used for the `actionable` and `large`
 * flags. Defaults: 545 us and 100 (one cent).
 *
 * # Safety
 * `engine` must be a live handle.
 */
enum NmsStatus nms_engine_set_thresholds(struct NmsEngine *engine,
                                         uint64_t duration_us,
                                         int64_t min_mag_e4);

/**
 * Feeds one CSV line of the observer stream. The header line and blank
 * lines are accepted and ignored.
 *
 * # Safety
 * `engine` must be a live handle and `line` a nul-terminated string.
 */
enum NmsStatus nms_engine_push_line(struct NmsEngine *engine, const char *line);

/**
 * Closes the stream. Segments still open are truncated at `stream_end_us`,
 * or at the last event for [`NMS_END_AT_LAST_EVENT`].
 *
 * # Safety
 * `engine` must be a live handle.
 */
enum NmsStatus nms_engine_finish(struct NmsEngine *engine, uint64_t stream_end_us);

/**
 * Writes the number of segments found.
 *
 * # Safety
 * `engine` must be a live, finished handle and `out` writable.
 */
enum NmsStatus nms_engine_segment_count(const struct NmsEngine *engine, size_t *out);

/**
 * Copies segment `index` (ordered by symbol, then start time) into `out`.
 *
 * # Safety
 * `engine` must be a live, finished handle and `out` writable.
 */
enum NmsStatus nms_engine_segment(const struct NmsEngine *engine,
                                  size_t index,
                                  struct NmsSegment *out);

/**
 * Writes the stream-wide opportunity-cost totals.
 *
 * # Safety
 * `engine` must be a live, finished handle and `out` writable.
 */
enum NmsStatus nms_engine_roc_totals(const struct NmsEngine *engine, struct NmsRocTotals *out);

/**
 * Returns a copy of the calling thread's most recent error message, or null
 * if there is none. Release it with [`nms_string_free`].
 */
char *nms_last_error_message(void);

/**
 * Releases a string returned by this library; null is ignored.
 *
 * # Safety
 * `s` must be null or a string from [`nms_last_error_message`] not yet freed.
 */
void nms_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NMS_DISLOC_H */
