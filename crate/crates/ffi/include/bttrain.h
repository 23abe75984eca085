#ifndef BTTRAIN_H
#define BTTRAIN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BttLayout {
  BTT_LAYOUT_PARTITION = 0,
  BTT_LAYOUT_RESHAPE = 1,
} BttLayout;

typedef enum BttStatus {
  BTT_STATUS_OK = 0,
  BTT_STATUS_NULL_POINTER = 1,
  BTT_STATUS_INVALID_ARGUMENT = 2,
  BTT_STATUS_SHAPE = 3,
  BTT_STATUS_MISSING_CACHE = 4,
  BTT_STATUS_IO = 5,
  BTT_STATUS_FORMAT = 6,
  BTT_STATUS_PANIC = 7,
} BttStatus;

/**
 * Opaque TT linear layer operating in `f32`.
 */
typedef struct BttTtLinear BttTtLinear;

/**
 * Costs of one scheme for one linear layer.
 */
typedef struct BttSchemeCost {
  uint64_t muls;
  uint64_t weight_mem;
  uint64_t act_mem;
} BttSchemeCost;

/**
 * One factor array to place. `co_access` < 0 means none; arrays with the
 * same non-negative key are read together and never share a group.
 */
typedef struct BttFactorArray {
  uint64_t bits;
  uint64_t rank;
  uint64_t depth;
  int64_t co_access;
} BttFactorArray;

typedef struct BttBramPlan {
  enum BttLayout layout;
  uint64_t width;
  uint64_t depth;
  size_t group_size;
  size_t group_count;
  uint64_t total_blocks;
  uint64_t min_blocks;
  double efficiency;
} BttBramPlan;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *btt_last_error(void);

/**
 * Fills `out[0..4]` with the MM, TTM, TT right-to-left and BTT costs of a
 * layer with `d` output and input modes, `2d+1` ranks and `k` tokens.
 *
 * # Safety
 * `out_modes` and `in_modes` must point to `d` values, `ranks` to `2d+1`
 * values and `out` to 4 writable records.
 */
enum BttStatus btt_cost_report(const size_t *out_modes,
                               const size_t *in_modes,
                               size_t d,
                               const size_t *ranks,
                               size_t k,
                               struct BttSchemeCost *out);

/**
 * Creates a seeded, randomly initialized layer.
 *
 * # Safety
 * `out_modes` and `in_modes` must point to `d` values, `ranks` to `2d+1`
 * values; `out` must be writable.
 */
enum BttStatus btt_tt_linear_new(const size_t *out_modes,
                                 const size_t *in_modes,
                                 size_t d,
                                 const size_t *ranks,
                                 bool bias,
                                 uint64_t seed,
                                 struct BttTtLinear **out);

/**
 * Releases a layer. NULL is ignored.
 *
 * # Safety
 * `layer` must come from [`btt_tt_linear_new`] and not be used afterwards.
 */
void btt_tt_linear_free(struct BttTtLinear *layer);

/**
 * Output width, or 0 for NULL.
 *
 * # Safety
 * `layer` must be NULL or a live handle.
 */
size_t btt_tt_linear_rows(const struct BttTtLinear *layer);

/**
 * Input width, or 0 for NULL.
 *
 * # Safety
 * `layer` must be NULL or a live handle.
 */
size_t btt_tt_linear_cols(const struct BttTtLinear *layer);

/**
 * Stored parameter count (cores and bias), or 0 for NULL.
 *
 * # Safety
 * `layer` must be NULL or a live handle.
 */
size_t btt_tt_linear_param_count(struct BttTtLinear *layer);

/**
 * Runs the two factor chains concurrently when `parallel` is true.
 *
 * # Safety
 * `layer` must be a live handle.
 */
enum BttStatus btt_tt_linear_set_parallel(struct BttTtLinear *layer, bool parallel);

/**
 * `y = W·x + b` for `x` of shape `cols × k`, writing `rows × k` into `y`.
 * With `train` set the input is cached for a following backward call.
 *
 * # Safety
 * `layer` must be a live handle, `x` must hold `cols·k` values and `y`
 * must have room for `rows·k`.
 */
enum BttStatus btt_tt_linear_forward(struct BttTtLinear *layer,
                                     const float *x,
                                     size_t k,
                                     bool train,
                                     float *y);

/**
 * Consumes the cached input, accumulates parameter gradients for
 * `dy` (`rows × k`) and writes `dx` (`cols × k`).
 *
 * # Safety
 * `layer` must be a live handle, `dy` must hold `rows·k` values and `dx`
 * must have room for `cols·k`.
 */
enum BttStatus btt_tt_linear_backward(struct BttTtLinear *layer,
                                      const float *dy,
                                      size_t k,
                                      float *dx);

/**
 * `θ ← θ − lr·θ′` on every core and the bias, then clears the gradients.
 *
 * # Safety
 * `layer` must be a live handle.
 */
enum BttStatus btt_tt_linear_sgd_step(struct BttTtLinear *layer, float lr);

/**
 * Best placement of `n` arrays into 36-Kbit blocks with groups of at most
 * `max_group` arrays.
 *
 * # Safety
 * `arrays` must point to `n` records and `out` must be writable.
 */
enum BttStatus btt_bram_optimize(const struct BttFactorArray *arrays,
                                 size_t n,
                                 size_t max_group,
                                 struct BttBramPlan *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BTTRAIN_H */
