/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef PQD_H
#define PQD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum PqdStatus {
  PQD_STATUS_OK = 0,
  // A required pointer argument was null.
  PQD_STATUS_NULL_POINTER = 1,
  // An argument was out of range or malformed.
  PQD_STATUS_INVALID_ARGUMENT = 2,
  // The output buffer is too small; the required length was still written.
  PQD_STATUS_BUFFER_TOO_SMALL = 3,
  PQD_STATUS_IO = 4,
  // A file was read but its contents are not valid.
  PQD_STATUS_FORMAT = 5,
  PQD_STATUS_SHAPE = 6,
  PQD_STATUS_PANIC = 7,
} PqdStatus;

// A loaded classifier checkpoint.
typedef struct PqdModel PqdModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *pqd_version(void);

// Message describing the last failure on this thread, or null after a
// successful call. Valid until the next `pqd_*` call on the same thread.
const char *pqd_last_error_message(void);

// Number of disturbance classes.
size_t pqd_class_count(void);

// Static label (`"V1"`..`"V18"`) of class `index`, or null when out of range.
const char *pqd_class_label(size_t index);

// Samples in one record at the default time base.
size_t pqd_record_len(void);

// Synthesize record `record_index` of class `class_index` on the default
// time base, identical to the one `pqd generate` writes for the same seed.
// `snr_db` is NaN or +infinity for a noiseless record.
enum PqdStatus pqd_synthesize(size_t class_index,
                              uint64_t record_index,
                              uint64_t seed,
                              double snr_db,
                              double *out,
                              size_t out_len,
                              size_t *written);

// S-Transform amplitude of a record, zero-padded to the next power of two
// and cropped back to `n` columns. Writes a row-major `rows x cols` matrix
// with `rows = padded / 2 + 1` (row 0 is DC) and `cols = n`. Call with
// `out = NULL, out_len = 0` to query the shape first.
enum PqdStatus pqd_st_amplitude(const double *samples,
                                size_t n,
                                double sample_rate,
                                double *out,
                                size_t out_len,
                                size_t *rows,
                                size_t *cols);

// Render a record to a `px x px` jet-colormapped S-Transform PNG, the same
// image `pqd render` produces.
enum PqdStatus pqd_render_png(const double *samples,
                              size_t n,
                              double sample_rate,
                              size_t px,
                              const char *path);

// Load a checkpoint directory into a new handle stored in `*out`.
enum PqdStatus pqd_model_load(const char *dir, struct PqdModel **out);

// Release a handle from [`pqd_model_load`]. Null is ignored.
void pqd_model_free(struct PqdModel *model);

// Side length in pixels the model expects, or 0 for a null handle.
size_t pqd_model_input_px(const struct PqdModel *model);

// Number of model outputs, or 0 for a null handle.
size_t pqd_model_num_classes(const struct PqdModel *model);

// Label of output `index`, or null. Owned by the handle.
const char *pqd_model_class_label(const struct PqdModel *model, size_t index);

// Classify a PNG file. `probs` (optional, length `num_classes`) receives
// softmax confidences; `class_out` (optional) the arg-max index.
enum PqdStatus pqd_model_predict_png(const struct PqdModel *model,
                                     const char *path,
                                     double *probs,
                                     size_t probs_len,
                                     size_t *class_out);

// Classify interleaved 8-bit RGB pixels, row-major from the top row,
// `height * width * 3` bytes. Images of another size are resized.
enum PqdStatus pqd_model_predict_rgb(const struct PqdModel *model,
                                     const uint8_t *pixels,
                                     size_t height,
                                     size_t width,
                                     double *probs,
                                     size_t probs_len,
                                     size_t *class_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PQD_H */
