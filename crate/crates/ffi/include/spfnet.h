#ifndef SPFNET_H
#define SPFNET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes.
 */
typedef enum SpfnetStatus {
  SPFNET_STATUS_OK = 0,
  SPFNET_STATUS_NULL_POINTER = 1,
  SPFNET_STATUS_INVALID_ARGUMENT = 2,
  SPFNET_STATUS_SHAPE_MISMATCH = 3,
  SPFNET_STATUS_FORMAT = 4,
  SPFNET_STATUS_IO = 5,
  SPFNET_STATUS_CHECKPOINT_MISMATCH = 6,
  SPFNET_STATUS_INTERNAL = 7,
} SpfnetStatus;

/*
 Opaque model handle.
 */
typedef struct SpfnetModel SpfnetModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or NULL. Valid until the
 next call on the same thread.
 */
const char *spfnet_last_error(void);

/*
 Builds an untrained model. `variant` is "spfnet" or "spfnet-t"; `scale`
 one of 2, 4, 8, 16. A fresh model returns the bicubic upsampling.

 # Safety
 `variant` must be a NUL-terminated string and `out` writable.
 */
enum SpfnetStatus spfnet_model_new(const char *variant,
                                   uint32_t scale,
                                   uint64_t seed,
                                   struct SpfnetModel **out);

/*
 Loads a checkpoint file.

 # Safety
 `path` must be a NUL-terminated string and `out` writable.
 */
enum SpfnetStatus spfnet_model_load(const char *path, struct SpfnetModel **out);

/*
 Releases a handle; NULL is ignored.

 # Safety
 `model` must come from this library and not be used afterwards.
 */
void spfnet_model_free(struct SpfnetModel *model);

/*
 Upsampling factor of the model, 0 for NULL.

 # Safety
 `model` must be NULL or a live handle.
 */
uint32_t spfnet_model_scale(const struct SpfnetModel *model);

/*
 Number of scalar parameters, 0 for NULL.

 # Safety
 `model` must be NULL or a live handle.
 */
uint64_t spfnet_model_param_count(const struct SpfnetModel *model);

/*
 Super-resolves one sample. With `s` the model scale, `depth_lr` holds
 `h*w` values in centimetres; `rgb` and `normal` hold `3*(s*h)*(s*w)`;
 `semantic` and `out` hold `(s*h)*(s*w)`.

 # Safety
 All buffers must be valid for the stated lengths.
 */
enum SpfnetStatus spfnet_model_infer(const struct SpfnetModel *model,
                                     const float *depth_lr,
                                     size_t height,
                                     size_t width,
                                     const float *rgb,
                                     const float *normal,
                                     const float *semantic,
                                     float *out);

/*
 Reads a PFM file into a new buffer of `channels*height*width` floats,
 released with [`spfnet_buffer_free`].

 # Safety
 `path` must be a NUL-terminated string; the out pointers writable.
 */
enum SpfnetStatus spfnet_pfm_read(const char *path,
                                  size_t *channels,
                                  size_t *height,
                                  size_t *width,
                                  float **data);

/*
 Writes a 1- or 3-channel planar image as PFM.

 # Safety
 `data` must hold `channels*height*width` floats.
 */
enum SpfnetStatus spfnet_pfm_write(const char *path,
                                   const float *data,
                                   size_t channels,
                                   size_t height,
                                   size_t width);

/*
 Frees a buffer returned by [`spfnet_pfm_read`]; `len` is its element count.

 # Safety
 `data` and `len` must come from the same read call.
 */
void spfnet_buffer_free(float *data, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPFNET_H */
