#ifndef R3D_H
#define R3D_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum R3dStatus {
  R3D_STATUS_OK = 0,
  R3D_STATUS_NULL_POINTER = 1,
  R3D_STATUS_INVALID_ARGUMENT = 2,
  R3D_STATUS_IO = 3,
  R3D_STATUS_FORMAT = 4,
  R3D_STATUS_CHECKSUM_MISMATCH = 5,
  R3D_STATUS_DIMS_MISMATCH = 6,
  R3D_STATUS_SINGULAR_DESIGN = 7,
  R3D_STATUS_DEGENERATE_GEOMETRY = 8,
  R3D_STATUS_INVARIANT_VIOLATION = 9,
  R3D_STATUS_OUT_OF_BOUNDS = 10,
  R3D_STATUS_PANIC = 99,
} R3dStatus;

typedef struct R3dBaseMap R3dBaseMap;

typedef struct R3dOccupancy R3dOccupancy;

typedef struct R3dRadioMap R3dRadioMap;

typedef struct R3dSample R3dSample;

typedef struct R3dDims {
  size_t width;
  size_t depth;
  size_t height;
  double resolution_m;
} R3dDims;

typedef struct R3dBase2DParams {
  double a0;
  double b0;
  double wall_loss_db;
  double floor_db;
} R3dBase2DParams;

typedef struct R3dComposeConfig {
  // Ignored unless `has_noise_floor` is nonzero.
  double noise_floor_db;
  uint8_t has_noise_floor;
  double clamp_min_db;
  double clamp_max_db;
} R3dComposeConfig;

typedef struct R3dCoefficients {
  double a;
  double b;
  double c;
  double e;
} R3dCoefficients;

typedef struct R3dFitReport {
  struct R3dCoefficients phi;
  double residual_rmse_db;
  double condition_number;
} R3dFitReport;

// Voxel indices and power in dB.
typedef struct R3dTransmitter {
  size_t x;
  size_t y;
  size_t z;
  double power_db;
} R3dTransmitter;

// `psnr_db` is `+inf` when the volumes agree exactly.
typedef struct R3dMetrics {
  double rmse;
  double nmse;
  double ssim;
  double psnr_db;
} R3dMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after a success.
// Valid until the next call on the same thread.
const char *r3d_last_error_message(void);

struct R3dDims r3d_default_dims(size_t width, size_t depth, size_t height);

struct R3dBase2DParams r3d_base2d_default_params(void);

struct R3dComposeConfig r3d_compose_default_config(void);

// Generates a procedural city with the default layout for `dims`.
//
// # Safety
// `out` must be a valid pointer.
enum R3dStatus r3d_city_generate(struct R3dDims dims, uint64_t seed, struct R3dOccupancy **out);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum R3dStatus r3d_occupancy_read(const char *path, struct R3dOccupancy **out);

// # Safety
// `grid` must come from this library; `path` must be NUL-terminated.
enum R3dStatus r3d_occupancy_write(const struct R3dOccupancy *grid,
                                   const char *path,
                                   uint32_t *crc_out);

// # Safety
// `grid` must come from this library; `out` must be valid.
enum R3dStatus r3d_occupancy_dims(const struct R3dOccupancy *grid, struct R3dDims *out);

// Occupancy bytes (0 free, 1 occupied) in x-major order.
//
// # Safety
// `grid` must come from this library; `data` and `len` must be valid. The
// returned buffer lives as long as `grid`.
enum R3dStatus r3d_occupancy_data(const struct R3dOccupancy *grid,
                                  const uint8_t **data,
                                  size_t *len);

// # Safety
// `grid` must come from this library or be null.
void r3d_occupancy_free(struct R3dOccupancy *grid);

// Stacked 2D base prediction for a transmitter at `(tx_x, tx_y)`. A null
// `params` selects the defaults.
//
// # Safety
// `env` must come from this library; `params` may be null; `out` must be valid.
enum R3dStatus r3d_base_predict(const struct R3dOccupancy *env,
                                size_t tx_x,
                                size_t tx_y,
                                double power_db,
                                const struct R3dBase2DParams *params,
                                struct R3dBaseMap **out);

// # Safety
// `base` must come from this library or be null.
void r3d_base_free(struct R3dBaseMap *base);

// Fits the target model to `n` measurements. `positions` holds `3 * n`
// coordinates in meters (x, y, z per entry).
//
// # Safety
// `positions` and `values` must hold `3 * n` and `n` doubles; `base` must
// come from this library; `out` must be valid.
enum R3dStatus r3d_fit(const double *positions,
                       const double *values,
                       size_t n,
                       double tx_x,
                       double tx_y,
                       double tx_z,
                       const struct R3dBaseMap *base,
                       struct R3dFitReport *out);

// # Safety
// `out` must be valid.
enum R3dStatus r3d_polarization_gain_db(double d2, double d3, double *out);

// Single-transmitter map in dB.
//
// # Safety
// `env` and `base` must come from this library; `out` must be valid.
enum R3dStatus r3d_synth_single(const struct R3dOccupancy *env,
                                const struct R3dBaseMap *base,
                                struct R3dTransmitter tx,
                                struct R3dCoefficients phi,
                                double null_db,
                                struct R3dRadioMap **out);

// Linear-power composition of `count` dB maps. A null `cfg` selects the
// defaults.
//
// # Safety
// `maps` must hold `count` handles from this library; `cfg` may be null;
// `out` must be valid.
enum R3dStatus r3d_compose(const struct R3dRadioMap *const *maps,
                           size_t count,
                           const struct R3dComposeConfig *cfg,
                           struct R3dRadioMap **out);

// Wraps a copy of `len` dB values as a radio map.
//
// # Safety
// `data` must hold `len` floats; `out` must be valid.
enum R3dStatus r3d_radio_map_from_db(struct R3dDims dims,
                                     const float *data,
                                     size_t len,
                                     struct R3dRadioMap **out);

// # Safety
// `map` must come from this library; `data` and `len` must be valid. The
// returned buffer lives as long as `map`.
enum R3dStatus r3d_radio_map_data(const struct R3dRadioMap *map, const float **data, size_t *len);

// # Safety
// `map` must come from this library or be null.
void r3d_radio_map_free(struct R3dRadioMap *map);

// RMSE, NMSE, SSIM and PSNR of two normalized volumes (`R = 1`).
//
// # Safety
// `pred` and `truth` must each hold `width * depth * height` floats; `out`
// must be valid.
enum R3dStatus r3d_metrics(const float *pred,
                           const float *truth,
                           struct R3dDims dims,
                           size_t ssim_window,
                           struct R3dMetrics *out);

// Reads and validates a dataset sample.
//
// # Safety
// `path` must be NUL-terminated; `out` must be valid.
enum R3dStatus r3d_sample_read(const char *path, struct R3dSample **out);

// # Safety
// `sample` must come from this library; `path` must be NUL-terminated;
// `crc_out` may be null.
enum R3dStatus r3d_sample_write(const struct R3dSample *sample,
                                const char *path,
                                uint32_t *crc_out);

// # Safety
// `sample` must come from this library; `out` must be valid.
enum R3dStatus r3d_sample_dims(const struct R3dSample *sample, struct R3dDims *out);

// Number of feature channels (label excluded).
//
// # Safety
// `sample` must come from this library or be null.
size_t r3d_sample_channel_count(const struct R3dSample *sample);

// Feature channel `index`: its type code (as stored on disk) and values.
//
// # Safety
// `sample` must come from this library; the out pointers must be valid. The
// returned buffer lives as long as `sample`.
enum R3dStatus r3d_sample_channel(const struct R3dSample *sample,
                                  size_t index,
                                  uint8_t *kind,
                                  const float **data,
                                  size_t *len);

// # Safety
// As for [`r3d_sample_channel`].
enum R3dStatus r3d_sample_label(const struct R3dSample *sample, const float **data, size_t *len);

// # Safety
// `sample` must come from this library or be null.
void r3d_sample_free(struct R3dSample *sample);

// Code of the label channel in sample files.
uint8_t r3d_channel_code_label(void);

// Builds a dataset from a JSON config file. `workers = 0` uses every core.
//
// # Safety
// `config_path` and `out_dir` must be NUL-terminated; `sample_count` may be
// null.
enum R3dStatus r3d_build_dataset(const char *config_path,
                                 const char *out_dir,
                                 size_t workers,
                                 size_t *sample_count);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* R3D_H */
