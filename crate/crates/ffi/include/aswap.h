#ifndef ASWAP_H
#define ASWAP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AswapScheme {
  ASWAP_SCHEME_ZRAM = 0,
  ASWAP_SCHEME_ARIADNE = 1,
} AswapScheme;

typedef enum AswapScenario {
  ASWAP_SCENARIO_EHL = 0,
  ASWAP_SCENARIO_AL = 1,
} AswapScenario;

// Result codes.
typedef enum AswapStatus {
  ASWAP_STATUS_OK = 0,
  ASWAP_STATUS_NULL_ARGUMENT = 1,
  ASWAP_STATUS_INVALID_ARGUMENT = 2,
  ASWAP_STATUS_IO = 3,
  ASWAP_STATUS_TRACE = 4,
  ASWAP_STATUS_CONFIG = 5,
  ASWAP_STATUS_ENGINE = 6,
  ASWAP_STATUS_CODEC = 7,
  // The output buffer is too small; the required length was written.
  ASWAP_STATUS_BUFFER_TOO_SMALL = 8,
  ASWAP_STATUS_PANIC = 9,
} AswapStatus;

// A replay engine together with the id of the last trace it ran.
typedef struct AswapEngine AswapEngine;

// A decoded trace.
typedef struct AswapTrace AswapTrace;

// Replay configuration. Chunk sizes are in bytes; `swap_bytes == 0` means
// an unbounded swap device.
typedef struct AswapConfig {
  enum AswapScheme scheme;
  enum AswapScenario scenario;
  uint32_t hot_chunk;
  uint32_t warm_chunk;
  uint32_t cold_chunk;
  uint64_t mem_bytes;
  uint64_t zpool_bytes;
  uint64_t swap_bytes;
  uint32_t buffer_pages;
} AswapConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Valid until
// the next call into the library on this thread.
const char *aswap_last_error(void);

// Releases a string returned by the library.
void aswap_string_free(char *s);

// Default configuration for a scheme: 1K-2K-16K, 256 MiB memory, 96 MiB
// zpool, unbounded swap.
struct AswapConfig aswap_config_default(enum AswapScheme scheme);

// Generates a trace from a JSON generator spec (missing fields take
// defaults; `"{}"` is valid).
enum AswapStatus aswap_trace_generate(const char *spec_json, struct AswapTrace **out);

// Reads a binary trace file.
enum AswapStatus aswap_trace_read(const char *path, struct AswapTrace **out);

// Writes a trace in the binary format.
enum AswapStatus aswap_trace_write(const struct AswapTrace *t, const char *path);

// Number of events, or 0 for a null handle.
size_t aswap_trace_len(const struct AswapTrace *t);

void aswap_trace_free(struct AswapTrace *t);

// Creates an engine. `cost_json` may be null for the default cost model.
enum AswapStatus aswap_engine_new(const struct AswapConfig *config,
                                  const char *cost_json,
                                  struct AswapEngine **out);

// Replays every event of `t`. Running further traces continues from the
// current state.
enum AswapStatus aswap_engine_run(struct AswapEngine *e, const struct AswapTrace *t);

// Checks page conservation; the violation is reported as the error message.
enum AswapStatus aswap_engine_check(const struct AswapEngine *e);

// Writes the report as a newly allocated JSON string.
enum AswapStatus aswap_engine_report_json(const struct AswapEngine *e, char **out);

void aswap_engine_free(struct AswapEngine *e);

// Compresses `input` with chunks of `chunk_bytes` into a self-describing
// byte stream. If `cap` is too small, the required size is written to
// `out_len` and `BufferTooSmall` is returned.
enum AswapStatus aswap_compress(const uint8_t *input,
                                size_t len,
                                uint32_t chunk_bytes,
                                uint8_t *out,
                                size_t cap,
                                size_t *out_len);

// Inverse of [`aswap_compress`].
enum AswapStatus aswap_decompress(const uint8_t *input,
                                  size_t len,
                                  uint8_t *out,
                                  size_t cap,
                                  size_t *out_len);

// Fraction of length-`n` windows of `stream` that are runs of consecutive
// values.
enum AswapStatus aswap_locality(const uint64_t *stream, size_t len, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ASWAP_H */
