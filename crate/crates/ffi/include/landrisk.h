#ifndef LANDRISK_H
#define LANDRISK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum LrStatus {
  LR_STATUS_OK = 0,
  LR_STATUS_NULL_POINTER = 1,
  LR_STATUS_INVALID_UTF8 = 2,
  LR_STATUS_IO = 3,
  LR_STATUS_FORMAT = 4,
  LR_STATUS_SCHEMA = 5,
  LR_STATUS_PARSE = 6,
  LR_STATUS_ARGUMENT = 7,
  LR_STATUS_LOOKUP = 8,
  LR_STATUS_CONSTRUCTION = 9,
  LR_STATUS_SHAPE = 10,
  LR_STATUS_DIVERGENCE = 11,
  LR_STATUS_RETRIEVAL = 12,
  LR_STATUS_JSON = 13,
  LR_STATUS_PANIC = 14,
} LrStatus;

/**
 * Node kinds accepted by [`lr_graph_count_kind`].
 */
typedef enum LrNodeKind {
  LR_NODE_KIND_EVENT = 0,
  LR_NODE_KIND_SOURCE = 1,
  LR_NODE_KIND_GAZETTEER_POINT = 2,
  LR_NODE_KIND_LANDSLIDE_PROFILE = 3,
} LrNodeKind;

/**
 * Records kept after parsing and region filtering.
 */
typedef struct LrCatalog LrCatalog;

/**
 * Knowledge graph with event embeddings.
 */
typedef struct LrGraph LrGraph;

/**
 * Result of a full pipeline run.
 */
typedef struct LrRun LrRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *lr_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *lr_version(void);

/**
 * Release a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void lr_string_free(char *s);

/**
 * Great-circle distance in km between two (lat, lon) points in degrees.
 */
double lr_haversine_km(double lat1, double lon1, double lat2, double lon2);

/**
 * Write the unit hashing embedding of `text` into `out[0..dim]`.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` must point to `dim`
 * writable doubles.
 */
enum LrStatus lr_embed(const char *text, size_t dim, double *out);

/**
 * Cosine similarity of two unit vectors of length `dim`.
 *
 * # Safety
 * `a` and `b` must each point to `dim` readable doubles; `out` to one
 * writable double.
 */
enum LrStatus lr_cosine(const double *a, const double *b, size_t dim, double *out);

/**
 * Parse a catalog and keep the records inside the bounding box.
 *
 * `format` is `"csv"`, `"json"` or null to infer from the extension.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
enum LrStatus lr_catalog_open(const char *path,
                              const char *format,
                              double lat_min,
                              double lat_max,
                              double lon_min,
                              double lon_max,
                              struct LrCatalog **out);

/**
 * Number of records kept. Zero for null.
 *
 * # Safety
 * `catalog` must be null or a live handle.
 */
size_t lr_catalog_len(const struct LrCatalog *catalog);

/**
 * Number of rows rejected while parsing. Zero for null.
 *
 * # Safety
 * `catalog` must be null or a live handle.
 */
size_t lr_catalog_rejected(const struct LrCatalog *catalog);

/**
 * Coordinates of record `index`.
 *
 * # Safety
 * `catalog` must be a live handle; `lat` and `lon` writable.
 */
enum LrStatus lr_catalog_coords(const struct LrCatalog *catalog,
                                size_t index,
                                double *lat,
                                double *lon);

/**
 * # Safety
 * `catalog` must be null or a handle not freed before.
 */
void lr_catalog_free(struct LrCatalog *catalog);

/**
 * Build the knowledge graph of a catalog with `dim`-dimensional event
 * embeddings. `near_km <= 0` disables NEAR edges.
 *
 * # Safety
 * `catalog` must be a live handle; `out` writable.
 */
enum LrStatus lr_graph_build(const struct LrCatalog *catalog,
                             size_t dim,
                             double near_km,
                             struct LrGraph **out);

/**
 * Total node count. Zero for null.
 *
 * # Safety
 * `graph` must be null or a live handle.
 */
size_t lr_graph_node_count(const struct LrGraph *graph);

/**
 * Total edge count. Zero for null.
 *
 * # Safety
 * `graph` must be null or a live handle.
 */
size_t lr_graph_edge_count(const struct LrGraph *graph);

/**
 * Nodes of one kind. Zero for null.
 *
 * # Safety
 * `graph` must be null or a live handle.
 */
size_t lr_graph_count_kind(const struct LrGraph *graph, enum LrNodeKind kind);

/**
 * Retrieve the `k` events most similar to `query` (plus one-hop context when
 * `expand` is nonzero) and return the result as a JSON string.
 *
 * # Safety
 * `graph` must be a live handle, `query` NUL-terminated, `json_out` writable.
 * Free the returned string with [`lr_string_free`].
 */
enum LrStatus lr_graph_query(const struct LrGraph *graph,
                             const char *query,
                             size_t k,
                             int32_t expand,
                             char **json_out);

/**
 * # Safety
 * `graph` must be null or a handle not freed before.
 */
void lr_graph_free(struct LrGraph *graph);

/**
 * Run the whole pipeline from a TOML or JSON config file.
 *
 * # Safety
 * `config_path` must be NUL-terminated; `out` writable.
 */
enum LrStatus lr_pipeline_run(const char *config_path, struct LrRun **out);

/**
 * Number of hotspots found. Zero for null.
 *
 * # Safety
 * `run` must be null or a live handle.
 */
size_t lr_run_hotspot_count(const struct LrRun *run);

/**
 * Run summary as a JSON string.
 *
 * # Safety
 * `run` must be a live handle; `json_out` writable. Free the returned string
 * with [`lr_string_free`].
 */
enum LrStatus lr_run_summary_json(const struct LrRun *run, char **json_out);

/**
 * Response plan as a JSON string.
 *
 * # Safety
 * Same contract as [`lr_run_summary_json`].
 */
enum LrStatus lr_run_response_plan_json(const struct LrRun *run, char **json_out);

/**
 * # Safety
 * `run` must be null or a handle not freed before.
 */
void lr_run_free(struct LrRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LANDRISK_H */
