#ifndef COTNAV_H
#define COTNAV_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CotnavStatus {
  COTNAV_STATUS_OK = 0,
  COTNAV_STATUS_NULL_ARGUMENT = 1,
  COTNAV_STATUS_INVALID_ARGUMENT = 2,
  COTNAV_STATUS_PARSE = 3,
  COTNAV_STATUS_VALIDATION = 4,
  COTNAV_STATUS_UNREACHABLE = 5,
  COTNAV_STATUS_NUMERIC = 6,
  COTNAV_STATUS_INTERNAL = 7,
} CotnavStatus;

/**
 * Opaque trained-policy handle.
 */
typedef struct CotnavPolicy CotnavPolicy;

/**
 * Opaque scene handle.
 */
typedef struct CotnavScene CotnavScene;

/**
 * One scored episode. `success` is 0 or 1.
 */
typedef struct CotnavEpisodeInput {
  uint8_t success;
  double shortest_path_m;
  double agent_path_m;
  double start_distance_m;
  double final_distance_m;
} CotnavEpisodeInput;

typedef struct CotnavMetrics {
  size_t n;
  double sr;
  double spl;
  double soft_spl;
} CotnavMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next library call on the same thread.
 */
const char *cotnav_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cotnav_version(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void cotnav_string_free(char *s);

/**
 * Generates a scene with the built-in vocabulary and priors.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for a handle.
 */
enum CotnavStatus cotnav_scene_generate(uint64_t seed,
                                        uint32_t width,
                                        uint32_t height,
                                        uint32_t rooms,
                                        struct CotnavScene **out);

/**
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum CotnavStatus cotnav_scene_from_json(const char *json, struct CotnavScene **out);

/**
 * Serializes a scene; free the result with `cotnav_string_free`.
 *
 * # Safety
 * `scene` must be a live handle; `out` must be writable.
 */
enum CotnavStatus cotnav_scene_to_json(const struct CotnavScene *scene, char **out);

/**
 * # Safety
 * `scene` must be a live handle; `width` and `height` must be writable.
 */
enum CotnavStatus cotnav_scene_size(const struct CotnavScene *scene,
                                    uint32_t *width,
                                    uint32_t *height);

/**
 * Shortest 4-connected path length in meters from `(x, y)` to any floor
 * cell within `radius` hops of a `category` instance.
 *
 * # Safety
 * `scene` must be a live handle, `category` a NUL-terminated string and
 * `out` writable.
 */
enum CotnavStatus cotnav_scene_geodesic_distance(const struct CotnavScene *scene,
                                                 int32_t x,
                                                 int32_t y,
                                                 const char *category,
                                                 uint32_t radius,
                                                 double *out);

/**
 * # Safety
 * `scene` must be null or a handle not yet freed.
 */
void cotnav_scene_free(struct CotnavScene *scene);

/**
 * Sigmoid sample weight for a confidence `c` in [0, 1]; `alpha` must be
 * positive.
 *
 * # Safety
 * `out` must be writable.
 */
enum CotnavStatus cotnav_adaptive_weight(double c, double alpha, double beta, double *out);

/**
 * Success rate, SPL and SoftSPL over `n` episodes.
 *
 * # Safety
 * `episodes` must point to `n` readable entries; `out` must be writable.
 */
enum CotnavStatus cotnav_metrics(const struct CotnavEpisodeInput *episodes,
                                 size_t n,
                                 struct CotnavMetrics *out);

/**
 * Loads a trained policy from its JSON artifact.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum CotnavStatus cotnav_policy_load(const char *json, struct CotnavPolicy **out);

/**
 * # Safety
 * `policy` must be a live handle; `out` must be writable.
 */
enum CotnavStatus cotnav_policy_feature_dim(const struct CotnavPolicy *policy, size_t *out);

/**
 * Greedy action ordinal for a feature vector (0 forward, 1 left, 2 right,
 * 3 look up, 4 look down, 5 stop). When `probs` is non-null it receives
 * the six action probabilities.
 *
 * # Safety
 * `features` must point to `len` readable values; `probs` must be null or
 * point to six writable values; `action` must be writable.
 */
enum CotnavStatus cotnav_policy_predict(const struct CotnavPolicy *policy,
                                        const double *features,
                                        size_t len,
                                        uint32_t *action,
                                        double *probs);

/**
 * # Safety
 * `policy` must be null or a handle not yet freed.
 */
void cotnav_policy_free(struct CotnavPolicy *policy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COTNAV_H */
