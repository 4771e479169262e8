#ifndef ECHOAUDIT_H
#define ECHOAUDIT_H

/* This file is generated by cbindgen from echoaudit-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes for every fallible call.
typedef enum EaStatus {
  EA_STATUS_OK = 0,
  // A required pointer argument was NULL.
  EA_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  EA_STATUS_INVALID_UTF8 = 2,
  // Input failed to parse (corpus, spec JSON, store line).
  EA_STATUS_PARSE_ERROR = 3,
  // Input parsed but violated an invariant.
  EA_STATUS_VALIDATION_ERROR = 4,
  EA_STATUS_IO_ERROR = 5,
  EA_STATUS_UNKNOWN_TOPIC = 6,
  EA_STATUS_SIMULATION_ERROR = 7,
  // Index or enum value out of range.
  EA_STATUS_OUT_OF_RANGE = 8,
} EaStatus;

// The five-step opinion scale; values mirror the scale's signed codes.
typedef enum EaOpinionLevel {
  EA_OPINION_LEVEL_STRONGLY_LIBERAL = -2,
  EA_OPINION_LEVEL_SLIGHTLY_LIBERAL = -1,
  EA_OPINION_LEVEL_NEUTRAL = 0,
  EA_OPINION_LEVEL_SLIGHTLY_CONSERVATIVE = 1,
  EA_OPINION_LEVEL_STRONGLY_CONSERVATIVE = 2,
} EaOpinionLevel;

// Change criterion selector for analysis.
typedef enum EaCriterion {
  EA_CRITERION_ANY_LEVEL_CHANGE = 0,
  EA_CRITERION_POLE_FLIP = 1,
} EaCriterion;

// Opaque corpus handle.
typedef struct EaCorpus EaCorpus;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread; empty when the
// last call succeeded. The pointer stays valid until the next
// echoaudit call on the same thread.
const char *ea_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *ea_version(void);

// Frees a string returned by this library. NULL is a no-op.
//
// # Safety
// `text` must be a pointer previously returned by an echoaudit function
// and not yet freed.
void ea_string_free(char *text);

// Loads the corpus bundled with the library.
//
// # Safety
// `out` must be a valid pointer to an `EaCorpus*` slot.
enum EaStatus ea_corpus_load_default(struct EaCorpus **out);

// Loads and validates a corpus file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` a valid `EaCorpus*` slot.
enum EaStatus ea_corpus_load_file(const char *path, struct EaCorpus **out);

// Frees a corpus handle. NULL is a no-op.
//
// # Safety
// `corpus` must come from a corpus-loading function and not be freed twice.
void ea_corpus_free(struct EaCorpus *corpus);

// Number of topics in the corpus; 0 for NULL.
//
// # Safety
// `corpus` must be a live corpus handle or NULL.
uintptr_t ea_corpus_topic_count(const struct EaCorpus *corpus);

// Writes the id of the topic at `index` to `out`.
//
// # Safety
// `corpus` must be a live corpus handle; `out` a valid `char*` slot.
enum EaStatus ea_corpus_topic_id(const struct EaCorpus *corpus, uintptr_t index, char **out);

// Renders the persona system prompt for (topic, level, agent name).
//
// # Safety
// `corpus` must be a live corpus handle; `topic_id` and `agent_name`
// NUL-terminated strings; `out` a valid `char*` slot.
enum EaStatus ea_render_system_prompt(const struct EaCorpus *corpus,
                                      const char *topic_id,
                                      enum EaOpinionLevel level,
                                      const char *agent_name,
                                      char **out);

// Runs one simulation against the deterministic stance-mock backends and
// writes the transcript as a JSON string to `out`.
//
// `spec_json` example:
// `{"topic_id":"healthcare","pole":"conservative","n_messages":20,
//   "seed":42,"flip_probability":0.05,"flip_target":"strongly_liberal"}`
//
// # Safety
// `corpus` must be a live corpus handle; `spec_json` a NUL-terminated
// string; `out` a valid `char*` slot.
enum EaStatus ea_run_mock_simulation(const struct EaCorpus *corpus,
                                     const char *spec_json,
                                     char **out);

// Reads a result store and writes the four CSV reports (fig1..fig4.csv)
// into `out_dir`.
//
// # Safety
// `store_path` and `out_dir` must be NUL-terminated strings.
enum EaStatus ea_analyze_store(const char *store_path,
                               const char *out_dir,
                               enum EaCriterion criterion,
                               bool include_degraded,
                               bool include_internal);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ECHOAUDIT_H */
