#ifndef KGSELECT_H
#define KGSELECT_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum KgsStatus {
  KGS_OK = 0,
  KGS_NULL_POINTER = 1,
  KGS_INVALID_UTF8 = 2,
  KGS_CONFIG = 3,
  KGS_LOAD = 4,
  KGS_EMPTY_MESSAGE = 5,
  KGS_MESSAGE_TOO_LONG = 6,
  KGS_INTERNAL = 7,
  KGS_PANIC = 8,
} KgsStatus;

/* Opaque engine handle. */
typedef struct KgsEngine KgsEngine;

/* Loads the configuration and the graph, policy and generator it names.
 * Release the handle with kgs_engine_free. */
KgsStatus kgs_engine_open(const char *config_path, KgsEngine **out);

/* Releases an engine. Null is ignored. */
void kgs_engine_free(KgsEngine *engine);

/* Answers one message. *out_json receives the turn as a JSON object;
 * release it with kgs_string_free. */
KgsStatus kgs_engine_respond(const KgsEngine *engine, const char *message, char **out_json);

/* Writes the number of graph vertices to *out. */
KgsStatus kgs_engine_vertex_count(const KgsEngine *engine, uint64_t *out);

/* Releases a string returned by this library. Null is ignored. */
void kgs_string_free(char *s);

/* Message of the last failure on this thread, or null. Valid until the
 * next call into the library on the same thread. */
const char *kgs_last_error(void);

/* Library version. */
const char *kgs_version(void);

#ifdef __cplusplus
}
#endif

#endif /* KGSELECT_H */
