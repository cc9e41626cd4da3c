#include <stdio.h>
#include "kgselect.h"

int main(int argc, char **argv) {
  if (argc != 3) return 2;
  KgsEngine *engine = NULL;
  KgsStatus s = kgs_engine_open(argv[1], &engine);
  if (s != KGS_OK) {
    fprintf(stderr, "%d %s\n", s, kgs_last_error());
    return 1;
  }
  char *json = NULL;
  s = kgs_engine_respond(engine, argv[2], &json);
  if (s != KGS_OK) {
    fprintf(stderr, "%d %s\n", s, kgs_last_error());
    kgs_engine_free(engine);
    return 1;
  }
  printf("%s\n", json);
  kgs_string_free(json);
  kgs_engine_free(engine);
  return 0;
}
