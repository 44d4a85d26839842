#include <stdio.h>
#include <string.h>
#include "annoselect.h"

#define CHECK(call)                                                        \
  do {                                                                     \
    AnnoStatus st_ = (call);                                               \
    if (st_ != ANNO_STATUS_OK) {                                           \
      char *msg_ = anno_last_error();                                      \
      fprintf(stderr, "%s failed: %d %s\n", #call, st_, msg_ ? msg_ : ""); \
      anno_string_free(msg_);                                              \
      return 1;                                                            \
    }                                                                      \
  } while (0)

int main(int argc, char **argv) {
  if (argc < 2) return 2;
  AnnoDataset *ds = NULL;
  CHECK(anno_dataset_open(argv[1], &ds));
  size_t order[4];
  CHECK(anno_sample_faft(ds, 4, 7, ANNO_METRIC_COSINE, order, 4));

  AnnoSession *s = NULL;
  CHECK(anno_session_create(ds, "activity", ANNO_METHOD_FAFT, 2, 7, "c-client", true, &s));
  anno_dataset_free(ds);
  size_t cur = 0, count = 0;
  bool has = false;
  CHECK(anno_session_current(s, &cur, &has));
  if (!has || cur != order[0]) return 3;
  CHECK(anno_session_assign(s, cur, "c1", &count));
  if (count != 1) return 4;

  if (anno_session_assign(s, cur, "nope", NULL) != ANNO_STATUS_SESSION) return 5;
  char *err = anno_last_error();
  if (err == NULL || strstr(err, "nope") == NULL) return 6;
  anno_string_free(err);

  char *csv = NULL;
  CHECK(anno_session_export_csv(s, &csv));
  printf("%s", csv);
  anno_string_free(csv);
  anno_session_free(s);

  double p[2] = {1.0, 0.0}, q[2] = {0.5, 0.5}, h = 0.0;
  CHECK(anno_hellinger(p, q, 2, &h));
  printf("hellinger %.6f\n", h);
  return 0;
}
