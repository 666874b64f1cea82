#include <math.h>
#include <stdio.h>
#include <string.h>

#include "sense_forge.h"

#define CHECK(cond)                                              \
  do {                                                           \
    if (!(cond)) {                                               \
      fprintf(stderr, "%s:%d: check failed: %s\n", __FILE__,    \
              __LINE__, #cond);                                  \
      return 1;                                                  \
    }                                                            \
  } while (0)

int main(void) {
  SfModel *model = NULL;
  CHECK(sf_model_new("{\"n_paths\": 16, \"t_end\": 0.1, \"dt\": 0.01}", &model) == SF_STATUS_OK);
  CHECK(sf_model_state_dim(model) == 1);

  double x = 1.0, a = 0.0;
  CHECK(sf_model_spurious_drift(model, &x, 1, &a, 1) == SF_STATUS_OK);
  CHECK(fabs(a - 0.25) < 1e-12);

  SfEnsemble *ens = NULL;
  CHECK(sf_simulate(model, &ens) == SF_STATUS_OK);
  CHECK(sf_ensemble_n_paths(ens) == 16);
  double fin[16];
  CHECK(sf_ensemble_final(ens, 0, fin, 16) == SF_STATUS_OK);
  CHECK(sf_ensemble_final(ens, 0, fin, 4) == SF_STATUS_BUFFER_TOO_SMALL);
  char *msg = sf_last_error_message();
  CHECK(msg != NULL && strstr(msg, "buffer") != NULL);
  sf_string_free(msg);

  SfChart *chart = NULL;
  CHECK(sf_chart_build(model, &chart) == SF_STATUS_OK);
  double z = 0.0, back = 0.0, y = 2.5;
  CHECK(sf_chart_forward(chart, &y, 1, &z, 1) == SF_STATUS_OK);
  CHECK(sf_chart_inverse(chart, &z, 1, &back, 1) == SF_STATUS_OK);
  CHECK(fabs(back - y) < 1e-9);

  SfModel *bad = NULL;
  CHECK(sf_model_new("{\"alpha\": 2}", &bad) == SF_STATUS_CONFIG);
  CHECK(bad == NULL);

  sf_chart_free(chart);
  sf_ensemble_free(ens);
  sf_model_free(model);
  printf("ok %s\n", sf_version());
  return 0;
}
