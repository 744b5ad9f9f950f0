#include <math.h>
#include <stdio.h>
#include <string.h>

#include "policytrace.h"

#define CHECK(cond)                                                      \
  do {                                                                   \
    if (!(cond)) {                                                       \
      fprintf(stderr, "%s:%d: %s (%s)\n", __FILE__, __LINE__, #cond,     \
              pt_last_error() ? pt_last_error() : "no error");           \
      return 1;                                                          \
    }                                                                    \
  } while (0)

int main(void) {
  const char *rules =
      "rule pregnancy_maternity_services {\n"
      "  when is_pregnancy=true and is_maternity=true\n"
      "  then covered \"maternity\" cite maternity-1\n"
      "}\n";
  PtRuleBase *base = NULL;
  CHECK(pt_rulebase_parse(rules, &base) == PT_STATUS_OK);
  CHECK(pt_rulebase_len(base) == 1);

  char *trace = NULL;
  CHECK(pt_engine_run(base,
                      "{\"cpt\":\"S9212\",\"attributes\":{\"is_pregnancy\":true,"
                      "\"is_maternity\":true}}",
                      &trace) == PT_STATUS_OK);
  CHECK(strstr(trace, "\"final_status\":\"covered\"") != NULL);
  pt_string_free(trace);

  PtRuleBase *bad = NULL;
  CHECK(pt_rulebase_parse("rule x { when }", &bad) == PT_STATUS_PARSE);
  CHECK(bad == NULL);
  CHECK(pt_last_error() != NULL);

  double logits[3] = {1.0, 1.0, 1.0};
  double probs[3];
  CHECK(pt_softmax(logits, 3, probs) == PT_STATUS_OK);
  CHECK(fabs(probs[0] + probs[1] + probs[2] - 1.0) < 1e-12);
  double loss = 0.0;
  CHECK(pt_mc_loss(logits, 3, 0, &loss) == PT_STATUS_OK);
  CHECK(fabs(loss - log(3.0)) < 1e-12);

  char *dollars = NULL;
  CHECK(pt_format_dollars("38720", &dollars) == PT_STATUS_OK);
  CHECK(strcmp(dollars, "$38,720") == 0);
  pt_string_free(dollars);

  pt_rulebase_free(base);
  printf("ok\n");
  return 0;
}
