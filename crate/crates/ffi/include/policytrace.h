#ifndef POLICYTRACE_H
#define POLICYTRACE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes shared by every fallible entry point.
typedef enum PtStatus {
  PT_STATUS_OK = 0,
  PT_STATUS_NULL_ARGUMENT = 1,
  PT_STATUS_INVALID_UTF8 = 2,
  PT_STATUS_PARSE = 3,
  PT_STATUS_INVALID_ARGUMENT = 4,
  PT_STATUS_PANIC = 5,
} PtStatus;

// A parsed plan document.
typedef struct PtPlan PtPlan;

// A parsed, checked rule base.
typedef struct PtRuleBase PtRuleBase;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// The last error on this thread, or null. Valid until the next call into
// the library from this thread; do not free.
const char *pt_last_error(void);

// Library version as a static string; do not free.
const char *pt_version(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed already.
void pt_string_free(char *s);

// Parses a plan in the text format or its JSON mirror.
//
// # Safety
// `source` must be a NUL-terminated string and `out` a valid pointer.
enum PtStatus pt_plan_parse(const char *source, struct PtPlan **out);

// # Safety
// `plan` must come from [`pt_plan_parse`] and not have been freed. Null is ignored.
void pt_plan_free(struct PtPlan *plan);

// The plan as JSON; free with [`pt_string_free`].
//
// # Safety
// `plan` must be a live handle and `out` a valid pointer.
enum PtStatus pt_plan_to_json(const struct PtPlan *plan, char **out);

// Parses and checks a rule base. Diagnostics are reported one per line as
// `line:col: code: message`.
//
// # Safety
// `source` must be a NUL-terminated string and `out` a valid pointer.
enum PtStatus pt_rulebase_parse(const char *source, struct PtRuleBase **out);

// # Safety
// `base` must come from [`pt_rulebase_parse`] and not have been freed. Null is ignored.
void pt_rulebase_free(struct PtRuleBase *base);

// Number of rules, or 0 for a null handle.
//
// # Safety
// `base` must be null or a live handle.
size_t pt_rulebase_len(const struct PtRuleBase *base);

// Canonical text of the rule base; free with [`pt_string_free`].
//
// # Safety
// `base` must be a live handle and `out` a valid pointer.
enum PtStatus pt_rulebase_serialize(const struct PtRuleBase *base, char **out);

// Runs the engine on a fact given as JSON,
// `{"cpt": "...", "attributes": {"name": true, ...}}`, and returns the trace
// as JSON.
//
// # Safety
// `base` must be a live handle, `fact_json` NUL-terminated and `out` valid.
enum PtStatus pt_engine_run(const struct PtRuleBase *base, const char *fact_json, char **out);

// Like [`pt_engine_run`] but returns the reviewer-facing explanation, with
// the cited subsections quoted from `plan`.
//
// # Safety
// Handles must be live, `fact_json` NUL-terminated and `out` valid.
enum PtStatus pt_engine_explain(const struct PtRuleBase *base,
                                const struct PtPlan *plan,
                                const char *fact_json,
                                char **out);

// Softmax of `logits[0..n]` into `out[0..n]`.
//
// # Safety
// Both arrays must hold `n` doubles.
enum PtStatus pt_softmax(const double *logits, size_t n, double *out);

// Multiple-choice loss for `positive` over `logits[0..n]`.
//
// # Safety
// `logits` must hold `n` doubles and `out` be valid.
enum PtStatus pt_mc_loss(const double *logits, size_t n, size_t positive, double *out);

// Gradient of [`pt_mc_loss`] with respect to the logits, into `out[0..n]`.
//
// # Safety
// Both arrays must hold `n` doubles.
enum PtStatus pt_mc_loss_grad(const double *logits, size_t n, size_t positive, double *out);

// Cost for `n_cpts` at a flat price per 1,000 CPTs. Amounts are decimal
// strings such as `"3520"` or `"6.98"`; the result is JSON with amounts in
// cents, e.g. `{"per_1k_cpts":"$3,520.00","total_for_n":"$38,720.00",...}`.
//
// # Safety
// Strings must be NUL-terminated and `out` valid.
enum PtStatus pt_cost_estimate(const char *per_1k, const char *setup, int64_t n_cpts, char **out);

// Whole-dollar rendering of a decimal amount, e.g. `"38720"` → `"$38,720"`.
//
// # Safety
// `amount` must be NUL-terminated and `out` valid.
enum PtStatus pt_format_dollars(const char *amount, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POLICYTRACE_H */
