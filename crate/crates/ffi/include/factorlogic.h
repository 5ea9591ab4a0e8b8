#ifndef FACTORLOGIC_H
#define FACTORLOGIC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LfStatus {
  LF_STATUS_OK = 0,
  LF_STATUS_NULL_ARGUMENT = 1,
  LF_STATUS_INVALID_UTF8 = 2,
  LF_STATUS_PARSE = 3,
  LF_STATUS_IO = 4,
  LF_STATUS_LOGIC = 5,
  LF_STATUS_BUFFER_SIZE = 6,
  LF_STATUS_PANIC = 7,
} LfStatus;

/**
 * A parsed factor expression.
 */
typedef struct LfExpr LfExpr;

/**
 * An aligned OHLCV panel.
 */
typedef struct LfPanel LfPanel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * The last error on this thread, or null. Valid until the next call into
 * this library from the same thread.
 */
const char *lf_last_error_message(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, freed once.
 */
void lf_string_free(char *s);

/**
 * Loads a long-format CSV with columns date, symbol, open, high, low,
 * close, volume.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum LfStatus lf_panel_load_csv(const char *path, struct LfPanel **out);

/**
 * # Safety
 * `panel` must be null or a handle from [`lf_panel_load_csv`], freed once.
 */
void lf_panel_free(struct LfPanel *panel);

/**
 * # Safety
 * `panel` must be a live handle; the out pointers must be valid.
 */
enum LfStatus lf_panel_shape(const struct LfPanel *panel, size_t *n_dates, size_t *n_instruments);

/**
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum LfStatus lf_expr_parse(const char *text, struct LfExpr **out);

/**
 * # Safety
 * `expr` must be null or a handle from [`lf_expr_parse`], freed once.
 */
void lf_expr_free(struct LfExpr *expr);

/**
 * Canonical text of the expression.
 *
 * # Safety
 * `expr` must be a live handle and `out` a valid pointer.
 */
enum LfStatus lf_expr_unparse(const struct LfExpr *expr, char **out);

/**
 * Writes the factor values row-major (date, then instrument) into `values`,
 * which must hold exactly dates x instruments cells. Missing cells are NaN.
 *
 * # Safety
 * `values` must point to `len` writable doubles.
 */
enum LfStatus lf_eval(const struct LfPanel *panel,
                      const struct LfExpr *expr,
                      double *values,
                      size_t len);

/**
 * Compiles a structured logic (JSON with `C` and `B`) into its constraint
 * set, returned as a canonical record.
 *
 * # Safety
 * `logic_json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum LfStatus lf_logic_compile(const char *logic_json, char **out);

/**
 * Checks an expression against a constraint set. `ok` is set to 1 when it
 * passes, else 0. When `report` is non-null it receives the violations as
 * JSON.
 *
 * # Safety
 * `expr` must be a live handle, `gamma_json` a NUL-terminated string, `ok`
 * valid, and `report` null or valid.
 */
enum LfStatus lf_check(const struct LfExpr *expr, const char *gamma_json, int *ok, char **report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FACTORLOGIC_H */
