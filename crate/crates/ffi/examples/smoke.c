/* Minimal consumer of the C ABI: synthesize one record per class, take its
 * S-Transform amplitude and render it. Exits non-zero on any failure. */
#include <math.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "pqd.h"

static int check(PqdStatus s, const char *what) {
    if (s != PQD_STATUS_OK) {
        const char *msg = pqd_last_error_message();
        fprintf(stderr, "%s failed with %d: %s\n", what, (int)s, msg ? msg : "(no message)");
        return 1;
    }
    return 0;
}

int main(int argc, char **argv) {
    const char *png = argc > 1 ? argv[1] : "smoke.png";
    size_t n = pqd_record_len();
    double *x = malloc(n * sizeof *x);
    size_t written = 0;
    printf("pqd %s, %zu classes, %zu samples per record\n", pqd_version(), pqd_class_count(), n);

    for (size_t c = 0; c < pqd_class_count(); c++) {
        if (check(pqd_synthesize(c, 0, 42, NAN, x, n, &written), "pqd_synthesize")) return 1;
        if (written != n) return 1;
    }

    size_t rows = 0, cols = 0;
    if (pqd_st_amplitude(x, n, 3200.0, NULL, 0, &rows, &cols) != PQD_STATUS_BUFFER_TOO_SMALL) return 1;
    double *a = malloc(rows * cols * sizeof *a);
    if (check(pqd_st_amplitude(x, n, 3200.0, a, rows * cols, &rows, &cols), "pqd_st_amplitude")) return 1;
    printf("amplitude %zux%zu, DC row %.6f\n", rows, cols, a[0]);

    if (check(pqd_render_png(x, n, 3200.0, 32, png), "pqd_render_png")) return 1;

    PqdModel *m = NULL;
    if (pqd_model_load("/nonexistent/checkpoint", &m) == PQD_STATUS_OK || m != NULL) return 1;
    if (pqd_last_error_message() == NULL) return 1;
    pqd_model_free(NULL);

    free(a);
    free(x);
    printf("ok %s\n", pqd_class_label(17));
    return 0;
}
